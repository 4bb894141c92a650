#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "ppgkit/errors.hpp"
#include "ppgkit/pretext.hpp"

using namespace ppg;

namespace {

TemporalEncoderSpec toy_espec() {
    TemporalEncoderSpec es;
    es.input_channels = 2;
    es.widths = {4, 4, 4};
    es.kernels = {3, 5, 7};
    es.embed_dim = 4;
    return es;
}

MlpDecoderSpec toy_dspec() {
    MlpDecoderSpec ds;
    ds.embed_dim = 4;
    ds.hidden = 8;
    ds.out_rows = 2;
    ds.out_cols = 4;
    return ds;
}

// Random 2x20 windows partitioned at gamma 0.4: past 8, anchor 4, future 8.
std::vector<TemporalItem> toy_items(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<TemporalItem> items;
    for (int i = 0; i < n; ++i) {
        Mat w(2, 20);
        for (auto& v : w.v) v = d(rng);
        items.push_back(make_temporal_item(partition_paf(w, 0.4)));
    }
    return items;
}

std::vector<double> flat_params(const ParamStore& ps) {
    std::vector<double> out;
    for (const auto& [name, g] : ps.groups())
        for (const auto& t : g.params) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

}  // namespace

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("seeded shuffle is a deterministic permutation") {
    std::vector<int> a(10), b(10);
    std::iota(a.begin(), a.end(), 0);
    std::iota(b.begin(), b.end(), 0);
    std::mt19937_64 r1(5), r2(5), r3(6);
    seeded_shuffle(a, r1);
    seeded_shuffle(b, r2);
    CHECK(a == b);

    std::vector<int> sorted(a);
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 10; ++i) CHECK(sorted[i] == i);

    std::vector<int> c(10);
    std::iota(c.begin(), c.end(), 0);
    seeded_shuffle(c, r3);
    CHECK(c != a);
}

TEST_CASE("temporal items copy segments and derive from the raw row") {
    Mat w(3, 20);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 20; ++c) w.at(r, c) = std::sin(0.3 * c + r);
    const PafPartition part = partition_paf(w, 0.4);
    const TemporalItem item = make_temporal_item(part);

    CHECK(item.past.cols == 8);
    CHECK(item.anchor.cols == 4);
    CHECK(item.future.cols == 8);
    CHECK(item.past.v == part.past.v);
    CHECK(item.anchor.v == part.anchor.v);

    std::vector<double> raw_past(part.past.row(0), part.past.row(0) + part.past.cols);
    const DerivativeStack want = derivatives(raw_past);
    CHECK(item.d_past.vpg == want.vpg);
    CHECK(item.d_past.apg == want.apg);
    CHECK(item.d_past.jpg == want.jpg);

    std::vector<double> raw_fut(part.future.row(0), part.future.row(0) + part.future.cols);
    CHECK(item.d_future.vpg == derivatives(raw_fut).vpg);
}

TEST_CASE("segment batches stack items in index order") {
    const auto items = toy_items(3, 2);
    const std::vector<int> idxs{2, 0};
    const SegmentBatch past = stack_segment(items, idxs, true);
    CHECK(past.x.shape() == std::vector<int>{2, 2, 8});
    CHECK(past.vpg.shape() == std::vector<int>{2, 1, 8});
    CHECK(past.x.data()[0] == items[2].past.at(0, 0));
    CHECK(past.x.data()[2 * 8] == items[0].past.at(0, 0));
    CHECK(past.vpg.data()[0] == items[2].d_past.vpg[0]);

    const SegmentBatch fut = stack_segment(items, idxs, false);
    CHECK(fut.x.data()[0] == items[2].future.at(0, 0));

    const Tensor anchors = stack_anchor(items, idxs);
    CHECK(anchors.shape() == std::vector<int>{2, 8});
    CHECK(anchors.data()[0] == items[2].anchor.at(0, 0));
}

TEST_CASE("ctfga pretraining is seed-deterministic and loss stays finite") {
    const auto items = toy_items(8, 3);
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch_size = 4;
    cfg.epochs = 3;
    cfg.seed = 7;

    CtfgaModel m1(toy_espec(), toy_dspec(), 21);
    CtfgaModel m2(toy_espec(), toy_dspec(), 21);
    const TrainTrace t1 = ctfga_pretrain(m1, items, cfg);
    const TrainTrace t2 = ctfga_pretrain(m2, items, cfg);

    REQUIRE(t1.epoch_loss.size() == 3);
    CHECK(t1.epoch_acc.empty());
    for (double l : t1.epoch_loss) {
        CHECK(std::isfinite(l));
        CHECK(l >= 0.0);
    }
    CHECK(t1.epoch_loss == t2.epoch_loss);
    CHECK(flat_params(m1.ps) == flat_params(m2.ps));

    CtfgaModel m3(toy_espec(), toy_dspec(), 22);
    const TrainTrace t3 = ctfga_pretrain(m3, items, cfg);
    CHECK(t1.epoch_loss != t3.epoch_loss);

    CHECK_THROWS_AS(ctfga_pretrain(m1, {}, cfg), std::invalid_argument);
}

TEST_CASE("zeroed decoder on zero anchors trains at zero loss") {
    auto items = toy_items(4, 5);
    for (auto& it : items)
        for (auto& v : it.anchor.v) v = 0.0;

    CtfgaModel m(toy_espec(), toy_dspec(), 9, true);
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    const TrainTrace t = ctfga_pretrain(m, items, cfg);
    for (double l : t.epoch_loss) CHECK(l == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("frozen groups survive a ctfga run untouched") {
    const auto items = toy_items(6, 11);
    CtfgaModel m(toy_espec(), toy_dspec(), 33);
    m.ps.set_trainable("encoder", false);
    const auto enc_before = flat_params(m.ps);

    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.batch_size = 3;
    cfg.epochs = 2;
    ctfga_pretrain(m, items, cfg);

    // Decoder moved, encoder group did not.
    bool enc_same = true;
    std::size_t off = 0;
    for (const auto& [name, g] : m.ps.groups()) {
        for (const auto& t : g.params) {
            for (double v : t.data()) {
                if (name == "encoder" && v != enc_before[off]) enc_same = false;
                ++off;
            }
        }
    }
    CHECK(enc_same);
}

TEST_CASE("visible pixel gather matches the patch set") {
    Spectrogram s;
    s.frames = 8;
    s.bins = 8;
    s.grid = Mat(8, 8);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (auto& v : s.grid.v) v = d(rng);
    const auto ps = patchify_and_mask(s, 4, 4, 0.5, 17);

    const Tensor vis = visible_pixels(ps);
    REQUIRE(vis.shape() ==
            std::vector<int>{1, static_cast<int>(ps.visible_idx.size()), 16});
    for (std::size_t i = 0; i < ps.visible_idx.size(); ++i)
        for (int j = 0; j < 16; ++j)
            CHECK(vis.data()[i * 16 + j] == ps.patches[ps.visible_idx[i]].values[j]);
}

TEST_CASE("mae pretraining runs deterministically on toy patch sets") {
    SpecModelSpec spec;
    spec.embed_dim = 8;
    spec.enc_depth = 1;
    spec.dec_depth = 1;
    spec.heads = 2;
    spec.mlp_hidden = 12;

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> d(0.0, 2.0);
    std::vector<SpectrogramPatchSet> items;
    for (int i = 0; i < 6; ++i) {
        Spectrogram s;
        s.frames = 8;
        s.bins = 7;
        s.grid = Mat(8, 7);
        for (auto& v : s.grid.v) v = d(rng);
        items.push_back(patchify_and_mask(s, 4, 4, 0.5, 100 + i));
    }

    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch_size = 2;
    cfg.epochs = 3;
    MaeModel m1(spec, 41);
    MaeModel m2(spec, 41);
    const TrainTrace t1 = mae_pretrain(m1, items, cfg);
    const TrainTrace t2 = mae_pretrain(m2, items, cfg);
    REQUIRE(t1.epoch_loss.size() == 3);
    for (double l : t1.epoch_loss) CHECK(std::isfinite(l));
    CHECK(t1.epoch_loss == t2.epoch_loss);
    CHECK(flat_params(m1.ps) == flat_params(m2.ps));

    // Zero targets and a zero pixel head keep the objective at zero.
    std::vector<SpectrogramPatchSet> zitems = items;
    for (auto& it : zitems)
        for (auto& p : it.patches) std::fill(p.values.begin(), p.values.end(), 0.0);
    MaeModel zm(spec, 41, true);
    const TrainTrace zt = mae_pretrain(zm, zitems, cfg);
    for (double l : zt.epoch_loss) CHECK(l == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("untrained order classifier sits at chance with ln2 loss") {
    NbtsfSpec ns;
    ns.h_dim = 4;  // concatenated pair of E=2 embeddings
    ns.z_dim = 3;
    ns.l = 2;
    ns.iterations = 1;
    TwrgModel model(ns, 8, 51);

    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> hv(6 * 4), zv(6 * 3);
    for (auto& v : hv) v = d(rng);
    for (auto& v : zv) v = d(rng);
    FwdCtx ev;
    Tensor lg = model.logits(Tensor::from({6, 4}, hv), Tensor::from({6, 3}, zv), ev);
    REQUIRE(lg.shape() == std::vector<int>{6, 2});
    for (double v : lg.data()) CHECK(v == 0.0);  // zero-initialized head

    const Tensor ce = softmax_cross_entropy(lg, {0, 1, 0, 1, 0, 1});
    CHECK(std::abs(ce.item() - std::log(2.0)) <= 0.1);

    // A near-zero learning rate leaves it at chance through a short run.
    std::vector<TwrgItem> items;
    for (int i = 0; i < 16; ++i) {
        TwrgItem it;
        it.h_a = {d(rng), d(rng)};
        it.h_c = {d(rng), d(rng)};
        it.z = {d(rng), d(rng), d(rng)};
        items.push_back(it);
    }
    TrainConfig cfg;
    cfg.lr = 1e-12;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    const TrainTrace t = twrg_pretrain(model, items, cfg);
    REQUIRE(t.epoch_acc.size() == 2);
    CHECK(std::abs(t.epoch_loss.back() - std::log(2.0)) <= 0.1);
    CHECK(std::abs(t.epoch_acc.back() - 0.5) <= 0.25);
}

TEST_CASE("order classifier learns separable embeddings") {
    NbtsfSpec ns;
    ns.h_dim = 4;
    ns.z_dim = 3;
    ns.l = 2;
    ns.iterations = 1;
    TwrgModel model(ns, 8, 61);

    std::mt19937_64 rng(9);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::vector<TwrgItem> items;
    for (int i = 0; i < 24; ++i) {
        TwrgItem it;
        it.h_a = {1.0 + noise(rng), noise(rng)};
        it.h_c = {noise(rng), 1.0 + noise(rng)};
        it.z = {noise(rng), noise(rng), noise(rng)};
        items.push_back(it);
    }

    TrainConfig cfg;
    cfg.lr = 0.05;
    cfg.batch_size = 8;
    cfg.epochs = 40;
    cfg.seed = 5;
    const TrainTrace t = twrg_pretrain(model, items, cfg);
    CHECK(t.epoch_acc.back() >= 0.9);
    CHECK(t.epoch_loss.back() < t.epoch_loss.front());

    TwrgItem bad;
    bad.h_a = {1.0};
    bad.h_c = {0.0};
    bad.z = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(twrg_pretrain(model, {bad}, cfg), std::invalid_argument);
}

TEST_CASE("non-finite training targets surface as a numeric error") {
    auto items = toy_items(4, 13);
    items[0].anchor.v[0] = std::numeric_limits<double>::infinity();

    CtfgaModel m(toy_espec(), toy_dspec(), 81);
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    CHECK_THROWS_WITH_AS(ctfga_pretrain(m, items, cfg),
                         "ctfga_pretrain: non-finite loss at epoch 0", NumericError);
}
