#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "ppgkit/models.hpp"
#include "ppgkit/nn.hpp"

using namespace ppg;

namespace {

constexpr double kTol = 1e-4;

Tensor randleaf(std::vector<int> shape, std::mt19937_64& rng, bool rg = true) {
    long n = 1;
    for (int d : shape) n *= d;
    std::uniform_real_distribution<double> dist(0.15, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng) * (sign(rng) ? 1.0 : -1.0);
    return Tensor::from(std::move(shape), std::move(v), rg);
}

Tensor wsum(const Tensor& t, std::mt19937_64& rng) {
    Tensor w = randleaf(t.shape(), rng, false);
    return sum_all(mul(t, w));
}

std::vector<Tensor> group_leaves(ParamStore& ps, const std::string& g) {
    if (!ps.has_group(g)) return {};  // relu/dropout/softmax register nothing
    return ps.group(g).params;
}

}  // namespace

TEST_CASE("he-uniform init respects its bound and is rng-driven") {
    std::mt19937_64 rng(1);
    Tensor t = init_he_uniform({8, 4}, 4, rng);
    const double bound = std::sqrt(6.0 / 4.0);
    double lo = 1e9, hi = -1e9;
    for (double v : t.data()) {
        CHECK(std::abs(v) <= bound);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < 0.0);
    CHECK(hi > 0.0);
    CHECK_THROWS_AS(init_he_uniform({2}, 0, rng), std::invalid_argument);
}

TEST_CASE("adagrad accumulates squared gradients per parameter") {
    ParamStore ps;
    Tensor w = ps.reg("g", Tensor::from({2}, {1.0, 2.0}));
    CHECK(w.requires_grad());

    const double g0 = 0.5, g1 = -0.25, lr = 0.1;
    w.node()->ensure_grad();
    w.grad()[0] = g0;
    w.grad()[1] = g1;
    ps.adagrad_step(lr);
    CHECK(w.data()[0] ==
          doctest::Approx(1.0 - lr * g0 / std::sqrt(g0 * g0 + 1e-10)).epsilon(1e-12));
    CHECK(w.data()[1] ==
          doctest::Approx(2.0 - lr * g1 / std::sqrt(g1 * g1 + 1e-10)).epsilon(1e-12));

    const double after1 = w.data()[0];
    ps.zero_grad();
    CHECK_FALSE(w.has_grad());
    w.node()->ensure_grad();
    w.grad()[0] = g0;
    w.grad()[1] = g1;
    ps.adagrad_step(lr);
    CHECK(w.data()[0] ==
          doctest::Approx(after1 - lr * g0 / std::sqrt(2.0 * g0 * g0 + 1e-10)).epsilon(1e-12));
}

TEST_CASE("frozen groups neither demand gradients nor move") {
    ParamStore ps;
    Tensor w = ps.reg("g", Tensor::from({2}, {3.0, 4.0}));
    ps.set_trainable("g", false);
    CHECK_FALSE(ps.trainable("g"));
    CHECK_FALSE(w.requires_grad());

    const auto before = w.data();
    ps.adagrad_step(0.1);  // no grads present, must be a no-op
    CHECK(w.data() == before);

    ps.set_trainable("g", true);
    CHECK_THROWS_AS(ps.adagrad_step(0.1), std::invalid_argument);  // trainable but gradless
    CHECK_THROWS_AS(ps.group("nope"), std::invalid_argument);
}

TEST_CASE("group values copy across identically built modules") {
    ParamStore a, b;
    std::mt19937_64 ra(1), rb(2);
    LinearLayer la(4, 3, a, "lin", ra);
    LinearLayer lb(4, 3, b, "lin", rb);
    BnLayer bna(3, a, "lin");
    BnLayer bnb(3, b, "lin");
    bna.state.running_mean.data()[0] = 0.7;

    CHECK(la.w.data() != lb.w.data());
    copy_group_values(b, "lin", a, "lin");
    CHECK(la.w.data() == lb.w.data());
    CHECK(la.b.data() == lb.b.data());
    CHECK(bnb.state.running_mean.data()[0] == 0.7);

    ParamStore c;
    std::mt19937_64 rc(3);
    LinearLayer lc(5, 3, c, "lin", rc);
    CHECK_THROWS_AS(copy_group_values(c, "lin", a, "lin"), std::invalid_argument);
}

TEST_CASE("zero-initialized linear and conv layers output zero") {
    ParamStore ps;
    std::mt19937_64 rng(4);
    LinearLayer lin(4, 2, ps, "z", rng, true);
    Tensor x = randleaf({3, 4}, rng, false);
    Tensor ylin = lin.forward(x);
    for (double v : ylin.data()) CHECK(v == 0.0);

    ConvLayer conv(2, 3, 3, 1, ps, "z", rng, true);
    Tensor xc = randleaf({1, 2, 6}, rng, false);
    Tensor yconv = conv.same(xc);
    for (double v : yconv.data()) CHECK(v == 0.0);
}

TEST_CASE("vit block preserves shape and zeroed outputs make it an identity") {
    ParamStore ps;
    std::mt19937_64 rng(5);
    ViTBlock blk(8, 2, 16, ps, "b", rng);
    Tensor x = randleaf({2, 5, 8}, rng, false);
    FwdCtx ev;
    CHECK(blk.forward(x, ev).shape() == std::vector<int>{2, 5, 8});

    ViTBlock zblk(8, 2, 16, ps, "bz", rng, true);
    Tensor y = zblk.forward(x, ev);
    for (long i = 0; i < x.size(); ++i) CHECK(y.data()[i] == x.data()[i]);
    Tensor inc = zblk.forward_increment(x, ev);
    for (double v : inc.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(ViTBlock(7, 2, 8, ps, "bad", rng), std::invalid_argument);
}

TEST_CASE("every cataloged layer kind passes a gradient check") {
    std::mt19937_64 rng(6);

    auto check_kind = [&](LayerSpec spec, std::vector<int> xshape) {
        ParamStore ps;
        Layer layer(spec, ps, "g", 77);
        Tensor x = randleaf(xshape, rng);
        std::vector<Tensor> leaves = group_leaves(ps, "g");
        leaves.push_back(x);
        const double err = gradcheck(
            [&] {
                std::mt19937_64 r(11);
                FwdCtx ctx{Mode::train, &r};
                std::mt19937_64 wr(12);
                return wsum(layer.forward(x, ctx), wr);
            },
            leaves);
        CHECK(err < kTol);
    };

    LayerSpec s;
    s.kind = LayerKind::conv1d;
    s.in_dim = 2;
    s.out_dim = 3;
    s.kernel = 3;
    check_kind(s, {2, 2, 7});

    s = LayerSpec{};
    s.kind = LayerKind::bicausal_conv1d;
    s.in_dim = 2;
    s.out_dim = 2;
    s.kernel = 3;
    check_kind(s, {2, 2, 7});

    s = LayerSpec{};
    s.kind = LayerKind::batchnorm;
    s.in_dim = 3;
    s.out_dim = 3;
    check_kind(s, {2, 3, 5});

    s = LayerSpec{};
    s.kind = LayerKind::linear;
    s.in_dim = 4;
    s.out_dim = 3;
    check_kind(s, {2, 4});

    s = LayerSpec{};
    s.kind = LayerKind::relu;
    s.in_dim = 4;
    s.out_dim = 4;
    check_kind(s, {2, 4});

    s = LayerSpec{};
    s.kind = LayerKind::dropout;
    s.in_dim = 4;
    s.out_dim = 4;
    s.rate = 0.3;
    check_kind(s, {2, 4});

    s = LayerSpec{};
    s.kind = LayerKind::softmax;
    s.in_dim = 4;
    s.out_dim = 4;
    check_kind(s, {2, 4});

    s = LayerSpec{};
    s.kind = LayerKind::attention_block;
    s.in_dim = 8;
    s.out_dim = 8;
    s.heads = 2;
    s.mlp_hidden = 6;
    check_kind(s, {1, 4, 8});

    s = LayerSpec{};
    s.kind = LayerKind::patch_embed;
    s.in_dim = 16;
    s.out_dim = 8;
    check_kind(s, {2, 3, 16});
}

TEST_CASE("layer spec validation rejects malformed configurations") {
    LayerSpec s;
    s.in_dim = 0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = LayerSpec{};
    s.rate = 1.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = LayerSpec{};
    s.kind = LayerKind::attention_block;
    s.in_dim = 8;
    s.out_dim = 6;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.out_dim = 8;
    s.heads = 3;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("temporal encoder shapes, guides, and input validation") {
    TemporalEncoderSpec spec;
    spec.input_channels = 2;
    spec.widths = {4, 4, 4};
    spec.kernels = {3, 5, 7};
    spec.embed_dim = 4;
    spec.validate();

    ParamStore ps;
    TemporalEncoder enc(spec, ps, "enc", 31);
    std::mt19937_64 rng(7);
    Tensor x = randleaf({2, 2, 16}, rng, false);
    Tensor v = randleaf({2, 1, 16}, rng, false);
    Tensor a = randleaf({2, 1, 16}, rng, false);
    Tensor j = randleaf({2, 1, 16}, rng, false);
    FwdCtx ev;
    CHECK(enc.forward(x, v, a, j, ev).shape() == std::vector<int>{2, 4});

    TemporalEncoderSpec free = spec;
    free.guide_stages = 0;
    ParamStore ps2;
    TemporalEncoder enc2(free, ps2, "enc", 31);
    CHECK(enc2.forward(x, ev).shape() == std::vector<int>{2, 4});

    CHECK_THROWS_AS(enc.forward(x, ev), std::invalid_argument);  // guides required
    Tensor bad = randleaf({2, 3, 16}, rng, false);
    CHECK_THROWS_AS(enc.forward(bad, v, a, j, ev), std::invalid_argument);

    Mat win(2, 16);
    for (auto& val : win.v) val = 0.5;
    win.v[3] = 1.25;
    DerivativeStack d;
    d.vpg.assign(16, 0.1);
    d.apg.assign(16, 0.2);
    d.jpg.assign(16, 0.3);
    CHECK(temporal_encode(enc, win, d, ev).shape() == std::vector<int>{4});

    TemporalEncoderSpec badspec = spec;
    badspec.widths = {4, 4};
    CHECK_THROWS_AS(badspec.validate(), std::invalid_argument);  // 3 guide stages need 3 blocks
}

TEST_CASE("composed temporal encoder and decoder pass a joint gradient check") {
    TemporalEncoderSpec es;
    es.input_channels = 2;
    es.widths = {3, 3, 3};
    es.kernels = {3, 5, 7};
    es.embed_dim = 3;

    MlpDecoderSpec ds;
    ds.embed_dim = 3;
    ds.hidden = 5;
    ds.out_rows = 2;
    ds.out_cols = 6;
    ds.rate = 0.1;

    ParamStore ps;
    TemporalEncoder enc(es, ps, "enc", 13);
    MlpDecoder dec(ds, ps, "dec", 14);

    std::mt19937_64 rng(8);
    Tensor xp = randleaf({1, 2, 12}, rng);
    Tensor xf = randleaf({1, 2, 12}, rng);
    Tensor v = randleaf({1, 1, 12}, rng, false);
    Tensor a = randleaf({1, 1, 12}, rng, false);
    Tensor j = randleaf({1, 1, 12}, rng, false);
    Tensor target = randleaf({1, 12}, rng, false);

    std::vector<Tensor> leaves{xp, xf};
    for (auto& t : ps.group("enc").params) leaves.push_back(t);
    for (auto& t : ps.group("dec").params) leaves.push_back(t);

    const double err = gradcheck(
        [&] {
            std::mt19937_64 r(21);
            FwdCtx ctx{Mode::train, &r};
            Tensor ha = enc.forward(xp, v, a, j, ctx);
            Tensor hc = enc.forward(xf, v, a, j, ctx);
            Tensor out = dec.forward(concat_lastdim(ha, hc), ctx);
            return l1_loss(out, target);
        },
        leaves);
    CHECK(err < kTol);
}

TEST_CASE("mlp decoder emits the anchor grid and traces its hidden chain") {
    MlpDecoderSpec ds;
    ds.embed_dim = 4;
    ds.hidden = 6;
    ds.out_rows = 3;
    ds.out_cols = 7;

    ParamStore ps;
    MlpDecoder dec(ds, ps, "dec", 9);
    std::mt19937_64 rng(9);
    Tensor h = randleaf({2, 8}, rng, false);
    FwdCtx ev;

    Tensor y = dec.forward(h, ev);
    CHECK(y.shape() == std::vector<int>{2, 21});

    std::vector<Tensor> trace;
    Tensor yt = dec.forward_trace(h, ev, trace);
    REQUIRE(trace.size() == 3);
    for (const auto& t : trace) CHECK(t.shape() == std::vector<int>{2, 6});
    CHECK(yt.data() == y.data());

    Mat anchor = temporal_decode(dec, Tensor::from({8}, std::vector<double>(8, 0.3)), ev);
    CHECK(anchor.rows == 3);
    CHECK(anchor.cols == 7);

    MlpDecoder zdec(ds, ps, "zdec", 9, true);
    Tensor zy = zdec.forward(h, ev);
    for (double vv : zy.data()) CHECK(vv == 0.0);

    CHECK_THROWS_AS(dec.forward(randleaf({2, 6}, rng, false), ev), std::invalid_argument);
}

TEST_CASE("zero decoder layers start as exact pass-throughs of the queue") {
    MlpDecoderSpec ds;
    ds.embed_dim = 4;
    ds.hidden = 6;

    ParamStore ps;
    ZdlStack stack(ds, ps, "zdl");
    REQUIRE(stack.layers.size() == 3);

    std::mt19937_64 rng(10);
    Tensor h0 = randleaf({2, 8}, rng, false);
    std::vector<Tensor> queue{randleaf({2, 6}, rng, false), randleaf({2, 6}, rng, false),
                              randleaf({2, 6}, rng, false)};

    for (Mode m : {Mode::eval, Mode::train}) {
        std::mt19937_64 r(3);
        FwdCtx ctx{m, &r};
        std::vector<Tensor> trace;
        Tensor out = stack.forward(h0, queue, ctx, &trace);
        REQUIRE(trace.size() == 3);
        for (long i = 0; i < out.size(); ++i)
            CHECK(std::abs(out.data()[i] - queue[2].data()[i]) <= 1e-12);
        for (int l = 0; l < 3; ++l)
            for (long i = 0; i < trace[l].size(); ++i)
                CHECK(std::abs(trace[l].data()[i] - queue[l].data()[i]) <= 1e-12);
    }

    std::vector<Tensor> short_queue{queue[0]};
    FwdCtx ev;
    CHECK_THROWS_AS(stack.forward(h0, short_queue, ev), std::invalid_argument);
}

TEST_CASE("sinusoidal position table is fixed and bounded") {
    Tensor pos = sinusoidal_positions(10, 6);
    CHECK(pos.shape() == std::vector<int>{10, 6});
    CHECK(pos.data()[0] == 0.0);  // sin(0)
    CHECK(pos.data()[1] == 1.0);  // cos(0)
    for (double v : pos.data()) CHECK(std::abs(v) <= 1.0);
    CHECK(pos.data() == sinusoidal_positions(10, 6).data());
    CHECK_FALSE(pos.requires_grad());
}

TEST_CASE("spectrogram encoder is permutation-equivariant without positions") {
    SpecModelSpec spec;
    spec.embed_dim = 8;
    spec.enc_depth = 2;
    spec.heads = 2;
    spec.mlp_hidden = 12;

    ParamStore ps;
    SpecEncoder enc(spec, ps, "enc", 55);
    enc.use_pos = false;

    std::mt19937_64 rng(11);
    Tensor vis = randleaf({1, 5, 16}, rng, false);
    const std::vector<int> positions{0, 1, 2, 3, 4};
    FwdCtx ev;
    Tensor y = enc.forward(vis, positions, ev);
    REQUIRE(y.shape() == std::vector<int>{1, 5, 8});

    const std::vector<int> perm{3, 0, 4, 1, 2};
    Tensor visp = Tensor::zeros({1, 5, 16});
    for (int p = 0; p < 5; ++p)
        for (int e = 0; e < 16; ++e) visp.data()[p * 16 + e] = vis.data()[perm[p] * 16 + e];
    Tensor yp = enc.forward(visp, positions, ev);
    for (int p = 0; p < 5; ++p)
        for (int e = 0; e < 8; ++e)
            CHECK(yp.data()[p * 8 + e] ==
                  doctest::Approx(y.data()[perm[p] * 8 + e]).epsilon(1e-10));

    // With positions enabled the same shuffle changes the outputs.
    enc.use_pos = true;
    Tensor z = enc.forward(vis, positions, ev);
    Tensor zp = enc.forward(visp, positions, ev);
    double diff = 0.0;
    for (int p = 0; p < 5; ++p)
        for (int e = 0; e < 8; ++e)
            diff = std::max(diff, std::abs(zp.data()[p * 8 + e] - z.data()[perm[p] * 8 + e]));
    CHECK(diff > 1e-6);
}

TEST_CASE("spectrogram decoder rebuilds full token sets and padded grids") {
    SpecModelSpec spec;
    spec.embed_dim = 8;
    spec.enc_depth = 1;
    spec.dec_depth = 1;
    spec.heads = 2;
    spec.mlp_hidden = 12;

    Spectrogram s;
    s.frames = 8;
    s.bins = 7;
    s.grid = Mat(8, 7);
    std::mt19937_64 grng(12);
    std::uniform_real_distribution<double> gd(0.0, 2.0);
    for (auto& v : s.grid.v) v = gd(grng);
    const auto pset = patchify_and_mask(s, 4, 4, 0.5, 3);
    const int total = static_cast<int>(pset.patches.size());
    const int pv = static_cast<int>(pset.visible_idx.size());

    ParamStore ps;
    SpecDecoder dec(spec, ps, "dec", 66);
    std::mt19937_64 rng(13);
    Tensor z = randleaf({1, pv, 8}, rng, false);
    FwdCtx ev;

    Tensor tokens = dec.forward_tokens(z, pset, ev);
    CHECK(tokens.shape() == std::vector<int>{1, total, 8});

    Tensor grid = dec.forward_grid(z, pset, ev);
    CHECK(grid.shape() == std::vector<int>{1, pset.padded_rows, pset.padded_cols});

    SpecDecoder zdec(spec, ps, "zdec", 66, true);
    Tensor zgrid = zdec.forward_grid(z, pset, ev);
    for (double v : zgrid.data()) CHECK(v == 0.0);

    // Same seed, same structure: rebuilt modules agree exactly.
    ParamStore ps2;
    SpecDecoder dec2(spec, ps2, "dec", 66);
    Tensor grid2 = dec2.forward_grid(z, pset, ev);
    CHECK(grid.data() == grid2.data());
}
