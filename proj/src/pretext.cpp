#include "ppgkit/pretext.hpp"

#include <cmath>
#include <stdexcept>

#include "ppgkit/errors.hpp"

namespace ppg {

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be positive");
}

void seeded_shuffle(std::vector<int>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng() % i]);
}

// ---- temporal pretext ---------------------------------------------------

TemporalItem make_temporal_item(const PafPartition& part) {
    TemporalItem it;
    it.past = part.past;
    it.anchor = part.anchor;
    it.future = part.future;
    it.d_past = derivatives(std::vector<double>(part.past.row(0), part.past.row(0) + part.past.cols));
    it.d_future =
        derivatives(std::vector<double>(part.future.row(0), part.future.row(0) + part.future.cols));
    return it;
}

CtfgaModel::CtfgaModel(const TemporalEncoderSpec& es, const MlpDecoderSpec& ds, std::uint64_t seed,
                       bool zero_decoder)
    : espec(es), dspec(ds) {
    enc = TemporalEncoder(espec, ps, "encoder", seed);
    dec = MlpDecoder(dspec, ps, "decoder", seed + 1, zero_decoder);
}

SegmentBatch stack_segment(const std::vector<TemporalItem>& items, const std::vector<int>& idxs,
                           bool past) {
    const Mat& first = past ? items[idxs[0]].past : items[idxs[0]].future;
    const int c = first.rows, t = first.cols;
    const int b = static_cast<int>(idxs.size());
    std::vector<double> xs(static_cast<std::size_t>(b) * c * t);
    std::vector<double> vs(static_cast<std::size_t>(b) * t), as(vs.size()), js(vs.size());
    for (int i = 0; i < b; ++i) {
        const TemporalItem& it = items[idxs[i]];
        const Mat& seg = past ? it.past : it.future;
        const DerivativeStack& d = past ? it.d_past : it.d_future;
        if (seg.rows != c || seg.cols != t)
            throw std::invalid_argument("ctfga_pretrain: inconsistent partition shapes");
        std::copy(seg.v.begin(), seg.v.end(), xs.begin() + static_cast<std::size_t>(i) * c * t);
        std::copy(d.vpg.begin(), d.vpg.end(), vs.begin() + static_cast<std::size_t>(i) * t);
        std::copy(d.apg.begin(), d.apg.end(), as.begin() + static_cast<std::size_t>(i) * t);
        std::copy(d.jpg.begin(), d.jpg.end(), js.begin() + static_cast<std::size_t>(i) * t);
    }
    return {Tensor::from({b, c, t}, std::move(xs)), Tensor::from({b, 1, t}, std::move(vs)),
            Tensor::from({b, 1, t}, std::move(as)), Tensor::from({b, 1, t}, std::move(js))};
}

Tensor stack_anchor(const std::vector<TemporalItem>& items, const std::vector<int>& idxs) {
    const int n = static_cast<int>(items[idxs[0]].anchor.v.size());
    const int b = static_cast<int>(idxs.size());
    std::vector<double> ys(static_cast<std::size_t>(b) * n);
    for (int i = 0; i < b; ++i) {
        const Mat& a = items[idxs[i]].anchor;
        if (static_cast<int>(a.v.size()) != n)
            throw std::invalid_argument("ctfga_pretrain: inconsistent anchor shapes");
        std::copy(a.v.begin(), a.v.end(), ys.begin() + static_cast<std::size_t>(i) * n);
    }
    return Tensor::from({b, n}, std::move(ys));
}

TrainTrace ctfga_pretrain(CtfgaModel& model, const std::vector<TemporalItem>& items,
                          const TrainConfig& cfg) {
    cfg.validate();
    if (items.empty()) throw std::invalid_argument("ctfga_pretrain: empty dataset");
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainTrace trace;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        int seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<int> idxs(order.begin() + start,
                                  order.begin() + std::min(order.size(), start + cfg.batch_size));
            FwdCtx ctx{Mode::train, &rng};
            SegmentBatch p = stack_segment(items, idxs, true);
            SegmentBatch f = stack_segment(items, idxs, false);
            Tensor ha = model.enc.forward(p.x, p.vpg, p.apg, p.jpg, ctx);
            Tensor hc = model.enc.forward(f.x, f.vpg, f.apg, f.jpg, ctx);
            Tensor pred = model.dec.forward(concat_lastdim(ha, hc), ctx);
            Tensor loss = l1_loss(pred, stack_anchor(items, idxs));
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError("ctfga_pretrain: non-finite loss at epoch " + std::to_string(epoch));
            backward(loss);
            model.ps.adagrad_step(cfg.lr);
            model.ps.zero_grad();
            loss_sum += lv * static_cast<double>(idxs.size());
            seen += static_cast<int>(idxs.size());
        }
        trace.epoch_loss.push_back(loss_sum / seen);
    }
    return trace;
}

// ---- spectrogram pretext ------------------------------------------------

MaeModel::MaeModel(const SpecModelSpec& s, std::uint64_t seed, bool zero_pixel) : spec(s) {
    enc = SpecEncoder(spec, ps, "spec_encoder", seed);
    dec = SpecDecoder(spec, ps, "spec_decoder", seed + 1, zero_pixel);
}

Tensor visible_pixels(const SpectrogramPatchSet& ps) {
    if (ps.visible_idx.empty()) throw std::invalid_argument("visible_pixels: no visible patches");
    const int pd = ps.patch_h * ps.patch_w;
    const int pv = static_cast<int>(ps.visible_idx.size());
    std::vector<double> v(static_cast<std::size_t>(pv) * pd);
    for (int i = 0; i < pv; ++i) {
        const auto& patch = ps.patches[ps.visible_idx[i]];
        std::copy(patch.values.begin(), patch.values.end(), v.begin() + static_cast<std::size_t>(i) * pd);
    }
    return Tensor::from({1, pv, pd}, std::move(v));
}

TrainTrace mae_pretrain(MaeModel& model, const std::vector<SpectrogramPatchSet>& items,
                        const TrainConfig& cfg) {
    cfg.validate();
    if (items.empty()) throw std::invalid_argument("mae_pretrain: empty dataset");
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainTrace trace;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        int seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            FwdCtx ctx{Mode::train, &rng};
            // masks differ per item, so the batch accumulates item losses
            Tensor batch_loss = Tensor::scalar(0.0);
            int in_batch = 0;
            for (std::size_t j = start; j < std::min(order.size(), start + cfg.batch_size); ++j) {
                const SpectrogramPatchSet& it = items[order[j]];
                Tensor z = model.enc.forward(visible_pixels(it), it.visible_idx, ctx);
                Tensor grid = model.dec.forward_grid(z, it, ctx);
                Mat target = reassemble(it);
                Tensor ty = Tensor::from({1, it.padded_rows, it.padded_cols}, target.v);
                batch_loss = add(batch_loss, l1_loss(grid, ty));
                ++in_batch;
            }
            Tensor loss = scale(batch_loss, 1.0 / in_batch);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError("mae_pretrain: non-finite loss at epoch " + std::to_string(epoch));
            backward(loss);
            model.ps.adagrad_step(cfg.lr);
            model.ps.zero_grad();
            loss_sum += lv * in_batch;
            seen += in_batch;
        }
        trace.epoch_loss.push_back(loss_sum / seen);
    }
    return trace;
}

// ---- window-order pretext -----------------------------------------------

TwrgModel::TwrgModel(const NbtsfSpec& ns, int hidden_, std::uint64_t seed) : nspec(ns), hidden(hidden_) {
    if (hidden < 1) throw std::invalid_argument("TwrgModel: hidden must be positive");
    std::mt19937_64 rng(seed);
    nbtsf = Nbtsf(nspec, ps, "nbtsf", seed + 1);
    const int flat = nspec.k() * nspec.l;
    t1 = LinearLayer(flat, hidden, ps, "twrg_trunk", rng);
    t2 = LinearLayer(hidden, hidden, ps, "twrg_trunk", rng);
    cls = LinearLayer(hidden, 2, ps, "twrg_cls", rng, true);
}

Tensor TwrgModel::trunk(const Tensor& h, const Tensor& z, const FwdCtx& ctx) {
    Tensor f = nbtsf.forward(h, z, ctx);
    Tensor flat = reshape(f, {f.dim(0), nspec.k() * nspec.l});
    return relu(t2.forward(relu(t1.forward(flat))));
}

Tensor TwrgModel::logits(const Tensor& h, const Tensor& z, const FwdCtx& ctx) {
    return cls.forward(trunk(h, z, ctx));
}

TrainTrace twrg_pretrain(TwrgModel& model, const std::vector<TwrgItem>& items, const TrainConfig& cfg) {
    cfg.validate();
    if (items.empty()) throw std::invalid_argument("twrg_pretrain: empty dataset");
    const int e2 = model.nspec.h_dim;
    const int d = model.nspec.z_dim;
    for (const auto& it : items)
        if (static_cast<int>(it.h_a.size() + it.h_c.size()) != e2 || static_cast<int>(it.z.size()) != d)
            throw std::invalid_argument("twrg_pretrain: item widths do not match fusion spec");

    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainTrace trace;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        int correct = 0, seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<int> idxs(order.begin() + start,
                                  order.begin() + std::min(order.size(), start + cfg.batch_size));
            const int b = static_cast<int>(idxs.size());
            std::vector<double> hs(static_cast<std::size_t>(b) * e2);
            std::vector<double> zs(static_cast<std::size_t>(b) * d);
            std::vector<int> labels(b);
            for (int i = 0; i < b; ++i) {
                const TwrgItem& it = items[idxs[i]];
                const bool positive = (rng() & 1ull) != 0;  // fair order coin
                labels[i] = positive ? 1 : 0;
                const auto& first = positive ? it.h_a : it.h_c;
                const auto& second = positive ? it.h_c : it.h_a;
                std::copy(first.begin(), first.end(), hs.begin() + static_cast<std::size_t>(i) * e2);
                std::copy(second.begin(), second.end(),
                          hs.begin() + static_cast<std::size_t>(i) * e2 + first.size());
                std::copy(it.z.begin(), it.z.end(), zs.begin() + static_cast<std::size_t>(i) * d);
            }
            FwdCtx ctx{Mode::train, &rng};
            Tensor h = Tensor::from({b, e2}, std::move(hs));
            Tensor z = Tensor::from({b, d}, std::move(zs));
            Tensor lg = model.logits(h, z, ctx);
            Tensor loss = softmax_cross_entropy(lg, labels);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError("twrg_pretrain: non-finite loss at epoch " + std::to_string(epoch));
            backward(loss);
            model.ps.adagrad_step(cfg.lr);
            model.ps.zero_grad();
            const auto& lo = lg.node()->value;
            for (int i = 0; i < b; ++i)
                if ((lo[i * 2 + 1] > lo[i * 2] ? 1 : 0) == labels[i]) ++correct;
            loss_sum += lv * b;
            seen += b;
        }
        trace.epoch_loss.push_back(loss_sum / seen);
        trace.epoch_acc.push_back(static_cast<double>(correct) / seen);
    }
    return trace;
}

}  // namespace ppg
