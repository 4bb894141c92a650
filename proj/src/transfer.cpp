#include "ppgkit/transfer.hpp"

#include <cmath>
#include <stdexcept>

#include "ppgkit/errors.hpp"

namespace ppg {

namespace {

const FwdCtx kEval{Mode::eval, nullptr};

void check_finite(double v, const char* who, int epoch) {
    if (!std::isfinite(v))
        throw NumericError(std::string(who) + ": non-finite loss at epoch " + std::to_string(epoch));
}

Tensor label_tensor(const std::vector<double>& labels, const std::vector<int>& idxs) {
    std::vector<double> y(idxs.size());
    for (std::size_t i = 0; i < idxs.size(); ++i) y[i] = labels[idxs[i]];
    return Tensor::from({static_cast<int>(idxs.size()), 1}, std::move(y));
}

// Mean over the token axis: (B, P, E) -> (B, E).
Tensor pool_tokens(const Tensor& tokens) { return mean_lastdim(transpose_last2(tokens)); }

}  // namespace

TransferOutcome train_regression(ParamStore& ps, const BatchEmbedder& embed, LinearLayer& head,
                                 const std::vector<double>& labels, const TrainConfig& cfg) {
    cfg.validate();
    if (labels.empty()) throw std::invalid_argument("train_regression: empty dataset");
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TransferOutcome out;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        int seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<int> idxs(order.begin() + start,
                                  order.begin() + std::min(order.size(), start + cfg.batch_size));
            FwdCtx ctx{Mode::train, &rng};
            Tensor pred = head.forward(embed(idxs, ctx));
            Tensor loss = l1_loss(pred, label_tensor(labels, idxs));
            const double lv = loss.item();
            check_finite(lv, "train_regression", epoch);
            backward(loss);
            ps.adagrad_step(cfg.lr);
            ps.zero_grad();
            loss_sum += lv * static_cast<double>(idxs.size());
            seen += static_cast<int>(idxs.size());
        }
        out.trace.epoch_loss.push_back(loss_sum / seen);
    }
    std::vector<int> all(labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    Tensor pred = head.forward(embed(all, kEval));
    out.predictions = pred.node()->value;
    return out;
}

// ---- temporal -----------------------------------------------------------

TemporalTransfer::TemporalTransfer(const CtfgaModel& pre, TransferMode m, std::uint64_t seed)
    : mode(m) {
    std::mt19937_64 rng(seed);
    ap_enc = TemporalEncoder(pre.espec, ps, "ap_encoder", seed);
    copy_group_values(ps, "ap_encoder", pre.ps, "encoder");
    ps.set_trainable("ap_encoder", false);

    if (mode == TransferMode::fine_tune || mode == TransferMode::dpt) {
        rp_enc = TemporalEncoder(pre.espec, ps, "rp_encoder", seed + 1);
        copy_group_values(ps, "rp_encoder", pre.ps, "encoder");
    }
    if (mode == TransferMode::dpt) {
        ap_dec = MlpDecoder(pre.dspec, ps, "ap_decoder", seed + 2);
        copy_group_values(ps, "ap_decoder", pre.ps, "decoder");
        ps.set_trainable("ap_decoder", false);
        zdl = ZdlStack(pre.dspec, ps, "zdl");
        head = LinearLayer(pre.dspec.hidden, 1, ps, "head", rng, true);
    } else {
        head = LinearLayer(2 * pre.espec.embed_dim, 1, ps, "head", rng, true);
    }
}

Tensor TemporalTransfer::predict_batch(const std::vector<TemporalItem>& items,
                                       const std::vector<int>& idxs, const FwdCtx& ctx) {
    SegmentBatch p = stack_segment(items, idxs, true);
    SegmentBatch f = stack_segment(items, idxs, false);
    switch (mode) {
        case TransferMode::linear_probe: {
            // frozen features: always the stored statistics, never batch ones
            Tensor e = concat_lastdim(ap_enc.forward(p.x, p.vpg, p.apg, p.jpg, kEval),
                                      ap_enc.forward(f.x, f.vpg, f.apg, f.jpg, kEval));
            return head.forward(e);
        }
        case TransferMode::fine_tune: {
            Tensor e = concat_lastdim(rp_enc.forward(p.x, p.vpg, p.apg, p.jpg, ctx),
                                      rp_enc.forward(f.x, f.vpg, f.apg, f.jpg, ctx));
            return head.forward(e);
        }
        case TransferMode::dpt: {
            Tensor h2 = concat_lastdim(ap_enc.forward(p.x, p.vpg, p.apg, p.jpg, kEval),
                                       ap_enc.forward(f.x, f.vpg, f.apg, f.jpg, kEval));
            std::vector<Tensor> queue;
            ap_dec.forward_trace(h2, kEval, queue);
            Tensor h1 = concat_lastdim(rp_enc.forward(p.x, p.vpg, p.apg, p.jpg, ctx),
                                       rp_enc.forward(f.x, f.vpg, f.apg, f.jpg, ctx));
            Tensor hL = zdl.forward(h1, queue, ctx);
            return head.forward(hL);
        }
    }
    throw std::logic_error("TemporalTransfer: unreachable");
}

TransferOutcome TemporalTransfer::train(const std::vector<LabeledTemporalItem>& labeled,
                                        const TrainConfig& cfg) {
    cfg.validate();
    if (labeled.empty()) throw std::invalid_argument("TemporalTransfer: empty dataset");
    std::vector<TemporalItem> items;
    std::vector<double> labels;
    for (const auto& li : labeled) {
        items.push_back(li.item);
        labels.push_back(li.label);
    }
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TransferOutcome out;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        int seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<int> idxs(order.begin() + start,
                                  order.begin() + std::min(order.size(), start + cfg.batch_size));
            FwdCtx ctx{Mode::train, &rng};
            Tensor pred = predict_batch(items, idxs, ctx);
            Tensor loss = l1_loss(pred, label_tensor(labels, idxs));
            const double lv = loss.item();
            check_finite(lv, "TemporalTransfer", epoch);
            backward(loss);
            ps.adagrad_step(cfg.lr);
            ps.zero_grad();
            loss_sum += lv * static_cast<double>(idxs.size());
            seen += static_cast<int>(idxs.size());
        }
        out.trace.epoch_loss.push_back(loss_sum / seen);
    }
    for (std::size_t i = 0; i < items.size(); ++i) out.predictions.push_back(predict(items[i]));
    return out;
}

double TemporalTransfer::predict(const TemporalItem& item) {
    std::vector<TemporalItem> one{item};
    return predict_batch(one, {0}, kEval).item();
}

std::vector<Tensor> TemporalTransfer::ap_queue(const TemporalItem& item) {
    if (mode != TransferMode::dpt) throw std::invalid_argument("ap_queue: dpt mode only");
    std::vector<TemporalItem> one{item};
    SegmentBatch p = stack_segment(one, {0}, true);
    SegmentBatch f = stack_segment(one, {0}, false);
    Tensor h2 = concat_lastdim(ap_enc.forward(p.x, p.vpg, p.apg, p.jpg, kEval),
                               ap_enc.forward(f.x, f.vpg, f.apg, f.jpg, kEval));
    std::vector<Tensor> queue;
    ap_dec.forward_trace(h2, kEval, queue);
    return queue;
}

std::vector<double> TemporalTransfer::embed(const TemporalItem& item) {
    std::vector<TemporalItem> one{item};
    SegmentBatch p = stack_segment(one, {0}, true);
    SegmentBatch f = stack_segment(one, {0}, false);
    TemporalEncoder& enc = (mode == TransferMode::linear_probe) ? ap_enc : rp_enc;
    Tensor e = concat_lastdim(enc.forward(p.x, p.vpg, p.apg, p.jpg, kEval),
                              enc.forward(f.x, f.vpg, f.apg, f.jpg, kEval));
    return e.node()->value;
}

std::vector<Tensor> TemporalTransfer::rp_trace(const TemporalItem& item) {
    if (mode != TransferMode::dpt) throw std::invalid_argument("rp_trace: dpt mode only");
    std::vector<TemporalItem> one{item};
    SegmentBatch p = stack_segment(one, {0}, true);
    SegmentBatch f = stack_segment(one, {0}, false);
    std::vector<Tensor> queue = ap_queue(item);
    Tensor h1 = concat_lastdim(rp_enc.forward(p.x, p.vpg, p.apg, p.jpg, kEval),
                               rp_enc.forward(f.x, f.vpg, f.apg, f.jpg, kEval));
    std::vector<Tensor> trace;
    zdl.forward(h1, queue, kEval, &trace);
    return trace;
}

// ---- spectrogram --------------------------------------------------------

SpectroTransfer::SpectroTransfer(const MaeModel& pre, TransferMode m, std::uint64_t seed)
    : mode(m), spec(pre.spec) {
    std::mt19937_64 rng(seed);
    locked_enc = SpecEncoder(spec, ps, "locked_encoder", seed);
    copy_group_values(ps, "locked_encoder", pre.ps, "spec_encoder");
    ps.set_trainable("locked_encoder", false);

    if (mode == TransferMode::fine_tune || mode == TransferMode::dpt) {
        unlocked_enc = SpecEncoder(spec, ps, "unlocked_encoder", seed + 1);
        copy_group_values(ps, "unlocked_encoder", pre.ps, "spec_encoder");
    }
    if (mode == TransferMode::dpt) {
        locked_dec = SpecDecoder(spec, ps, "locked_decoder", seed + 2);
        copy_group_values(ps, "locked_decoder", pre.ps, "spec_decoder");
        ps.set_trainable("locked_decoder", false);
        for (int i = 0; i < spec.dec_depth; ++i)
            unlocked_blocks.emplace_back(spec.embed_dim, spec.heads, spec.mlp_hidden, ps,
                                         "unlocked_blocks", rng, true);
    }
    head = LinearLayer(spec.embed_dim, 1, ps, "head", rng, true);
}

Tensor SpectroTransfer::item_tokens(const SpectrogramPatchSet& item, const FwdCtx& ctx) {
    Tensor vis = visible_pixels(item);
    switch (mode) {
        case TransferMode::linear_probe:
            return locked_enc.forward(vis, item.visible_idx, kEval);
        case TransferMode::fine_tune:
            return unlocked_enc.forward(vis, item.visible_idx, ctx);
        case TransferMode::dpt: {
            Tensor z2 = locked_enc.forward(vis, item.visible_idx, kEval);
            std::vector<Tensor> queue;
            for (auto& blk : locked_dec.blocks()) {
                z2 = blk.forward(z2, kEval);
                queue.push_back(z2);
            }
            Tensor z1 = unlocked_enc.forward(vis, item.visible_idx, ctx);
            for (std::size_t l = 0; l < unlocked_blocks.size(); ++l)
                z1 = add(queue[l], unlocked_blocks[l].forward_increment(z1, ctx));
            return z1;
        }
    }
    throw std::logic_error("SpectroTransfer: unreachable");
}

TransferOutcome SpectroTransfer::train(const std::vector<LabeledSpectroItem>& labeled,
                                       const TrainConfig& cfg) {
    cfg.validate();
    if (labeled.empty()) throw std::invalid_argument("SpectroTransfer: empty dataset");
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(labeled.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TransferOutcome out;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        int seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            FwdCtx ctx{Mode::train, &rng};
            // patch geometry can differ per item, so items accumulate
            Tensor batch_loss = Tensor::scalar(0.0);
            int in_batch = 0;
            for (std::size_t j = start; j < std::min(order.size(), start + cfg.batch_size); ++j) {
                const auto& li = labeled[order[j]];
                Tensor pred = head.forward(pool_tokens(item_tokens(li.patches, ctx)));
                Tensor y = Tensor::from({1, 1}, {li.label});
                batch_loss = add(batch_loss, l1_loss(pred, y));
                ++in_batch;
            }
            Tensor loss = scale(batch_loss, 1.0 / in_batch);
            const double lv = loss.item();
            check_finite(lv, "SpectroTransfer", epoch);
            backward(loss);
            ps.adagrad_step(cfg.lr);
            ps.zero_grad();
            loss_sum += lv * in_batch;
            seen += in_batch;
        }
        out.trace.epoch_loss.push_back(loss_sum / seen);
    }
    for (const auto& li : labeled) out.predictions.push_back(predict(li.patches));
    return out;
}

double SpectroTransfer::predict(const SpectrogramPatchSet& item) {
    return head.forward(pool_tokens(item_tokens(item, kEval))).item();
}

std::vector<Tensor> SpectroTransfer::locked_trace(const SpectrogramPatchSet& item) {
    if (mode != TransferMode::dpt) throw std::invalid_argument("locked_trace: dpt mode only");
    Tensor z2 = locked_enc.forward(visible_pixels(item), item.visible_idx, kEval);
    std::vector<Tensor> queue;
    for (auto& blk : locked_dec.blocks()) {
        z2 = blk.forward(z2, kEval);
        queue.push_back(z2);
    }
    return queue;
}

std::vector<Tensor> SpectroTransfer::rp_trace(const SpectrogramPatchSet& item) {
    if (mode != TransferMode::dpt) throw std::invalid_argument("rp_trace: dpt mode only");
    std::vector<Tensor> queue = locked_trace(item);
    Tensor z1 = unlocked_enc.forward(visible_pixels(item), item.visible_idx, kEval);
    std::vector<Tensor> trace;
    for (std::size_t l = 0; l < unlocked_blocks.size(); ++l) {
        z1 = add(queue[l], unlocked_blocks[l].forward_increment(z1, kEval));
        trace.push_back(z1);
    }
    return trace;
}

std::vector<double> SpectroTransfer::latent(const SpectrogramPatchSet& item) {
    return item_tokens(item, kEval).node()->value;
}

// ---- mixed --------------------------------------------------------------

MixedTransfer::MixedTransfer(const TwrgModel& pre, std::uint64_t seed)
    : model(pre.nspec, pre.hidden, seed) {
    copy_group_values(model.ps, "nbtsf", pre.ps, "nbtsf");
    copy_group_values(model.ps, "twrg_trunk", pre.ps, "twrg_trunk");
    copy_group_values(model.ps, "twrg_cls", pre.ps, "twrg_cls");
    model.ps.set_trainable("twrg_cls", false);
    std::mt19937_64 rng(seed);
    head = LinearLayer(model.hidden, 1, model.ps, "head", rng, true);
}

TransferOutcome MixedTransfer::train(const std::vector<LabeledMixedItem>& labeled,
                                     const TrainConfig& cfg) {
    cfg.validate();
    if (labeled.empty()) throw std::invalid_argument("MixedTransfer: empty dataset");
    const int e2 = model.nspec.h_dim, d = model.nspec.z_dim;
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> order(labeled.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    auto stack = [&](const std::vector<int>& idxs) {
        const int b = static_cast<int>(idxs.size());
        std::vector<double> hs(static_cast<std::size_t>(b) * e2), zs(static_cast<std::size_t>(b) * d);
        for (int i = 0; i < b; ++i) {
            const TwrgItem& it = labeled[idxs[i]].item;
            if (static_cast<int>(it.h_a.size() + it.h_c.size()) != e2 ||
                static_cast<int>(it.z.size()) != d)
                throw std::invalid_argument("MixedTransfer: item widths do not match fusion spec");
            std::copy(it.h_a.begin(), it.h_a.end(), hs.begin() + static_cast<std::size_t>(i) * e2);
            std::copy(it.h_c.begin(), it.h_c.end(),
                      hs.begin() + static_cast<std::size_t>(i) * e2 + it.h_a.size());
            std::copy(it.z.begin(), it.z.end(), zs.begin() + static_cast<std::size_t>(i) * d);
        }
        return std::make_pair(Tensor::from({b, e2}, std::move(hs)), Tensor::from({b, d}, std::move(zs)));
    };

    TransferOutcome out;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        seeded_shuffle(order, rng);
        double loss_sum = 0.0;
        int seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<int> idxs(order.begin() + start,
                                  order.begin() + std::min(order.size(), start + cfg.batch_size));
            FwdCtx ctx{Mode::train, &rng};
            auto [h, z] = stack(idxs);
            Tensor pred = head.forward(model.trunk(h, z, ctx));
            std::vector<double> labels;
            for (int i : idxs) labels.push_back(labeled[i].label);
            Tensor y = Tensor::from({static_cast<int>(idxs.size()), 1}, std::move(labels));
            Tensor loss = l1_loss(pred, y);
            const double lv = loss.item();
            check_finite(lv, "MixedTransfer", epoch);
            backward(loss);
            model.ps.adagrad_step(cfg.lr);
            model.ps.zero_grad();
            loss_sum += lv * static_cast<double>(idxs.size());
            seen += static_cast<int>(idxs.size());
        }
        out.trace.epoch_loss.push_back(loss_sum / seen);
    }
    for (const auto& li : labeled) out.predictions.push_back(predict(li.item));
    return out;
}

double MixedTransfer::predict(const TwrgItem& item) {
    const int e2 = model.nspec.h_dim, d = model.nspec.z_dim;
    std::vector<double> hs(e2), zs(d);
    std::copy(item.h_a.begin(), item.h_a.end(), hs.begin());
    std::copy(item.h_c.begin(), item.h_c.end(), hs.begin() + item.h_a.size());
    std::copy(item.z.begin(), item.z.end(), zs.begin());
    Tensor h = Tensor::from({1, e2}, std::move(hs));
    Tensor z = Tensor::from({1, d}, std::move(zs));
    return head.forward(model.trunk(h, z, kEval)).item();
}

}  // namespace ppg
