#include "ppgkit/models.hpp"

#include <cmath>
#include <stdexcept>

namespace ppg {

// ---- temporal encoder ---------------------------------------------------

void TemporalEncoderSpec::validate() const {
    if (input_channels <= 0) throw std::invalid_argument("TemporalEncoderSpec: input_channels must be positive");
    if (widths.empty()) throw std::invalid_argument("TemporalEncoderSpec: no blocks");
    for (int w : widths)
        if (w <= 0) throw std::invalid_argument("TemporalEncoderSpec: block width must be positive");
    for (int k : kernels)
        if (k <= 0) throw std::invalid_argument("TemporalEncoderSpec: kernel must be positive");
    if (embed_dim < 1) throw std::invalid_argument("TemporalEncoderSpec: embed_dim must be >= 1");
    if (guide_stages < 0 || guide_stages > 3)
        throw std::invalid_argument("TemporalEncoderSpec: guide_stages outside [0,3]");
    if (guide_stages > 0 && static_cast<int>(widths.size()) < 3)
        throw std::invalid_argument("TemporalEncoderSpec: guided encoder needs at least 3 blocks");
}

NetBlock::NetBlock(int cin, int cout, std::array<int, 3> kernels, ParamStore& ps,
                   const std::string& group, std::mt19937_64& rng) {
    c1 = ConvLayer(cin, cout, kernels[0], 1, ps, group, rng);
    c2 = ConvLayer(cin, cout, kernels[1], 1, ps, group, rng);
    c3 = ConvLayer(cin, cout, kernels[2], 1, ps, group, rng);
    bneck = ConvLayer(cin, cout, 1, 1, ps, group, rng);
    bn = BnLayer(cout, ps, group);
}

Tensor NetBlock::forward(const Tensor& x, const FwdCtx& ctx) {
    Tensor s = add(add(c1.same(x), c2.same(x)), add(c3.same(x), bneck.same(x)));
    return relu(bn.forward(s, ctx));
}

void NetBlock::copy_from(const NetBlock& o) {
    c1.copy_from(o.c1);
    c2.copy_from(o.c2);
    c3.copy_from(o.c3);
    bneck.copy_from(o.bneck);
    bn.copy_from(o.bn);
}

GuideBranch::GuideBranch(int cout, int kernel, ParamStore& ps, const std::string& group,
                         std::mt19937_64& rng) {
    conv = ConvLayer(1, cout, kernel, 1, ps, group, rng);
    bn = BnLayer(cout, ps, group);
}

Tensor GuideBranch::forward(const Tensor& g, const FwdCtx& ctx) {
    return bn.forward(conv.same(g), ctx);
}

void GuideBranch::copy_from(const GuideBranch& o) {
    conv.copy_from(o.conv);
    bn.copy_from(o.bn);
}

TemporalEncoder::TemporalEncoder(const TemporalEncoderSpec& spec, ParamStore& ps,
                                 const std::string& group, std::uint64_t seed)
    : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    int cin = spec_.input_channels;
    for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
        blocks_.emplace_back(cin, spec_.widths[i], spec_.kernels, ps, group, rng);
        cin = spec_.widths[i];
    }
    for (int i = 0; i < spec_.guide_stages; ++i)
        guides_.emplace_back(spec_.widths[i], spec_.kernels[0], ps, group, rng);
    proj_ = LinearLayer(spec_.widths.back(), spec_.embed_dim, ps, group, rng);
}

Tensor TemporalEncoder::forward(const Tensor& x, const Tensor& vpg, const Tensor& apg,
                                const Tensor& jpg, const FwdCtx& ctx) {
    if (x.ndim() != 3 || x.dim(1) != spec_.input_channels)
        throw std::invalid_argument("TemporalEncoder: input must be (B, C, T) with C matching spec");
    const Tensor* gs[3] = {&vpg, &apg, &jpg};
    for (int i = 0; i < spec_.guide_stages; ++i)
        if (gs[i]->ndim() != 3 || gs[i]->dim(2) != x.dim(2) || gs[i]->dim(0) != x.dim(0))
            throw std::invalid_argument("TemporalEncoder: guide misaligned with input");
    Tensor h = x;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        Tensor nb = blocks_[l].forward(h, ctx);
        if (static_cast<int>(l) < spec_.guide_stages)
            nb = add(nb, guides_[l].forward(*gs[l], ctx));
        h = nb;
    }
    return proj_.forward(mean_lastdim(h));
}

Tensor TemporalEncoder::forward(const Tensor& x, const FwdCtx& ctx) {
    if (spec_.guide_stages != 0)
        throw std::invalid_argument("TemporalEncoder: guided encoder requires derivative inputs");
    Tensor h = x;
    for (auto& b : blocks_) h = b.forward(h, ctx);
    return proj_.forward(mean_lastdim(h));
}

void TemporalEncoder::copy_from(const TemporalEncoder& o) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].copy_from(o.blocks_[i]);
    for (std::size_t i = 0; i < guides_.size(); ++i) guides_[i].copy_from(o.guides_[i]);
    proj_.copy_from(o.proj_);
}

Tensor temporal_encode(TemporalEncoder& enc, const Mat& x, const DerivativeStack& d, const FwdCtx& ctx) {
    if (x.rows != enc.spec().input_channels)
        throw std::invalid_argument("temporal_encode: channel count mismatch");
    if (static_cast<int>(d.vpg.size()) != x.cols)
        throw std::invalid_argument("temporal_encode: derivatives misaligned with window");
    const int t = x.cols;
    Tensor xt = Tensor::from({1, x.rows, t}, x.v);
    Tensor vp = Tensor::from({1, 1, t}, d.vpg);
    Tensor ap = Tensor::from({1, 1, t}, d.apg);
    Tensor jp = Tensor::from({1, 1, t}, d.jpg);
    return reshape(enc.forward(xt, vp, ap, jp, ctx), {enc.spec().embed_dim});
}

// ---- anchor decoder -----------------------------------------------------

void MlpDecoderSpec::validate() const {
    if (embed_dim < 1 || hidden < 1) throw std::invalid_argument("MlpDecoderSpec: dims must be positive");
    if (out_rows < 1 || out_cols < 1) throw std::invalid_argument("MlpDecoderSpec: output dims must be positive");
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("MlpDecoderSpec: dropout rate outside [0,1)");
}

MlpDecoder::MlpDecoder(const MlpDecoderSpec& spec, ParamStore& ps, const std::string& group,
                       std::uint64_t seed, bool zero_last)
    : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    l1_ = LinearLayer(spec_.in_dim(), spec_.hidden, ps, group, rng);
    l2_ = LinearLayer(spec_.hidden, spec_.hidden, ps, group, rng);
    l3_ = LinearLayer(spec_.hidden, spec_.hidden, ps, group, rng);
    l4_ = LinearLayer(spec_.hidden, spec_.out_dim(), ps, group, rng, zero_last);
}

Tensor MlpDecoder::forward(const Tensor& h, const FwdCtx& ctx) {
    std::vector<Tensor> trace;
    return forward_trace(h, ctx, trace);
}

Tensor MlpDecoder::forward_trace(const Tensor& h, const FwdCtx& ctx, std::vector<Tensor>& trace) {
    if (h.dim(h.ndim() - 1) != spec_.in_dim())
        throw std::invalid_argument("MlpDecoder: input width must be 2*embed_dim");
    Tensor h1 = l1_.forward(h);
    Tensor h2 = l2_.forward(dropout(h1, spec_.rate, ctx));
    Tensor h3 = l3_.forward(dropout(h2, spec_.rate, ctx));
    trace = {h1, h2, h3};
    return l4_.forward(h3);
}

void MlpDecoder::copy_from(const MlpDecoder& o) {
    l1_.copy_from(o.l1_);
    l2_.copy_from(o.l2_);
    l3_.copy_from(o.l3_);
    l4_.copy_from(o.l4_);
}

Mat temporal_decode(MlpDecoder& dec, const Tensor& h, const FwdCtx& ctx) {
    Tensor h2 = reshape(h, {1, dec.spec().in_dim()});
    Tensor out = dec.forward(h2, ctx);
    Mat m;
    m.rows = dec.spec().out_rows;
    m.cols = dec.spec().out_cols;
    m.v = out.node()->value;
    return m;
}

// ---- zero decoder layers ------------------------------------------------

ZdlLayer::ZdlLayer(int in, int out, double rate_, ParamStore& ps, const std::string& group)
    : rate(rate_) {
    std::mt19937_64 rng(0);  // unused: weights start at zero
    lin = LinearLayer(in, out, ps, group, rng, true);
    bn = BnLayer(out, ps, group);
}

Tensor ZdlLayer::forward(const Tensor& h1_prev, const Tensor& h2_queued, const FwdCtx& ctx) {
    Tensor a = relu(bn.forward(lin.forward(h1_prev), ctx));
    return add(h2_queued, dropout(a, rate, ctx));
}

Tensor zdl_forward(ZdlLayer& layer, const Tensor& h1_prev, const Tensor& h2_queued, const FwdCtx& ctx) {
    return layer.forward(h1_prev, h2_queued, ctx);
}

ZdlStack::ZdlStack(const MlpDecoderSpec& dspec, ParamStore& ps, const std::string& group) {
    layers.emplace_back(dspec.in_dim(), dspec.hidden, dspec.rate, ps, group);
    layers.emplace_back(dspec.hidden, dspec.hidden, dspec.rate, ps, group);
    layers.emplace_back(dspec.hidden, dspec.hidden, dspec.rate, ps, group);
}

Tensor ZdlStack::forward(const Tensor& h0, const std::vector<Tensor>& queue, const FwdCtx& ctx,
                         std::vector<Tensor>* trace) {
    if (queue.size() != layers.size())
        throw std::invalid_argument("ZdlStack: queue length does not match decoder depth");
    Tensor h = h0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].forward(h, queue[i], ctx);
        if (trace) trace->push_back(h);
    }
    return h;
}

// ---- spectrogram models -------------------------------------------------

void SpecModelSpec::validate() const {
    if (patch_h < 1 || patch_w < 1) throw std::invalid_argument("SpecModelSpec: patch dims must be positive");
    if (embed_dim < 1 || enc_depth < 1 || dec_depth < 1 || heads < 1 || mlp_hidden < 1 || max_tokens < 1)
        throw std::invalid_argument("SpecModelSpec: all dims must be positive");
    if (embed_dim % heads != 0) throw std::invalid_argument("SpecModelSpec: embed not divisible by heads");
}

Tensor sinusoidal_positions(int max_tokens, int embed) {
    Tensor t = Tensor::zeros({max_tokens, embed});
    auto& v = t.node()->value;
    for (int p = 0; p < max_tokens; ++p) {
        for (int i = 0; i < embed; ++i) {
            const double expo = static_cast<double>(2 * (i / 2)) / embed;
            const double angle = p / std::pow(10000.0, expo);
            v[p * embed + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return t;
}

namespace {

Tensor pos_rows(const Tensor& table, const std::vector<int>& positions, int embed) {
    Tensor out = Tensor::zeros({static_cast<int>(positions.size()), embed});
    const auto& src = table.node()->value;
    auto& dst = out.node()->value;
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const int p = positions[i];
        if (p < 0 || (p + 1) * embed > static_cast<int>(src.size()))
            throw std::invalid_argument("positional encoding: index beyond table");
        for (int j = 0; j < embed; ++j) dst[i * embed + j] = src[p * embed + j];
    }
    return out;
}

}  // namespace

SpecEncoder::SpecEncoder(const SpecModelSpec& spec, ParamStore& ps, const std::string& group,
                         std::uint64_t seed)
    : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    embed_ = LinearLayer(spec_.patch_dim(), spec_.embed_dim, ps, group, rng);
    pos_ = sinusoidal_positions(spec_.max_tokens, spec_.embed_dim);
    for (int i = 0; i < spec_.enc_depth; ++i)
        blocks_.emplace_back(spec_.embed_dim, spec_.heads, spec_.mlp_hidden, ps, group, rng);
}

Tensor SpecEncoder::forward(const Tensor& vis, const std::vector<int>& positions, const FwdCtx& ctx) {
    if (vis.ndim() != 3 || vis.dim(2) != spec_.patch_dim())
        throw std::invalid_argument("SpecEncoder: input must be (B, P, patch_dim)");
    if (positions.empty()) throw std::invalid_argument("SpecEncoder: no visible patches");
    if (static_cast<int>(positions.size()) != vis.dim(1))
        throw std::invalid_argument("SpecEncoder: positions do not match patch count");
    Tensor t = embed_.forward(vis);
    if (use_pos) t = add_broadcast_rows(t, pos_rows(pos_, positions, spec_.embed_dim));
    for (auto& b : blocks_) t = b.forward(t, ctx);
    return t;
}

void SpecEncoder::copy_from(const SpecEncoder& o) {
    embed_.copy_from(o.embed_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].copy_from(o.blocks_[i]);
    use_pos = o.use_pos;
}

SpecDecoder::SpecDecoder(const SpecModelSpec& spec, ParamStore& ps, const std::string& group,
                         std::uint64_t seed, bool zero_pixel)
    : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    mask_token_ = ps.reg(group, init_he_uniform({spec_.embed_dim}, spec_.embed_dim, rng));
    pos_ = sinusoidal_positions(spec_.max_tokens, spec_.embed_dim);
    for (int i = 0; i < spec_.dec_depth; ++i)
        blocks_.emplace_back(spec_.embed_dim, spec_.heads, spec_.mlp_hidden, ps, group, rng);
    pixel_ = LinearLayer(spec_.embed_dim, spec_.patch_dim(), ps, group, rng, zero_pixel);
}

Tensor SpecDecoder::forward_tokens(const Tensor& z, const SpectrogramPatchSet& info, const FwdCtx& ctx) {
    if (info.patch_h != spec_.patch_h || info.patch_w != spec_.patch_w)
        throw std::invalid_argument("SpecDecoder: patch geometry mismatch");
    const int prows = info.padded_rows / info.patch_h;
    const int pcols = info.padded_cols / info.patch_w;
    const int total = prows * pcols;
    if (z.dim(1) != static_cast<int>(info.visible_idx.size()))
        throw std::invalid_argument("SpecDecoder: latent count does not match visible patches");
    if (static_cast<int>(info.visible_idx.size() + info.masked_idx.size()) != total)
        throw std::invalid_argument("SpecDecoder: mask bookkeeping inconsistent");
    Tensor t = assemble_tokens(z, mask_token_, info.visible_idx, total);
    std::vector<int> all(total);
    for (int i = 0; i < total; ++i) all[i] = i;
    t = add_broadcast_rows(t, pos_rows(pos_, all, spec_.embed_dim));
    for (auto& b : blocks_) t = b.forward(t, ctx);
    return t;
}

Tensor SpecDecoder::forward_grid(const Tensor& z, const SpectrogramPatchSet& info, const FwdCtx& ctx) {
    Tensor t = forward_tokens(z, info, ctx);
    Tensor px = pixel_.forward(t);
    const int prows = info.padded_rows / info.patch_h;
    const int pcols = info.padded_cols / info.patch_w;
    return patches_to_grid(px, prows, pcols, info.patch_h, info.patch_w);
}

void SpecDecoder::copy_from(const SpecDecoder& o) {
    mask_token_.node()->value = o.mask_token_.node()->value;
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].copy_from(o.blocks_[i]);
    pixel_.copy_from(o.pixel_);
}

}  // namespace ppg
