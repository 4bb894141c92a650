#include "ppgkit/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ppg {

Tensor init_he_uniform(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
    if (fan_in <= 0) throw std::invalid_argument("init_he_uniform: fan_in must be positive");
    Tensor t = Tensor::zeros(shape, true);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto& v = t.node()->value;
    for (double& x : v) {
        const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;  // (0,1)
        x = (2.0 * u - 1.0) * limit;
    }
    return t;
}

// ---- ParamStore ---------------------------------------------------------

Tensor ParamStore::reg(const std::string& group, Tensor t) {
    auto& g = groups_[group];
    t.set_requires_grad(g.trainable);
    g.params.push_back(t);
    g.accum.emplace_back(t.size(), 0.0);
    return t;
}

Tensor ParamStore::reg_buffer(const std::string& group, Tensor t) {
    t.set_requires_grad(false);
    groups_[group].buffers.push_back(t);
    return t;
}

ParamStore::Group& ParamStore::group(const std::string& name) {
    auto it = groups_.find(name);
    if (it == groups_.end()) throw std::invalid_argument("ParamStore: unknown group '" + name + "'");
    return it->second;
}

const ParamStore::Group& ParamStore::group(const std::string& name) const {
    auto it = groups_.find(name);
    if (it == groups_.end()) throw std::invalid_argument("ParamStore: unknown group '" + name + "'");
    return it->second;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
    Group& g = group(name);
    g.trainable = trainable;
    for (Tensor& p : g.params) {
        p.set_requires_grad(trainable);
        if (!trainable) p.node()->grad.clear();
    }
}

bool ParamStore::trainable(const std::string& name) const { return group(name).trainable; }

void ParamStore::adagrad_step(double lr) {
    for (auto& [name, g] : groups_) {
        if (!g.trainable) continue;
        for (std::size_t i = 0; i < g.params.size(); ++i) {
            auto node = g.params[i].node();
            if (node->grad.size() != node->value.size())
                throw std::invalid_argument("adagrad_step: missing gradient in trainable group '" + name + "'");
            auto& acc = g.accum[i];
            for (std::size_t j = 0; j < node->value.size(); ++j) {
                const double gj = node->grad[j];
                acc[j] += gj * gj;
                node->value[j] -= lr * gj / std::sqrt(acc[j] + 1e-10);
            }
        }
    }
}

void ParamStore::zero_grad() {
    for (auto& [name, g] : groups_) {
        (void)name;
        for (Tensor& p : g.params) p.node()->grad.clear();
    }
}

void copy_group_values(ParamStore& dst, const std::string& dst_group, const ParamStore& src,
                       const std::string& src_group) {
    auto& d = dst.group(dst_group);
    const auto& s = src.group(src_group);
    if (d.params.size() != s.params.size() || d.buffers.size() != s.buffers.size())
        throw std::invalid_argument("copy_group_values: group structure mismatch");
    for (std::size_t i = 0; i < d.params.size(); ++i) {
        if (d.params[i].size() != s.params[i].size())
            throw std::invalid_argument("copy_group_values: parameter size mismatch");
        d.params[i].node()->value = s.params[i].node()->value;
    }
    for (std::size_t i = 0; i < d.buffers.size(); ++i) {
        if (d.buffers[i].size() != s.buffers[i].size())
            throw std::invalid_argument("copy_group_values: buffer size mismatch");
        d.buffers[i].node()->value = s.buffers[i].node()->value;
    }
}

// ---- layer pieces -------------------------------------------------------

LinearLayer::LinearLayer(int in, int out, ParamStore& ps, const std::string& group,
                         std::mt19937_64& rng, bool zero_init) {
    w = zero_init ? Tensor::zeros({out, in}, true) : init_he_uniform({out, in}, in, rng);
    b = Tensor::zeros({out}, true);
    w = ps.reg(group, w);
    b = ps.reg(group, b);
}

void LinearLayer::copy_from(const LinearLayer& o) {
    w.node()->value = o.w.node()->value;
    b.node()->value = o.b.node()->value;
}

ConvLayer::ConvLayer(int cin, int cout, int kernel, int stride_, ParamStore& ps,
                     const std::string& group, std::mt19937_64& rng, bool zero_init)
    : stride(stride_) {
    w = zero_init ? Tensor::zeros({cout, cin, kernel}, true)
                  : init_he_uniform({cout, cin, kernel}, cin * kernel, rng);
    b = Tensor::zeros({cout}, true);
    w = ps.reg(group, w);
    b = ps.reg(group, b);
}

void ConvLayer::copy_from(const ConvLayer& o) {
    w.node()->value = o.w.node()->value;
    b.node()->value = o.b.node()->value;
    stride = o.stride;
}

BnLayer::BnLayer(int channels, ParamStore& ps, const std::string& group) {
    gamma = Tensor::from({channels}, std::vector<double>(channels, 1.0), true);
    beta = Tensor::zeros({channels}, true);
    gamma = ps.reg(group, gamma);
    beta = ps.reg(group, beta);
    state = make_bn_state(channels);
    state.running_mean = ps.reg_buffer(group, state.running_mean);
    state.running_var = ps.reg_buffer(group, state.running_var);
}

void BnLayer::copy_from(const BnLayer& o) {
    gamma.node()->value = o.gamma.node()->value;
    beta.node()->value = o.beta.node()->value;
    state.running_mean.node()->value = o.state.running_mean.node()->value;
    state.running_var.node()->value = o.state.running_var.node()->value;
}

// ---- ViTBlock -----------------------------------------------------------

ViTBlock::ViTBlock(int embed, int heads_, int mlp_hidden, ParamStore& ps, const std::string& group,
                   std::mt19937_64& rng, bool zero_out)
    : heads(heads_) {
    if (embed % heads_ != 0) throw std::invalid_argument("ViTBlock: embed not divisible by heads");
    q = LinearLayer(embed, embed, ps, group, rng);
    k = LinearLayer(embed, embed, ps, group, rng);
    v = LinearLayer(embed, embed, ps, group, rng);
    o = LinearLayer(embed, embed, ps, group, rng, zero_out);
    ln1_g = ps.reg(group, Tensor::from({embed}, std::vector<double>(embed, 1.0), true));
    ln1_b = ps.reg(group, Tensor::zeros({embed}, true));
    ln2_g = ps.reg(group, Tensor::from({embed}, std::vector<double>(embed, 1.0), true));
    ln2_b = ps.reg(group, Tensor::zeros({embed}, true));
    m1 = LinearLayer(embed, mlp_hidden, ps, group, rng);
    m2 = LinearLayer(mlp_hidden, embed, ps, group, rng, zero_out);
}

namespace {

Tensor attn_branch(const ViTBlock& blk, const Tensor& x, const FwdCtx&) {
    const int embed = x.dim(x.ndim() - 1);
    const int dh = embed / blk.heads;
    Tensor xn = layernorm_lastdim(x, blk.ln1_g, blk.ln1_b);
    Tensor qh = split_heads(blk.q.forward(xn), blk.heads);
    Tensor kh = split_heads(blk.k.forward(xn), blk.heads);
    Tensor vh = split_heads(blk.v.forward(xn), blk.heads);
    Tensor s = scale(bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor a = softmax_lastdim(s);
    Tensor oh = merge_heads(bmm_nn(a, vh), blk.heads);
    return blk.o.forward(oh);
}

Tensor mlp_branch(const ViTBlock& blk, const Tensor& u) {
    Tensor un = layernorm_lastdim(u, blk.ln2_g, blk.ln2_b);
    return blk.m2.forward(relu(blk.m1.forward(un)));
}

}  // namespace

Tensor ViTBlock::forward(const Tensor& x, const FwdCtx& ctx) const {
    Tensor u = add(x, attn_branch(*this, x, ctx));
    return add(u, mlp_branch(*this, u));
}

Tensor ViTBlock::forward_increment(const Tensor& x, const FwdCtx& ctx) const {
    return add(attn_branch(*this, x, ctx), mlp_branch(*this, x));
}

void ViTBlock::copy_from(const ViTBlock& other) {
    heads = other.heads;
    q.copy_from(other.q);
    k.copy_from(other.k);
    v.copy_from(other.v);
    o.copy_from(other.o);
    ln1_g.node()->value = other.ln1_g.node()->value;
    ln1_b.node()->value = other.ln1_b.node()->value;
    ln2_g.node()->value = other.ln2_g.node()->value;
    ln2_b.node()->value = other.ln2_b.node()->value;
    m1.copy_from(other.m1);
    m2.copy_from(other.m2);
}

// ---- catalog ------------------------------------------------------------

void LayerSpec::validate() const {
    if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("LayerSpec: dims must be positive");
    if (kernel <= 0 || stride <= 0) throw std::invalid_argument("LayerSpec: kernel/stride must be positive");
    if (heads <= 0) throw std::invalid_argument("LayerSpec: heads must be positive");
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("LayerSpec: dropout rate outside [0,1)");
    if (kind == LayerKind::attention_block) {
        if (in_dim != out_dim) throw std::invalid_argument("LayerSpec: attention_block keeps width");
        if (in_dim % heads != 0) throw std::invalid_argument("LayerSpec: embed not divisible by heads");
        if (mlp_hidden <= 0) throw std::invalid_argument("LayerSpec: mlp_hidden must be positive");
    }
}

Layer::Layer(const LayerSpec& spec, ParamStore& ps, const std::string& group, std::uint64_t seed)
    : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    switch (spec_.kind) {
        case LayerKind::conv1d:
            conv_ = ConvLayer(spec_.in_dim, spec_.out_dim, spec_.kernel, spec_.stride, ps, group, rng);
            break;
        case LayerKind::bicausal_conv1d:
            conv_ = ConvLayer(spec_.in_dim, spec_.out_dim, spec_.kernel, 1, ps, group, rng);
            conv_right_ = ConvLayer(spec_.in_dim, spec_.out_dim, spec_.kernel, 1, ps, group, rng);
            break;
        case LayerKind::batchnorm:
            bn_ = BnLayer(spec_.in_dim, ps, group);
            break;
        case LayerKind::linear:
        case LayerKind::patch_embed:
            lin_ = LinearLayer(spec_.in_dim, spec_.out_dim, ps, group, rng);
            break;
        case LayerKind::attention_block:
            vit_ = ViTBlock(spec_.in_dim, spec_.heads, spec_.mlp_hidden, ps, group, rng);
            break;
        case LayerKind::relu:
        case LayerKind::dropout:
        case LayerKind::softmax:
            break;  // parameter free
    }
}

Tensor Layer::forward(const Tensor& x, const FwdCtx& ctx) {
    switch (spec_.kind) {
        case LayerKind::conv1d:
            return conv_.same(x);
        case LayerKind::bicausal_conv1d:
            return add(conv_.causal(x, true), conv_right_.causal(x, false));
        case LayerKind::batchnorm:
            return bn_.forward(x, ctx);
        case LayerKind::linear:
        case LayerKind::patch_embed:
            return lin_.forward(x);
        case LayerKind::relu:
            return relu(x);
        case LayerKind::dropout:
            return dropout(x, spec_.rate, ctx);
        case LayerKind::softmax:
            return softmax_lastdim(x);
        case LayerKind::attention_block:
            return vit_.forward(x, ctx);
    }
    throw std::logic_error("Layer::forward: unreachable");
}

}  // namespace ppg
