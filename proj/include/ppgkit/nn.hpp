#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ppgkit/tensor.hpp"

namespace ppg {

// He-style uniform initialization, U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
Tensor init_he_uniform(std::vector<int> shape, int fan_in, std::mt19937_64& rng);

/// Named parameter groups with per-group freezing and per-parameter Adagrad
/// accumulators. Buffers (running statistics) ride along for checkpointing
/// but are never optimized.
class ParamStore {
  public:
    struct Group {
        std::vector<Tensor> params;
        std::vector<Tensor> buffers;
        std::vector<std::vector<double>> accum;  // sized lazily to params
        bool trainable = true;
    };

    Tensor reg(const std::string& group, Tensor t);
    Tensor reg_buffer(const std::string& group, Tensor t);

    void set_trainable(const std::string& group, bool trainable);
    bool trainable(const std::string& group) const;

    // accumulator += grad^2; param -= lr * grad / sqrt(accumulator + 1e-10).
    // Trainable groups must have every gradient populated.
    void adagrad_step(double lr);
    void zero_grad();

    bool has_group(const std::string& name) const { return groups_.count(name) > 0; }
    Group& group(const std::string& name);
    const Group& group(const std::string& name) const;
    const std::map<std::string, Group>& groups() const { return groups_; }
    std::map<std::string, Group>& groups() { return groups_; }

  private:
    std::map<std::string, Group> groups_;
};

// Copy parameter and buffer values between identically shaped groups
// (modules built from the same spec register in the same order).
void copy_group_values(ParamStore& dst, const std::string& dst_group, const ParamStore& src,
                       const std::string& src_group);

// ---- reusable layer pieces ----------------------------------------------

struct LinearLayer {
    Tensor w;  // (out, in)
    Tensor b;  // (out)

    LinearLayer() = default;
    LinearLayer(int in, int out, ParamStore& ps, const std::string& group,
                std::mt19937_64& rng, bool zero_init = false);
    Tensor forward(const Tensor& x) const { return linear(x, w, b); }
    void copy_from(const LinearLayer& o);
};

struct ConvLayer {
    Tensor w;  // (cout, cin, k)
    Tensor b;  // (cout)
    int stride = 1;

    ConvLayer() = default;
    ConvLayer(int cin, int cout, int kernel, int stride, ParamStore& ps,
              const std::string& group, std::mt19937_64& rng, bool zero_init = false);
    Tensor same(const Tensor& x) const { return conv1d_same(x, w, b, stride); }
    Tensor causal(const Tensor& x, bool left) const { return conv1d_causal(x, w, b, left); }
    void copy_from(const ConvLayer& o);
};

struct BnLayer {
    Tensor gamma;
    Tensor beta;
    BnState state;

    BnLayer() = default;
    BnLayer(int channels, ParamStore& ps, const std::string& group);
    Tensor forward(const Tensor& x, const FwdCtx& ctx) { return batchnorm(x, gamma, beta, state, ctx); }
    void copy_from(const BnLayer& o);
};

/// Pre-norm transformer block: x + proj(MHSA(LN(x))), then + MLP(LN(.)).
/// The increment form drops the residual carries and returns only the two
/// branch outputs summed, which is exactly zero when the output projections
/// are zero-initialized.
struct ViTBlock {
    int heads = 1;
    LinearLayer q, k, v, o;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    LinearLayer m1, m2;

    ViTBlock() = default;
    ViTBlock(int embed, int heads, int mlp_hidden, ParamStore& ps, const std::string& group,
             std::mt19937_64& rng, bool zero_out = false);
    Tensor forward(const Tensor& x, const FwdCtx& ctx) const;
    Tensor forward_increment(const Tensor& x, const FwdCtx& ctx) const;
    void copy_from(const ViTBlock& other);
};

// ---- layer catalog ------------------------------------------------------

enum class LayerKind {
    conv1d,
    bicausal_conv1d,
    batchnorm,
    linear,
    relu,
    dropout,
    softmax,
    attention_block,
    patch_embed,
};

struct LayerSpec {
    LayerKind kind = LayerKind::linear;
    int in_dim = 1;       // channels or features
    int out_dim = 1;
    int kernel = 1;
    int stride = 1;
    int heads = 1;
    int mlp_hidden = 4;   // attention_block MLP width
    double rate = 0.0;    // dropout

    void validate() const;
};

/// One catalog layer with its parameters registered under a store group.
class Layer {
  public:
    Layer(const LayerSpec& spec, ParamStore& ps, const std::string& group, std::uint64_t seed);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    const LayerSpec& spec() const { return spec_; }

  private:
    LayerSpec spec_;
    ConvLayer conv_;
    ConvLayer conv_right_;  // bicausal second half
    LinearLayer lin_;
    BnLayer bn_;
    ViTBlock vit_;
};

}  // namespace ppg
