#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "ppgkit/nn.hpp"
#include "ppgkit/signal.hpp"

namespace ppg {

// ---- bilinear temporal-spectrogram fusion -------------------------------

struct NbtsfSpec {
    int h_dim = 0;       // temporal feature width (2E)
    int z_dim = 0;       // flattened spectrogram latent width
    int l = 8;           // rank of the outer-product factor
    int iterations = 2;  // refinement rounds
    int kernel = 3;

    int k() const { return std::min(h_dim, z_dim); }
    void validate() const;
};

/// Factorized bilinear pooling over a temporal vector h and a spectrogram
/// latent z, with optional rounds of convolutional cross-refinement. The
/// refinement runs a conv along the rank axis then a bicausal conv along
/// the feature axis (and the reverse for the z side), renormalizes, and
/// collapses back to projected feature vectors before the bilinear map is
/// recomputed.
class Nbtsf {
  public:
    Nbtsf() = default;
    Nbtsf(const NbtsfSpec& spec, ParamStore& ps, const std::string& group, std::uint64_t seed);

    // h: (B, h_dim), z: (B, z_dim) -> (B, k, l).
    Tensor forward(const Tensor& h, const Tensor& z, const FwdCtx& ctx);

    const NbtsfSpec& spec() const { return spec_; }

  private:
    NbtsfSpec spec_;
    Tensor w1_, w2_;    // (k, h_dim), (k, z_dim)
    Tensor u_, v_;      // (l)
    Tensor w1p_, w2p_;  // (l, h_dim), (l, z_dim)
    ConvLayer s2t_spec_;
    ConvLayer s2t_temp_l_, s2t_temp_r_;
    BnLayer s2t_bn_;
    ConvLayer t2s_temp_l_, t2s_temp_r_;
    ConvLayer t2s_spec_;
    BnLayer t2s_bn_;
};

// Single item: h (h_dim), z (z_dim) -> (k, l).
Tensor nbtsf_fuse(Nbtsf& n, const Tensor& h, const Tensor& z, const FwdCtx& ctx);

// ---- interpretable three-way combiner -----------------------------------

struct FusionReport {
    double phi0 = 0.0;
    std::array<double, 3> phi{0.0, 0.0, 0.0};
    double r_squared = 0.0;
};

// Least squares of y on [1 | X] with a pseudo-inverse (min-norm) solution
// when X is rank deficient. X is m x 3, m >= 4, y non-constant.
FusionReport ols_fit(const Mat& x, const std::vector<double>& y);

double ternary_predict(const std::array<double, 3>& preds, const FusionReport& report);

}  // namespace ppg
