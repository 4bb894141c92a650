#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ppgkit/nn.hpp"
#include "ppgkit/signal.hpp"
#include "ppgkit/spectrogram.hpp"

namespace ppg {

// ---- temporal encoder ---------------------------------------------------

struct TemporalEncoderSpec {
    int input_channels = 5;  // decomposition modes + residual row
    std::vector<int> widths = {16, 16, 16};
    std::array<int, 3> kernels = {9, 19, 39};
    int embed_dim = 16;
    int guide_stages = 3;  // leading blocks fed vpg, apg, jpg in that order

    void validate() const;
};

/// Inception-style block: three same-padded convolutions of different reach
/// plus a 1x1 bottleneck, summed, normalized, rectified.
struct NetBlock {
    ConvLayer c1, c2, c3, bneck;
    BnLayer bn;

    NetBlock() = default;
    NetBlock(int cin, int cout, std::array<int, 3> kernels, ParamStore& ps,
             const std::string& group, std::mt19937_64& rng);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);
    void copy_from(const NetBlock& o);
};

/// Derivative injection: single-channel conv widened to the block width,
/// batch-normalized, added onto the block output.
struct GuideBranch {
    ConvLayer conv;
    BnLayer bn;

    GuideBranch() = default;
    GuideBranch(int cout, int kernel, ParamStore& ps, const std::string& group, std::mt19937_64& rng);
    Tensor forward(const Tensor& g, const FwdCtx& ctx);
    void copy_from(const GuideBranch& o);
};

class TemporalEncoder {
  public:
    TemporalEncoder() = default;
    TemporalEncoder(const TemporalEncoderSpec& spec, ParamStore& ps, const std::string& group,
                    std::uint64_t seed);

    // x: (B, C, T); each guide: (B, 1, T). Returns (B, E).
    Tensor forward(const Tensor& x, const Tensor& vpg, const Tensor& apg, const Tensor& jpg,
                   const FwdCtx& ctx);
    Tensor forward(const Tensor& x, const FwdCtx& ctx);  // guide-free variant

    void copy_from(const TemporalEncoder& o);
    const TemporalEncoderSpec& spec() const { return spec_; }

  private:
    TemporalEncoderSpec spec_;
    std::vector<NetBlock> blocks_;
    std::vector<GuideBranch> guides_;
    LinearLayer proj_;
};

// Single window (C, T) with its derivative stack -> embedding (E).
Tensor temporal_encode(TemporalEncoder& enc, const Mat& x, const DerivativeStack& d, const FwdCtx& ctx);

// ---- anchor decoder -----------------------------------------------------

struct MlpDecoderSpec {
    int embed_dim = 16;  // decoder consumes (h_A || h_C), width 2E
    int hidden = 64;
    int out_rows = 5;
    int out_cols = 140;
    double rate = 0.1;  // dropout between adjacent hidden layers

    int in_dim() const { return 2 * embed_dim; }
    int out_dim() const { return out_rows * out_cols; }
    void validate() const;
};

class MlpDecoder {
  public:
    MlpDecoder() = default;
    MlpDecoder(const MlpDecoderSpec& spec, ParamStore& ps, const std::string& group,
               std::uint64_t seed, bool zero_last = false);

    // h: (B, 2E) -> (B, out_rows*out_cols).
    Tensor forward(const Tensor& h, const FwdCtx& ctx);
    // Also records the three hidden activations (the transfer queue).
    Tensor forward_trace(const Tensor& h, const FwdCtx& ctx, std::vector<Tensor>& trace);

    void copy_from(const MlpDecoder& o);
    const MlpDecoderSpec& spec() const { return spec_; }

  private:
    MlpDecoderSpec spec_;
    LinearLayer l1_, l2_, l3_, l4_;
};

// Single item: h (2E) -> anchor matrix (out_rows, out_cols).
Mat temporal_decode(MlpDecoder& dec, const Tensor& h, const FwdCtx& ctx);

// ---- zero decoder layers ------------------------------------------------

/// h1' = h2_queued + dropout(ReLU(BN(W0 h1 + b0))), W0 and b0 zero at init
/// so the layer starts as an exact pass-through of the queued activation.
struct ZdlLayer {
    LinearLayer lin;
    BnLayer bn;
    double rate = 0.1;

    ZdlLayer() = default;
    ZdlLayer(int in, int out, double rate, ParamStore& ps, const std::string& group);
    Tensor forward(const Tensor& h1_prev, const Tensor& h2_queued, const FwdCtx& ctx);
};

Tensor zdl_forward(ZdlLayer& layer, const Tensor& h1_prev, const Tensor& h2_queued, const FwdCtx& ctx);

struct ZdlStack {
    std::vector<ZdlLayer> layers;

    ZdlStack() = default;
    // Dimensions mirror the decoder's hidden chain: 2E -> H -> H -> H.
    ZdlStack(const MlpDecoderSpec& dspec, ParamStore& ps, const std::string& group);
    // queue holds one tensor per layer; trace (optional) collects the outputs.
    Tensor forward(const Tensor& h0, const std::vector<Tensor>& queue, const FwdCtx& ctx,
                   std::vector<Tensor>* trace = nullptr);
};

// ---- spectrogram models -------------------------------------------------

struct SpecModelSpec {
    int patch_h = 4;
    int patch_w = 4;
    int embed_dim = 16;  // E'
    int enc_depth = 2;
    int dec_depth = 1;
    int heads = 2;
    int mlp_hidden = 32;
    int max_tokens = 512;  // positional table length

    int patch_dim() const { return patch_h * patch_w; }
    void validate() const;
};

// Fixed sinusoidal table, (max_tokens, embed) rows by flat patch index.
Tensor sinusoidal_positions(int max_tokens, int embed);

class SpecEncoder {
  public:
    SpecEncoder() = default;
    SpecEncoder(const SpecModelSpec& spec, ParamStore& ps, const std::string& group, std::uint64_t seed);

    // vis: (B, P, patch_dim) visible patch pixels; positions: their flat
    // grid indices (shared across the batch). Returns (B, P, E').
    Tensor forward(const Tensor& vis, const std::vector<int>& positions, const FwdCtx& ctx);

    void copy_from(const SpecEncoder& o);
    bool use_pos = true;
    const SpecModelSpec& spec() const { return spec_; }

  private:
    SpecModelSpec spec_;
    LinearLayer embed_;
    Tensor pos_;  // constant
    std::vector<ViTBlock> blocks_;
};

class SpecDecoder {
  public:
    SpecDecoder() = default;
    SpecDecoder(const SpecModelSpec& spec, ParamStore& ps, const std::string& group,
                std::uint64_t seed, bool zero_pixel = false);

    // z: (B, Pv, E') from the encoder. Mask tokens fill the other slots,
    // positions re-encoded, blocks applied; returns all tokens (B, total, E').
    Tensor forward_tokens(const Tensor& z, const SpectrogramPatchSet& ps_info, const FwdCtx& ctx);
    // Through the pixel projection and back into the padded grid
    // (B, padded_rows, padded_cols).
    Tensor forward_grid(const Tensor& z, const SpectrogramPatchSet& ps_info, const FwdCtx& ctx);

    void copy_from(const SpecDecoder& o);
    std::vector<ViTBlock>& blocks() { return blocks_; }
    const SpecModelSpec& spec() const { return spec_; }

  private:
    SpecModelSpec spec_;
    Tensor mask_token_;
    Tensor pos_;
    std::vector<ViTBlock> blocks_;
    LinearLayer pixel_;
};

}  // namespace ppg
