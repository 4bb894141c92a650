#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ppgkit/fusion.hpp"
#include "ppgkit/models.hpp"

namespace ppg {

struct TrainConfig {
    double lr = 0.001;
    int batch_size = 32;
    int epochs = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainTrace {
    std::vector<double> epoch_loss;
    std::vector<double> epoch_acc;  // classification loops only
};

// In-place Fisher-Yates so shuffle order is identical on every platform.
void seeded_shuffle(std::vector<int>& idx, std::mt19937_64& rng);

// ---- temporal pretext ---------------------------------------------------

struct TemporalItem {
    Mat past, anchor, future;
    DerivativeStack d_past, d_future;
};

// Derivatives taken from each segment's first (raw-signal) row.
TemporalItem make_temporal_item(const PafPartition& part);

struct SegmentBatch {
    Tensor x, vpg, apg, jpg;
};

// Stack the past (or future) segments of the chosen items, shapes checked.
SegmentBatch stack_segment(const std::vector<TemporalItem>& items, const std::vector<int>& idxs,
                           bool past);
Tensor stack_anchor(const std::vector<TemporalItem>& items, const std::vector<int>& idxs);

/// Encoder + anchor decoder bundle with its parameter store. Groups:
/// "encoder", "decoder".
struct CtfgaModel {
    ParamStore ps;
    TemporalEncoderSpec espec;
    MlpDecoderSpec dspec;
    TemporalEncoder enc;
    MlpDecoder dec;

    CtfgaModel(const TemporalEncoderSpec& es, const MlpDecoderSpec& ds, std::uint64_t seed,
               bool zero_decoder = false);
};

TrainTrace ctfga_pretrain(CtfgaModel& model, const std::vector<TemporalItem>& items,
                          const TrainConfig& cfg);

// ---- spectrogram pretext ------------------------------------------------

/// Masked-reconstruction bundle. Groups: "spec_encoder", "spec_decoder".
struct MaeModel {
    ParamStore ps;
    SpecModelSpec spec;
    SpecEncoder enc;
    SpecDecoder dec;

    MaeModel(const SpecModelSpec& s, std::uint64_t seed, bool zero_pixel = false);
};

// Gather one patch set's visible pixels as a (1, Pv, patch_dim) tensor.
Tensor visible_pixels(const SpectrogramPatchSet& ps);

TrainTrace mae_pretrain(MaeModel& model, const std::vector<SpectrogramPatchSet>& items,
                        const TrainConfig& cfg);

// ---- window-order pretext -----------------------------------------------

struct TwrgItem {
    std::vector<double> h_a, h_c;  // temporal embeddings, each length E
    std::vector<double> z;         // flattened spectrogram latent, length D
};

/// Fusion trunk + order classifier. Groups: "nbtsf", "twrg_trunk",
/// "twrg_cls" (the 2-logit head, zero-initialized so the untrained
/// classifier is exactly uniform).
struct TwrgModel {
    ParamStore ps;
    NbtsfSpec nspec;
    int hidden = 32;
    Nbtsf nbtsf;
    LinearLayer t1, t2;
    LinearLayer cls;

    TwrgModel(const NbtsfSpec& ns, int hidden, std::uint64_t seed);

    Tensor trunk(const Tensor& h, const Tensor& z, const FwdCtx& ctx);  // (B,hidden)
    Tensor logits(const Tensor& h, const Tensor& z, const FwdCtx& ctx);  // (B,2)
};

TrainTrace twrg_pretrain(TwrgModel& model, const std::vector<TwrgItem>& items, const TrainConfig& cfg);

}  // namespace ppg
