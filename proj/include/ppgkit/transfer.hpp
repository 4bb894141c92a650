#pragma once

#include <functional>

#include "ppgkit/pretext.hpp"

namespace ppg {

enum class TransferMode { fine_tune, linear_probe, dpt };

struct LabeledTemporalItem {
    TemporalItem item;
    double label = 0.0;
};

struct LabeledSpectroItem {
    SpectrogramPatchSet patches;
    double label = 0.0;
};

struct LabeledMixedItem {
    TwrgItem item;
    double label = 0.0;
};

struct TransferOutcome {
    std::vector<double> predictions;  // eval predictions with the final params
    TrainTrace trace;
};

// Generic mean-absolute-error regression on any embedding provider. The
// embedder returns (B, F) for the requested item indices with whatever
// graph its trainable parameters carry; the head maps F -> 1.
using BatchEmbedder = std::function<Tensor(const std::vector<int>&, const FwdCtx&)>;

TransferOutcome train_regression(ParamStore& ps, const BatchEmbedder& embed, LinearLayer& head,
                                 const std::vector<double>& labels, const TrainConfig& cfg);

/// Temporal downstream adapter over a pretrained encoder/decoder pair.
/// fine_tune: trainable encoder copy + zero head on (h_A || h_C).
/// linear_probe: frozen encoder, head only.
/// dpt: frozen branch produces the decoder's hidden-activation queue; the
/// trainable branch reads it through zero decoder layers.
class TemporalTransfer {
  public:
    TemporalTransfer(const CtfgaModel& pretrained, TransferMode mode, std::uint64_t seed);

    TransferOutcome train(const std::vector<LabeledTemporalItem>& items, const TrainConfig& cfg);
    double predict(const TemporalItem& item);

    // Frozen-branch queue and trainable-branch trace for one item (eval).
    std::vector<Tensor> ap_queue(const TemporalItem& item);
    std::vector<Tensor> rp_trace(const TemporalItem& item);
    // (h_A || h_C) from the mode's feature encoder (the trainable copy
    // when one exists), eval mode, length 2E.
    std::vector<double> embed(const TemporalItem& item);

    TransferMode mode;
    ParamStore ps;
    TemporalEncoder ap_enc;  // frozen
    MlpDecoder ap_dec;       // frozen (dpt only)
    TemporalEncoder rp_enc;  // trainable copy (fine_tune, dpt)
    ZdlStack zdl;            // dpt only
    LinearLayer head;

  private:
    Tensor predict_batch(const std::vector<TemporalItem>& items, const std::vector<int>& idxs,
                         const FwdCtx& ctx);
    friend struct TemporalTransferAccess;
};

/// Spectrogram downstream adapter over pretrained encoder/decoder blocks.
/// dpt follows the locked/unlocked split: the locked encoder and decoder
/// blocks produce a queued token trace; unlocked copies add increments
/// whose output projections start at zero.
class SpectroTransfer {
  public:
    SpectroTransfer(const MaeModel& pretrained, TransferMode mode, std::uint64_t seed);

    TransferOutcome train(const std::vector<LabeledSpectroItem>& items, const TrainConfig& cfg);
    double predict(const SpectrogramPatchSet& item);

    std::vector<Tensor> locked_trace(const SpectrogramPatchSet& item);
    std::vector<Tensor> rp_trace(const SpectrogramPatchSet& item);
    // Final trainable-branch tokens, flattened (P * E'), eval mode.
    std::vector<double> latent(const SpectrogramPatchSet& item);

    TransferMode mode;
    ParamStore ps;
    SpecModelSpec spec;
    SpecEncoder locked_enc;
    SpecDecoder locked_dec;
    SpecEncoder unlocked_enc;
    std::vector<ViTBlock> unlocked_blocks;
    LinearLayer head;  // on mean-pooled tokens

  private:
    Tensor item_tokens(const SpectrogramPatchSet& item, const FwdCtx& ctx);
};

/// Mixed-domain head: the pretrained fusion trunk adapted with a fresh
/// zero-initialized scalar head; the order-classifier head stays frozen.
class MixedTransfer {
  public:
    MixedTransfer(const TwrgModel& pretrained, std::uint64_t seed);

    TransferOutcome train(const std::vector<LabeledMixedItem>& items, const TrainConfig& cfg);
    double predict(const TwrgItem& item);

    TwrgModel model;  // cloned values; groups nbtsf + twrg_trunk trainable
    LinearLayer head;
};

}  // namespace ppg
