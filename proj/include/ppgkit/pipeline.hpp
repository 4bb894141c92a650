#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ppgkit/metrics.hpp"
#include "ppgkit/spectrogram.hpp"
#include "ppgkit/transfer.hpp"
#include "ppgkit/vmd.hpp"

namespace ppg {

struct PipelineConfig {
    double rate = 125.0;       // resampling target, Hz
    double seconds = 5.6;      // window length
    double step_seconds = 0.8;
    double gamma = 0.4;        // past/future fraction of each window
    double mask_ratio = 0.75;  // pretraining patch masking

    VmdConfig vmd;
    StftConfig stft;
    TemporalEncoderSpec enc;  // input_channels is derived from vmd.k
    MlpDecoderSpec dec;       // embed/out shape derived from enc and the window
    SpecModelSpec smodel;

    int fusion_rank = 8;
    int fusion_iterations = 2;
    int fusion_kernel = 3;
    int twrg_hidden = 32;

    TrainConfig pre_temporal, pre_spectro, pre_mixed, adapt;
    TransferMode mode = TransferMode::dpt;
    double train_fraction = 1.0;  // of the 70% training records
    std::vector<std::uint64_t> seeds = {0};
    std::string out_dir;  // nonempty: checkpoints + manifest written here

    int window_len() const;
    int step_len() const;
    void validate() const;
};

/// Shapes every phase agrees on, derived once from the config.
struct ResolvedSpecs {
    TemporalEncoderSpec enc;
    MlpDecoderSpec dec;
    SpecModelSpec smodel;
    NbtsfSpec fusion;
    int window_len = 0;
    int segment_len = 0;  // past/future columns
    int anchor_len = 0;
    int frames = 0;
    int bins = 0;
    int patch_count = 0;  // padded grid patches = downstream token count
};

ResolvedSpecs resolve_specs(const PipelineConfig& cfg);

/// One window after Setup + Pseudolabel Generation: the decomposed
/// temporal item, the masked patch set for reconstruction pretraining,
/// and the unmasked patch set used for latent extraction.
struct WindowData {
    TemporalItem titem;
    SpectrogramPatchSet masked;
    SpectrogramPatchSet full;
    double label = 0.0;  // copied from the source record when present
};

// Phases 1-2 on a record list, one inner vector per record (the split is
// by record). Labeled mode requires record.label to be present.
std::vector<std::vector<WindowData>> prepare_windows(const PipelineConfig& cfg,
                                                     const ResolvedSpecs& rs,
                                                     const std::vector<PpgRecord>& records,
                                                     bool labeled, std::uint64_t seed);

struct RecordSplit {
    std::vector<int> train, val, test;  // record indices
};

// Fixed 70/10/20 by record, in the given order; train is then cut to
// ceil(train_fraction * count). Needs at least 3 records.
RecordSplit split_records(int n_records, double train_fraction);

struct AdaptOutput {
    FusionReport report;
    std::vector<double> val_labels, val_predictions;
    std::vector<double> test_labels, test_predictions;
    RegressionMetrics val_metrics, test_metrics;
    TrainTrace temporal_trace, spectro_trace, mixed_trace;
    double adapt_seconds = 0.0, inference_seconds = 0.0;
};

// Phases 4-5 from pretrained models: train the three downstream heads on
// the training records, fit the ternary combiner on their training
// predictions, and evaluate the combined predictor on the held-out
// records. Pure function of (model parameters, labeled data, seed).
AdaptOutput run_adaptation(const PipelineConfig& cfg, const ResolvedSpecs& rs,
                           const CtfgaModel& ctfga, const MaeModel& mae, const TwrgModel& twrg,
                           const std::vector<PpgRecord>& labeled, std::uint64_t run_seed);

struct PhaseTimes {
    double setup = 0.0, pseudolabel = 0.0, pretrain = 0.0, adapt = 0.0, inference = 0.0;
};

struct PipelineRun {
    std::uint64_t seed = 0;
    FusionReport report;
    std::vector<double> test_labels, test_predictions;
    RegressionMetrics val_metrics, test_metrics;
    TrainTrace ctfga_trace, mae_trace, twrg_trace;
    PhaseTimes times;
};

struct PipelineResult {
    std::vector<PipelineRun> runs;  // one per configured seed
    MetricSummary summary;
};

// Full Setup -> Pseudolabel -> Pretrain -> Adapt -> Inference chain, once
// per seed. With out_dir set, phase-3 checkpoints and a JSON manifest are
// written there. Errors carry a [phase] tag.
PipelineResult run_pipeline(const PipelineConfig& cfg, const std::vector<PpgRecord>& unlabeled,
                            const std::vector<PpgRecord>& labeled);

struct SweepResult {
    std::vector<double> gammas, Ts;
    Mat raw;         // validation MAE, rows = gammas, cols = Ts
    Mat normalized;  // min-max scaled to [0, 1]; flat grids go to all-zero
    std::vector<double> row_means, col_means;  // over the normalized grid
    int argmin_row = 0, argmin_col = 0;        // first minimum of the raw grid
};

SweepResult sweep_gamma_T(const PipelineConfig& base, const std::vector<double>& gammas,
                          const std::vector<double>& Ts, const std::vector<PpgRecord>& unlabeled,
                          const std::vector<PpgRecord>& labeled);

// Flat key-value view of the config (one "key = value" per line). Same
// keys the config-file loader accepts; flags and files stay 1:1.
std::string config_echo(const PipelineConfig& cfg);
void apply_config_kv(PipelineConfig& cfg, const std::string& key, const std::string& value);
PipelineConfig load_config_file(const std::string& path);

}  // namespace ppg
