#include "ppgkit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ppgkit/checkpoint.hpp"
#include "ppgkit/errors.hpp"

namespace ppg {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename F>
auto phase(const char* tag, F&& f) {
    try {
        return f();
    } catch (const DataError& e) {
        throw DataError(std::string("[") + tag + "] " + e.what());
    } catch (const NumericError& e) {
        throw NumericError(std::string("[") + tag + "] " + e.what());
    }
}

struct RawWindow {
    Mat dilated;
    Spectrogram spec;
    double label = 0.0;
};

// Setup phase: resample, normalize, slide, decompose, transform.
std::vector<std::vector<RawWindow>> setup_records(const PipelineConfig& cfg,
                                                  const ResolvedSpecs& rs,
                                                  const std::vector<PpgRecord>& records,
                                                  bool labeled) {
    if (records.empty()) throw DataError("no input records");
    std::vector<std::vector<RawWindow>> out;
    for (std::size_t ri = 0; ri < records.size(); ++ri) {
        const PpgRecord& rec = records[ri];
        if (labeled && !rec.label)
            throw DataError("record " + std::to_string(ri) + " carries no label");
        PpgRecord r = rec.rate == cfg.rate ? rec : resample(rec, cfg.rate);
        r.samples = zscore(r.samples);
        auto windows = window_slide(r, cfg.seconds, cfg.step_seconds);
        if (windows.empty())
            throw DataError("record " + std::to_string(ri) + " is shorter than one window");
        std::vector<RawWindow> rws;
        for (const auto& w : windows) {
            RawWindow rw;
            ModeSet modes = vmd_decompose(w, cfg.vmd);
            rw.dilated = dilate(w, modes);
            rw.spec = stft(w, cfg.stft);
            if (rw.spec.frames != rs.frames || rw.spec.bins != rs.bins)
                throw DataError("spectrogram geometry drifted from the resolved shape");
            rw.label = rec.label.value_or(0.0);
            rws.push_back(std::move(rw));
        }
        out.push_back(std::move(rws));
    }
    return out;
}

// Pseudolabel phase: partition and mask.
std::vector<std::vector<WindowData>> pseudolabel_records(
    const PipelineConfig& cfg, std::vector<std::vector<RawWindow>>& raw, std::uint64_t seed) {
    std::vector<std::vector<WindowData>> out;
    std::uint64_t idx = 0;
    for (auto& rws : raw) {
        std::vector<WindowData> wins;
        for (auto& rw : rws) {
            WindowData wd;
            PafPartition part = partition_paf(rw.dilated, cfg.gamma);
            wd.titem = make_temporal_item(part);
            wd.masked = patchify_and_mask(rw.spec, cfg.smodel.patch_h, cfg.smodel.patch_w,
                                          cfg.mask_ratio, seed * 1000003ull + idx);
            wd.full = patchify_and_mask(rw.spec, cfg.smodel.patch_h, cfg.smodel.patch_w, 0.0,
                                        seed * 1000003ull + idx);
            wd.label = rw.label;
            ++idx;
            wins.push_back(std::move(wd));
        }
        out.push_back(std::move(wins));
    }
    return out;
}

TrainConfig offset_seed(TrainConfig tc, std::uint64_t run_seed) {
    tc.seed += run_seed;
    return tc;
}

std::vector<const WindowData*> gather(const std::vector<std::vector<WindowData>>& groups,
                                      const std::vector<int>& record_idxs) {
    std::vector<const WindowData*> out;
    for (int ri : record_idxs)
        for (const auto& w : groups[ri]) out.push_back(&w);
    return out;
}

}  // namespace

int PipelineConfig::window_len() const { return static_cast<int>(std::lround(rate * seconds)); }
int PipelineConfig::step_len() const { return static_cast<int>(std::lround(rate * step_seconds)); }

void PipelineConfig::validate() const {
    if (rate <= 0 || seconds <= 0 || step_seconds <= 0)
        throw DataError("pipeline config: rate, seconds, step_seconds must be positive");
    if (!(gamma > 0.0 && gamma < 0.5)) throw DataError("pipeline config: gamma must be in (0, 0.5)");
    if (mask_ratio < 0.0 || mask_ratio >= 1.0)
        throw DataError("pipeline config: mask_ratio must be in [0, 1)");
    if (!(train_fraction > 0.0 && train_fraction <= 1.0))
        throw DataError("pipeline config: train_fraction must be in (0, 1]");
    if (seeds.empty()) throw DataError("pipeline config: at least one seed");
    if (fusion_rank < 1 || fusion_iterations < 0 || fusion_kernel < 1 || twrg_hidden < 1)
        throw DataError("pipeline config: fusion/twrg sizes must be positive");
    vmd.validate();
    stft.validate();
    pre_temporal.validate();
    pre_spectro.validate();
    pre_mixed.validate();
    adapt.validate();
    if (step_len() < 1) throw DataError("pipeline config: step shorter than one sample");
}

ResolvedSpecs resolve_specs(const PipelineConfig& cfg) {
    cfg.validate();
    ResolvedSpecs rs;
    rs.window_len = cfg.window_len();
    rs.segment_len = static_cast<int>(std::floor(cfg.gamma * rs.window_len));
    rs.anchor_len = rs.window_len - 2 * rs.segment_len;
    if (rs.segment_len < 8)
        throw DataError("resolve: past/future segments need at least 8 samples");
    if (rs.anchor_len < 1) throw DataError("resolve: empty anchor");
    if (rs.window_len < cfg.stft.n_fft)
        throw DataError("resolve: window shorter than one transform frame");

    rs.enc = cfg.enc;
    rs.enc.input_channels = cfg.vmd.k + 1;
    rs.enc.validate();

    rs.dec = cfg.dec;
    rs.dec.embed_dim = cfg.enc.embed_dim;
    rs.dec.out_rows = cfg.vmd.k + 1;
    rs.dec.out_cols = rs.anchor_len;
    rs.dec.validate();

    rs.smodel = cfg.smodel;
    rs.smodel.validate();
    rs.frames = (rs.window_len - cfg.stft.n_fft) / cfg.stft.hop + 1;
    rs.bins = cfg.stft.n_fft / 2 + 1;
    const int pr = (rs.frames + rs.smodel.patch_h - 1) / rs.smodel.patch_h;
    const int pc = (rs.bins + rs.smodel.patch_w - 1) / rs.smodel.patch_w;
    rs.patch_count = pr * pc;
    if (rs.patch_count > rs.smodel.max_tokens)
        throw DataError("resolve: patch grid exceeds the positional table");

    rs.fusion.h_dim = 2 * cfg.enc.embed_dim;
    rs.fusion.z_dim = rs.patch_count * rs.smodel.embed_dim;
    rs.fusion.l = cfg.fusion_rank;
    rs.fusion.iterations = cfg.fusion_iterations;
    rs.fusion.kernel = cfg.fusion_kernel;
    rs.fusion.validate();
    return rs;
}

std::vector<std::vector<WindowData>> prepare_windows(const PipelineConfig& cfg,
                                                     const ResolvedSpecs& rs,
                                                     const std::vector<PpgRecord>& records,
                                                     bool labeled, std::uint64_t seed) {
    auto raw = phase("setup", [&] { return setup_records(cfg, rs, records, labeled); });
    return phase("pseudolabel", [&] { return pseudolabel_records(cfg, raw, seed); });
}

RecordSplit split_records(int n_records, double train_fraction) {
    if (n_records < 3) throw DataError("split: need at least 3 records for 70/10/20");
    int n_train = std::max(1, static_cast<int>(std::floor(0.7 * n_records)));
    int n_val = std::max(1, static_cast<int>(std::floor(0.1 * n_records)));
    if (n_train + n_val >= n_records) n_train = n_records - n_val - 1;
    const int n_test = n_records - n_train - n_val;
    if (n_train < 1 || n_test < 1) throw DataError("split: degenerate record split");

    const int used = static_cast<int>(std::ceil(train_fraction * n_train));
    RecordSplit sp;
    for (int i = 0; i < used; ++i) sp.train.push_back(i);
    for (int i = n_train; i < n_train + n_val; ++i) sp.val.push_back(i);
    for (int i = n_train + n_val; i < n_records; ++i) sp.test.push_back(i);
    return sp;
}

AdaptOutput run_adaptation(const PipelineConfig& cfg, const ResolvedSpecs& rs,
                           const CtfgaModel& ctfga, const MaeModel& mae, const TwrgModel& twrg,
                           const std::vector<PpgRecord>& labeled, std::uint64_t run_seed) {
    const auto groups = prepare_windows(cfg, rs, labeled, true, run_seed + 11);
    const RecordSplit sp = split_records(static_cast<int>(groups.size()), cfg.train_fraction);
    const auto train_w = gather(groups, sp.train);
    const auto val_w = gather(groups, sp.val);
    const auto test_w = gather(groups, sp.test);

    AdaptOutput out;
    const auto t_adapt = Clock::now();
    phase("adapt", [&] {
        const TrainConfig ac = offset_seed(cfg.adapt, run_seed);

        TemporalTransfer temporal(ctfga, cfg.mode, run_seed + 401);
        std::vector<LabeledTemporalItem> tt;
        for (const auto* w : train_w) tt.push_back({w->titem, w->label});
        out.temporal_trace = temporal.train(tt, ac).trace;

        SpectroTransfer spectro(mae, cfg.mode, run_seed + 402);
        std::vector<LabeledSpectroItem> st;
        for (const auto* w : train_w) st.push_back({w->full, w->label});
        out.spectro_trace = spectro.train(st, ac).trace;

        const int e = rs.enc.embed_dim;
        auto mixed_item = [&](const WindowData& w) {
            const std::vector<double> h = temporal.embed(w.titem);
            TwrgItem it;
            it.h_a.assign(h.begin(), h.begin() + e);
            it.h_c.assign(h.begin() + e, h.end());
            it.z = spectro.latent(w.full);
            return it;
        };
        MixedTransfer mixed(twrg, run_seed + 403);
        std::vector<LabeledMixedItem> mt;
        for (const auto* w : train_w) mt.push_back({mixed_item(*w), w->label});
        out.mixed_trace = mixed.train(mt, ac).trace;

        auto branch = [&](const WindowData& w) {
            return std::array<double, 3>{temporal.predict(w.titem), spectro.predict(w.full),
                                         mixed.predict(mixed_item(w))};
        };

        Mat x(static_cast<int>(train_w.size()), 3);
        std::vector<double> y(train_w.size());
        for (std::size_t i = 0; i < train_w.size(); ++i) {
            const auto b = branch(*train_w[i]);
            for (int j = 0; j < 3; ++j) x.at(static_cast<int>(i), j) = b[j];
            y[i] = train_w[i]->label;
        }
        out.report = ols_fit(x, y);
        out.adapt_seconds = elapsed(t_adapt);

        const auto t_inf = Clock::now();
        auto evaluate_split = [&](const std::vector<const WindowData*>& ws,
                                  std::vector<double>& labels, std::vector<double>& preds) {
            for (const auto* w : ws) {
                labels.push_back(w->label);
                preds.push_back(ternary_predict(branch(*w), out.report));
            }
        };
        evaluate_split(val_w, out.val_labels, out.val_predictions);
        evaluate_split(test_w, out.test_labels, out.test_predictions);
        out.val_metrics = regression_metrics(out.val_labels, out.val_predictions);
        out.test_metrics = regression_metrics(out.test_labels, out.test_predictions);
        out.inference_seconds = elapsed(t_inf);
        return 0;
    });
    return out;
}

namespace {

PipelineRun run_once(const PipelineConfig& cfg, const ResolvedSpecs& rs,
                     const std::vector<PpgRecord>& unlabeled,
                     const std::vector<PpgRecord>& labeled, std::uint64_t seed,
                     std::vector<std::string>* ckpt_paths) {
    PipelineRun run;
    run.seed = seed;

    auto t0 = Clock::now();
    auto raw = phase("setup", [&] { return setup_records(cfg, rs, unlabeled, false); });
    run.times.setup = elapsed(t0);

    t0 = Clock::now();
    auto groups = phase("pseudolabel", [&] { return pseudolabel_records(cfg, raw, seed); });
    run.times.pseudolabel = elapsed(t0);

    std::vector<TemporalItem> titems;
    std::vector<SpectrogramPatchSet> masked, full;
    for (const auto& g : groups)
        for (const auto& w : g) {
            titems.push_back(w.titem);
            masked.push_back(w.masked);
            full.push_back(w.full);
        }

    t0 = Clock::now();
    CtfgaModel ctfga(rs.enc, rs.dec, seed + 101);
    MaeModel mae(rs.smodel, seed + 202);
    TwrgModel twrg(rs.fusion, cfg.twrg_hidden, seed + 303);
    phase("pretrain", [&] {
        run.ctfga_trace = ctfga_pretrain(ctfga, titems, offset_seed(cfg.pre_temporal, seed));
        run.mae_trace = mae_pretrain(mae, masked, offset_seed(cfg.pre_spectro, seed));

        const FwdCtx eval{Mode::eval, nullptr};
        std::vector<TwrgItem> twitems;
        for (std::size_t i = 0; i < titems.size(); ++i) {
            TwrgItem it;
            it.h_a = temporal_encode(ctfga.enc, titems[i].past, titems[i].d_past, eval)
                         .node()->value;
            it.h_c = temporal_encode(ctfga.enc, titems[i].future, titems[i].d_future, eval)
                         .node()->value;
            it.z = mae.enc.forward(visible_pixels(full[i]), full[i].visible_idx, eval)
                       .node()->value;
            twitems.push_back(std::move(it));
        }
        run.twrg_trace = twrg_pretrain(twrg, twitems, offset_seed(cfg.pre_mixed, seed));
        return 0;
    });
    run.times.pretrain = elapsed(t0);

    if (!cfg.out_dir.empty()) {
        const std::string echo = config_echo(cfg);
        const std::string tag = "_seed" + std::to_string(seed) + ".ckpt";
        const std::array<std::pair<const ParamStore*, std::string>, 3> saves = {
            std::make_pair(&ctfga.ps, cfg.out_dir + "/ctfga" + tag),
            std::make_pair(&mae.ps, cfg.out_dir + "/mae" + tag),
            std::make_pair(&twrg.ps, cfg.out_dir + "/twrg" + tag)};
        for (const auto& [ps, path] : saves) {
            save_checkpoint(*ps, path, echo, seed);
            if (ckpt_paths) ckpt_paths->push_back(path);
        }
    }

    AdaptOutput a = run_adaptation(cfg, rs, ctfga, mae, twrg, labeled, seed);
    run.times.adapt = a.adapt_seconds;
    run.times.inference = a.inference_seconds;
    run.report = a.report;
    run.test_labels = std::move(a.test_labels);
    run.test_predictions = std::move(a.test_predictions);
    run.val_metrics = a.val_metrics;
    run.test_metrics = a.test_metrics;
    return run;
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::vector<PpgRecord>& unlabeled,
                            const std::vector<PpgRecord>& labeled) {
    const ResolvedSpecs rs = resolve_specs(cfg);
    PipelineResult result;
    std::vector<std::string> ckpt_paths;
    std::vector<RegressionMetrics> per_run;
    for (std::uint64_t seed : cfg.seeds) {
        result.runs.push_back(run_once(cfg, rs, unlabeled, labeled, seed, &ckpt_paths));
        per_run.push_back(result.runs.back().test_metrics);
    }
    result.summary = aggregate(per_run);

    if (!cfg.out_dir.empty()) {
        nlohmann::json j;
        j["config"] = config_echo(cfg);
        j["seeds"] = cfg.seeds;
        j["checkpoints"] = ckpt_paths;
        nlohmann::json phases = nlohmann::json::array();
        for (const auto& r : result.runs)
            phases.push_back({{"seed", r.seed},
                              {"setup", r.times.setup},
                              {"pseudolabel", r.times.pseudolabel},
                              {"pretrain", r.times.pretrain},
                              {"adapt", r.times.adapt},
                              {"inference", r.times.inference}});
        j["phase_seconds"] = phases;
        std::ofstream f(cfg.out_dir + "/manifest.json");
        if (!f) throw DataError("pipeline: cannot write manifest in " + cfg.out_dir);
        f << j.dump(2) << "\n";
    }
    return result;
}

SweepResult sweep_gamma_T(const PipelineConfig& base, const std::vector<double>& gammas,
                          const std::vector<double>& Ts, const std::vector<PpgRecord>& unlabeled,
                          const std::vector<PpgRecord>& labeled) {
    if (gammas.empty() || Ts.empty()) throw DataError("sweep: empty grid axis");
    for (double g : gammas)
        if (!(g > 0.0 && g < 0.5)) throw DataError("sweep: gamma values must lie in (0, 0.5)");
    for (double t : Ts)
        if (t <= 0.0) throw DataError("sweep: window lengths must be positive");

    SweepResult sr;
    sr.gammas = gammas;
    sr.Ts = Ts;
    sr.raw = Mat(static_cast<int>(gammas.size()), static_cast<int>(Ts.size()));
    for (std::size_t i = 0; i < gammas.size(); ++i)
        for (std::size_t j = 0; j < Ts.size(); ++j) {
            PipelineConfig cfg = base;
            cfg.gamma = gammas[i];
            cfg.seconds = Ts[j];
            cfg.out_dir.clear();
            PipelineResult res = run_pipeline(cfg, unlabeled, labeled);
            double mean_val = 0.0;
            for (const auto& r : res.runs) mean_val += r.val_metrics.mae;
            sr.raw.at(static_cast<int>(i), static_cast<int>(j)) =
                mean_val / static_cast<double>(res.runs.size());
        }

    const auto [mn_it, mx_it] = std::minmax_element(sr.raw.v.begin(), sr.raw.v.end());
    const double mn = *mn_it, mx = *mx_it;
    sr.normalized = Mat(sr.raw.rows, sr.raw.cols);
    if (mx > mn)
        for (std::size_t i = 0; i < sr.raw.v.size(); ++i)
            sr.normalized.v[i] = (sr.raw.v[i] - mn) / (mx - mn);
    // flat grids (single cell included) stay all-zero

    sr.row_means.assign(sr.raw.rows, 0.0);
    sr.col_means.assign(sr.raw.cols, 0.0);
    for (int i = 0; i < sr.raw.rows; ++i)
        for (int j = 0; j < sr.raw.cols; ++j) {
            sr.row_means[i] += sr.normalized.at(i, j) / sr.raw.cols;
            sr.col_means[j] += sr.normalized.at(i, j) / sr.raw.rows;
        }

    const auto arg = std::min_element(sr.raw.v.begin(), sr.raw.v.end()) - sr.raw.v.begin();
    sr.argmin_row = static_cast<int>(arg) / sr.raw.cols;
    sr.argmin_col = static_cast<int>(arg) % sr.raw.cols;
    return sr;
}

}  // namespace ppg
