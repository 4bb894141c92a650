#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ppgkit/checkpoint.hpp"
#include "ppgkit/errors.hpp"
#include "ppgkit/metrics.hpp"
#include "ppgkit/pipeline.hpp"
#include "ppgkit/vmd.hpp"

namespace fs = std::filesystem;
using namespace ppg;

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    return f;
}

std::vector<PpgRecord> load_dir(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError(dir + " is not a directory");
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".csv") paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DataError("no .csv records in " + dir);
    std::vector<PpgRecord> recs;
    for (const auto& p : paths) recs.push_back(load_record(p, RecordFormat::csv));
    return recs;
}

PpgRecord load_one(const std::string& path, const std::string& format,
                   std::optional<double> rate) {
    return load_record(path, format == "raw" ? RecordFormat::raw_f64 : RecordFormat::csv, rate);
}

// Rows of doubles from a comma-separated file with one header line.
std::vector<std::vector<double>> load_table(const std::string& path, std::size_t cols) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    std::string line;
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line_no == 1 || line.empty()) continue;  // header
        std::vector<double> row;
        std::istringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError(path + ": bad number '" + cell + "' on line " +
                                std::to_string(line_no));
            }
        }
        if (row.size() != cols)
            throw DataError(path + ": expected " + std::to_string(cols) + " columns on line " +
                            std::to_string(line_no));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError(path + ": no data rows");
    return rows;
}

std::vector<double> parse_double_list(const std::string& csv, const std::string& what) {
    std::vector<double> out;
    std::istringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw DataError("bad " + what + " entry '" + cell + "'");
        }
    }
    if (out.empty()) throw DataError(what + " list is empty");
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::istringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stoull(cell));
        } catch (const std::exception&) {
            throw DataError("bad seed entry '" + cell + "'");
        }
    }
    if (out.empty()) throw DataError("seed list is empty");
    return out;
}

TransferMode parse_mode(const std::string& m) {
    if (m == "dpt") return TransferMode::dpt;
    if (m == "fine-tune" || m == "fine_tune") return TransferMode::fine_tune;
    if (m == "linear-probe" || m == "linear_probe") return TransferMode::linear_probe;
    throw DataError("unknown transfer mode '" + m + "'");
}

void write_trace_csv(const std::string& path, const TrainTrace& trace) {
    auto f = open_out(path);
    const bool acc = !trace.epoch_acc.empty();
    f << (acc ? "epoch,loss,accuracy\n" : "epoch,loss\n");
    for (std::size_t i = 0; i < trace.epoch_loss.size(); ++i) {
        f << i + 1 << "," << num(trace.epoch_loss[i]);
        if (acc) f << "," << num(trace.epoch_acc[i]);
        f << "\n";
    }
}

char zone_of(double ref_mmol, double est_mmol) {
    const auto counts = clarke_zones({ref_mmol}, {est_mmol});
    for (int i = 0; i < 5; ++i)
        if (counts[i] == 1) return static_cast<char>('A' + i);
    return '?';
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw NumericError("pearson: zero variance");
    return sab / std::sqrt(saa * sbb);
}

// Shared flags for commands that drive the pipeline config.
struct ConfigArgs {
    std::string config_path;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "flat key = value config file");
    }
    PipelineConfig load() const {
        return config_path.empty() ? PipelineConfig{} : load_config_file(config_path);
    }
};

struct TrainArgs {
    std::optional<double> lr;
    std::optional<int> batch_size, epochs;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--lr", lr, "learning rate override");
        cmd->add_option("--batch-size", batch_size, "batch size override");
        cmd->add_option("--epochs", epochs, "epoch count override");
        cmd->add_option("--seed", seed, "training seed override");
    }
    void apply(TrainConfig& tc) const {
        if (lr) tc.lr = *lr;
        if (batch_size) tc.batch_size = *batch_size;
        if (epochs) tc.epochs = *epochs;
        if (seed) tc.seed = *seed;
    }
};

struct FlatWindows {
    std::vector<std::vector<WindowData>> groups;
    std::vector<TemporalItem> titems;
    std::vector<SpectrogramPatchSet> masked, full;
};

FlatWindows prepare_flat(const PipelineConfig& cfg, const ResolvedSpecs& rs,
                         const std::vector<PpgRecord>& recs, bool labeled, std::uint64_t seed) {
    FlatWindows fw;
    fw.groups = prepare_windows(cfg, rs, recs, labeled, seed);
    for (const auto& g : fw.groups)
        for (const auto& w : g) {
            fw.titems.push_back(w.titem);
            fw.masked.push_back(w.masked);
            fw.full.push_back(w.full);
        }
    return fw;
}

std::vector<TwrgItem> extract_twrg_items(CtfgaModel& ctfga, MaeModel& mae, const FlatWindows& fw) {
    const FwdCtx eval{Mode::eval, nullptr};
    std::vector<TwrgItem> items;
    for (std::size_t i = 0; i < fw.titems.size(); ++i) {
        TwrgItem it;
        it.h_a = temporal_encode(ctfga.enc, fw.titems[i].past, fw.titems[i].d_past, eval)
                     .node()->value;
        it.h_c = temporal_encode(ctfga.enc, fw.titems[i].future, fw.titems[i].d_future, eval)
                     .node()->value;
        it.z = mae.enc.forward(visible_pixels(fw.full[i]), fw.full[i].visible_idx, eval)
                   .node()->value;
        items.push_back(std::move(it));
    }
    return items;
}

// ---- subcommand bodies --------------------------------------------------

void run_synth(double hr, double seconds, double rate, double noise, std::uint64_t seed,
               std::optional<double> label, int count, const std::string& out,
               const std::string& out_dir) {
    if (count == 1 && out_dir.empty()) {
        PpgRecord rec = synth_ppg(hr, noise, seconds, rate, seed);
        rec.label = label;
        save_record_csv(rec, out);
        std::cout << "wrote " << rec.samples.size() << " samples to " << out << "\n";
        return;
    }
    if (out_dir.empty()) throw DataError("--count above 1 needs --out-dir");
    fs::create_directories(out_dir);
    std::mt19937_64 rng(seed);
    for (int i = 0; i < count; ++i) {
        const double jitter = (static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5) * 30.0;
        const double rec_hr = hr + jitter;
        PpgRecord rec = synth_ppg(rec_hr, noise, seconds, rate, seed + 1 + i);
        rec.label = rec_hr;
        char name[32];
        std::snprintf(name, sizeof(name), "rec_%04d.csv", i);
        save_record_csv(rec, out_dir + "/" + name);
    }
    std::cout << "wrote " << count << " labeled records to " << out_dir << "\n";
}

void run_decompose(const std::string& input, const std::string& format,
                   std::optional<double> rate, const VmdConfig& vc, const std::string& out) {
    const PpgRecord rec = load_one(input, format, rate);
    const ModeSet ms = vmd_decompose(rec.samples, vc);
    auto f = open_out(out);
    for (int m = 0; m < vc.k; ++m) f << "mode_" << m + 1 << "(cf=" << num(ms.center_freqs[m]) << "),";
    f << "residual\n";
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        for (int m = 0; m < vc.k; ++m) f << num(ms.modes[m][i]) << ",";
        f << num(ms.residual[i]) << "\n";
    }
    for (int m = 0; m < vc.k; ++m)
        std::cout << "mode " << m + 1 << " center frequency " << num(ms.center_freqs[m])
                  << " cycles/sample (" << num(ms.center_freqs[m] * rec.rate) << " Hz)\n";
    std::cout << "converged in " << ms.iterations_used << " iterations\n";
}

void run_stft(const std::string& input, const std::string& format, std::optional<double> rate,
              const StftConfig& sc, const std::string& out) {
    const PpgRecord rec = load_one(input, format, rate);
    const Spectrogram sp = stft(rec.samples, sc);
    auto f = open_out(out);
    for (int b = 0; b < sp.bins; ++b) f << (b ? "," : "") << "bin_" << b;
    f << "\n";
    for (int fr = 0; fr < sp.frames; ++fr) {
        for (int b = 0; b < sp.bins; ++b) f << (b ? "," : "") << num(sp.grid.at(fr, b));
        f << "\n";
    }
    std::cout << sp.frames << " frames x " << sp.bins << " bins\n";
}

void run_pretrain_cmd(const std::string& task, const ConfigArgs& ca, const TrainArgs& ta,
                      const std::string& unlabeled, std::uint64_t run_seed,
                      const std::string& out_ckpt, const std::string& trace_out,
                      const std::string& ctfga_ckpt, const std::string& mae_ckpt) {
    PipelineConfig cfg = ca.load();
    TrainConfig& tc = task == "ctfga" ? cfg.pre_temporal
                      : task == "mae" ? cfg.pre_spectro
                                      : cfg.pre_mixed;
    ta.apply(tc);
    const ResolvedSpecs rs = resolve_specs(cfg);
    const FlatWindows fw = prepare_flat(cfg, rs, load_dir(unlabeled), false, run_seed);

    TrainTrace trace;
    if (task == "ctfga") {
        CtfgaModel model(rs.enc, rs.dec, run_seed + 101);
        trace = ctfga_pretrain(model, fw.titems, tc);
        save_checkpoint(model.ps, out_ckpt, config_echo(cfg), run_seed);
    } else if (task == "mae") {
        MaeModel model(rs.smodel, run_seed + 202);
        trace = mae_pretrain(model, fw.masked, tc);
        save_checkpoint(model.ps, out_ckpt, config_echo(cfg), run_seed);
    } else {
        CtfgaModel ctfga(rs.enc, rs.dec, run_seed + 101);
        load_checkpoint(ctfga.ps, ctfga_ckpt);
        MaeModel mae(rs.smodel, run_seed + 202);
        load_checkpoint(mae.ps, mae_ckpt);
        const auto items = extract_twrg_items(ctfga, mae, fw);
        TwrgModel model(rs.fusion, cfg.twrg_hidden, run_seed + 303);
        trace = twrg_pretrain(model, items, tc);
        save_checkpoint(model.ps, out_ckpt, config_echo(cfg), run_seed);
    }
    if (!trace_out.empty()) write_trace_csv(trace_out, trace);
    std::cout << "final epoch loss " << num(trace.epoch_loss.back()) << "\n";
    if (!trace.epoch_acc.empty())
        std::cout << "final epoch accuracy " << num(trace.epoch_acc.back()) << "\n";
    std::cout << "checkpoint written to " << out_ckpt << "\n";
}

void run_finetune_cmd(const std::string& domain, const std::string& mode_s, double train_fraction,
                      const ConfigArgs& ca, const TrainArgs& ta, const std::string& labeled,
                      const std::string& ckpt, std::uint64_t run_seed,
                      const std::string& preds_out, const std::string& trace_out) {
    PipelineConfig cfg = ca.load();
    cfg.mode = parse_mode(mode_s);
    cfg.train_fraction = train_fraction;
    ta.apply(cfg.adapt);
    const ResolvedSpecs rs = resolve_specs(cfg);

    const auto groups = prepare_windows(cfg, rs, load_dir(labeled), true, run_seed + 11);
    const RecordSplit sp = split_records(static_cast<int>(groups.size()), cfg.train_fraction);

    struct Row {
        const char* split;
        double label, pred;
    };
    std::vector<Row> rows;
    TrainTrace trace;

    auto emit = [&](auto& adapter, auto make_item) {
        const std::array<std::pair<const char*, const std::vector<int>*>, 3> splits = {
            std::make_pair("train", &sp.train), std::make_pair("val", &sp.val),
            std::make_pair("test", &sp.test)};
        for (const auto& [name, idxs] : splits)
            for (int ri : *idxs)
                for (const auto& w : groups[ri])
                    rows.push_back({name, w.label, adapter.predict(make_item(w))});
    };

    const TrainConfig ac = cfg.adapt;
    if (domain == "temporal") {
        CtfgaModel base(rs.enc, rs.dec, run_seed + 101);
        load_checkpoint(base.ps, ckpt);
        TemporalTransfer adapter(base, cfg.mode, run_seed + 401);
        std::vector<LabeledTemporalItem> train;
        for (int ri : sp.train)
            for (const auto& w : groups[ri]) train.push_back({w.titem, w.label});
        trace = adapter.train(train, ac).trace;
        emit(adapter, [](const WindowData& w) { return w.titem; });
    } else {
        MaeModel base(rs.smodel, run_seed + 202);
        load_checkpoint(base.ps, ckpt);
        SpectroTransfer adapter(base, cfg.mode, run_seed + 402);
        std::vector<LabeledSpectroItem> train;
        for (int ri : sp.train)
            for (const auto& w : groups[ri]) train.push_back({w.full, w.label});
        trace = adapter.train(train, ac).trace;
        emit(adapter, [](const WindowData& w) { return w.full; });
    }

    if (!preds_out.empty()) {
        auto f = open_out(preds_out);
        f << "split,label,prediction\n";
        for (const auto& r : rows)
            f << r.split << "," << num(r.label) << "," << num(r.pred) << "\n";
    }
    if (!trace_out.empty()) write_trace_csv(trace_out, trace);

    std::vector<double> gt, est;
    for (const auto& r : rows)
        if (std::string_view(r.split) == "test") {
            gt.push_back(r.label);
            est.push_back(r.pred);
        }
    const RegressionMetrics m = regression_metrics(gt, est);
    std::cout << "final train loss " << num(trace.epoch_loss.back()) << "\n";
    std::cout << "test mae " << num(m.mae) << " rmse " << num(m.rmse) << "\n";
}

void run_fuse(const std::string& input, const std::string& preds_out) {
    const auto rows = load_table(input, 4);
    Mat x(static_cast<int>(rows.size()), 3);
    std::vector<double> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < 3; ++j) x.at(static_cast<int>(i), j) = rows[i][j];
        y[i] = rows[i][3];
    }
    const FusionReport rep = ols_fit(x, y);
    std::cout << "phi0 " << num(rep.phi0) << "\n";
    std::cout << "phi_temporal " << num(rep.phi[0]) << "\n";
    std::cout << "phi_spectrogram " << num(rep.phi[1]) << "\n";
    std::cout << "phi_mixed " << num(rep.phi[2]) << "\n";
    std::cout << "r_squared " << num(rep.r_squared) << "\n";
    if (!preds_out.empty()) {
        auto f = open_out(preds_out);
        f << "label,prediction\n";
        for (std::size_t i = 0; i < rows.size(); ++i)
            f << num(y[i]) << ","
              << num(ternary_predict({rows[i][0], rows[i][1], rows[i][2]}, rep)) << "\n";
    }
}

void run_evaluate(const std::string& input, const std::string& summary_out,
                  const std::string& ba_out, const std::string& clarke_out) {
    const auto rows = load_table(input, 2);
    std::vector<double> gt, est;
    for (const auto& r : rows) {
        gt.push_back(r[0]);
        est.push_back(r[1]);
    }
    const RegressionMetrics m = regression_metrics(gt, est);
    const BlandAltman ba = bland_altman(gt, est);
    const double r = pearson(gt, est);

    std::cout << "mae " << num(m.mae) << "\n";
    std::cout << "rmse " << num(m.rmse) << "\n";
    std::cout << "mape " << (m.mape ? num(*m.mape) : std::string("undefined")) << "\n";
    std::cout << "bias " << num(ba.bias) << " loa [" << num(ba.loa_low) << ", "
              << num(ba.loa_high) << "]\n";
    std::cout << "pearson " << num(r) << "\n";

    if (!summary_out.empty()) {
        auto f = open_out(summary_out);
        f << "metric,value\n";
        f << "mae," << num(m.mae) << "\n";
        f << "rmse," << num(m.rmse) << "\n";
        f << "mape," << (m.mape ? num(*m.mape) : std::string("")) << "\n";
        f << "bias," << num(ba.bias) << "\n";
        f << "loa_low," << num(ba.loa_low) << "\n";
        f << "loa_high," << num(ba.loa_high) << "\n";
        f << "pearson," << num(r) << "\n";
    }
    if (!ba_out.empty()) {
        auto f = open_out(ba_out);
        f << "mean,difference\n";
        for (std::size_t i = 0; i < gt.size(); ++i)
            f << num((gt[i] + est[i]) / 2.0) << "," << num(est[i] - gt[i]) << "\n";
    }
    if (!clarke_out.empty()) {
        const auto counts = clarke_zones(gt, est);
        auto f = open_out(clarke_out);
        f << "ref_mgdl,est_mgdl,zone\n";
        for (std::size_t i = 0; i < gt.size(); ++i)
            f << num(gt[i] * 18.016) << "," << num(est[i] * 18.016) << ","
              << zone_of(gt[i], est[i]) << "\n";
        std::cout << "clarke zones";
        for (int z = 0; z < 5; ++z)
            std::cout << " " << static_cast<char>('A' + z) << "=" << counts[z];
        std::cout << "\n";
    }
}

void run_pipeline_cmd(const ConfigArgs& ca, const std::string& unlabeled,
                      const std::string& labeled, const std::string& out_dir,
                      const std::string& seeds, const std::string& mode_s,
                      std::optional<double> train_fraction, const std::string& preds_out) {
    PipelineConfig cfg = ca.load();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        cfg.out_dir = out_dir;
    }
    if (!seeds.empty()) cfg.seeds = parse_seed_list(seeds);
    if (!mode_s.empty()) cfg.mode = parse_mode(mode_s);
    if (train_fraction) cfg.train_fraction = *train_fraction;

    const PipelineResult res = run_pipeline(cfg, load_dir(unlabeled), load_dir(labeled));
    for (const auto& run : res.runs)
        std::cout << "seed " << run.seed << ": r_squared " << num(run.report.r_squared)
                  << ", val mae " << num(run.val_metrics.mae) << ", test mae "
                  << num(run.test_metrics.mae) << ", test rmse " << num(run.test_metrics.rmse)
                  << "\n";
    std::cout << "test mae " << num(res.summary.mae_mean) << " +- " << num(res.summary.mae_std)
              << " over " << res.summary.n_runs << " runs\n";
    std::cout << "test rmse " << num(res.summary.rmse_mean) << " +- "
              << num(res.summary.rmse_std) << "\n";

    if (!preds_out.empty()) {
        auto f = open_out(preds_out);
        f << "seed,label,prediction\n";
        for (const auto& run : res.runs)
            for (std::size_t i = 0; i < run.test_labels.size(); ++i)
                f << run.seed << "," << num(run.test_labels[i]) << ","
                  << num(run.test_predictions[i]) << "\n";
    }
}

void run_sweep(const ConfigArgs& ca, const std::string& unlabeled, const std::string& labeled,
               const std::string& gammas_s, const std::string& ts_s, const std::string& out) {
    PipelineConfig cfg = ca.load();
    const auto gammas = parse_double_list(gammas_s, "gamma");
    const auto ts = parse_double_list(ts_s, "T");
    const SweepResult sr = sweep_gamma_T(cfg, gammas, ts, load_dir(unlabeled), load_dir(labeled));

    if (!out.empty()) {
        auto f = open_out(out);
        f << "gamma,T,val_mae,normalized\n";
        for (std::size_t i = 0; i < gammas.size(); ++i)
            for (std::size_t j = 0; j < ts.size(); ++j)
                f << num(gammas[i]) << "," << num(ts[j]) << ","
                  << num(sr.raw.at(static_cast<int>(i), static_cast<int>(j))) << ","
                  << num(sr.normalized.at(static_cast<int>(i), static_cast<int>(j))) << "\n";
    }
    std::cout << "best cell gamma " << num(gammas[sr.argmin_row]) << ", T "
              << num(ts[sr.argmin_col]) << " (val mae "
              << num(sr.raw.at(sr.argmin_row, sr.argmin_col)) << ")\n";
    for (std::size_t i = 0; i < gammas.size(); ++i)
        std::cout << "gamma " << num(gammas[i]) << " mean " << num(sr.row_means[i]) << "\n";
    for (std::size_t j = 0; j < ts.size(); ++j)
        std::cout << "T " << num(ts[j]) << " mean " << num(sr.col_means[j]) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generative self-supervised toolkit for PPG parameter estimation"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate synthetic PPG records");
    double s_hr = 75.0, s_seconds = 5.6, s_rate = 125.0, s_noise = 0.05;
    std::uint64_t s_seed = 1;
    std::optional<double> s_label;
    int s_count = 1;
    std::string s_out, s_out_dir;
    synth->add_option("--hr", s_hr, "heart rate, bpm");
    synth->add_option("--seconds", s_seconds, "record length, seconds");
    synth->add_option("--rate", s_rate, "sampling rate, Hz");
    synth->add_option("--noise", s_noise, "additive noise std");
    synth->add_option("--seed", s_seed, "generator seed");
    synth->add_option("--label", s_label, "label to attach to the record");
    synth->add_option("--count", s_count, "number of records (with --out-dir)");
    synth->add_option("--out", s_out, "output CSV (single record)");
    synth->add_option("--out-dir", s_out_dir, "output directory (with --count)");
    synth->callback([&] {
        if (s_out.empty() && s_out_dir.empty())
            throw CLI::ValidationError("synth", "--out or --out-dir is required");
        run_synth(s_hr, s_seconds, s_rate, s_noise, s_seed, s_label, s_count, s_out, s_out_dir);
    });

    // decompose
    auto* dec = app.add_subcommand("decompose", "split a record into narrowband modes");
    std::string d_in, d_format = "csv", d_out;
    std::optional<double> d_rate;
    VmdConfig d_vmd;
    dec->add_option("--input", d_in, "input record")->required();
    dec->add_option("--format", d_format, "csv or raw")->check(CLI::IsMember({"csv", "raw"}));
    dec->add_option("--rate", d_rate, "sampling rate override, Hz");
    dec->add_option("--k", d_vmd.k, "number of modes");
    dec->add_option("--alpha", d_vmd.alpha, "bandwidth penalty");
    dec->add_option("--tau", d_vmd.tau, "dual ascent step");
    dec->add_option("--eps", d_vmd.eps, "convergence threshold");
    dec->add_option("--max-iter", d_vmd.max_iter, "iteration cap");
    dec->add_option("--out", d_out, "modes CSV")->required();
    dec->callback([&] { run_decompose(d_in, d_format, d_rate, d_vmd, d_out); });

    // stft
    auto* st = app.add_subcommand("stft", "log-magnitude spectrogram of a record");
    std::string t_in, t_format = "csv", t_window = "hann", t_out;
    std::optional<double> t_rate;
    StftConfig t_cfg;
    st->add_option("--input", t_in, "input record")->required();
    st->add_option("--format", t_format, "csv or raw")->check(CLI::IsMember({"csv", "raw"}));
    st->add_option("--rate", t_rate, "sampling rate override, Hz");
    st->add_option("--n-fft", t_cfg.n_fft, "frame length");
    st->add_option("--hop", t_cfg.hop, "frame step");
    st->add_option("--window", t_window, "hann or rect")->check(CLI::IsMember({"hann", "rect"}));
    st->add_option("--out", t_out, "grid CSV")->required();
    st->callback([&] {
        t_cfg.window = t_window == "rect" ? WindowFn::rect : WindowFn::hann;
        run_stft(t_in, t_format, t_rate, t_cfg, t_out);
    });

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "run one self-supervised pretraining task");
    std::string p_task, p_unlabeled, p_out_ckpt, p_trace, p_ctfga, p_mae;
    std::uint64_t p_run_seed = 0;
    ConfigArgs p_cfg;
    TrainArgs p_train;
    pre->add_option("--task", p_task, "ctfga, mae, or twrg")
        ->required()
        ->check(CLI::IsMember({"ctfga", "mae", "twrg"}));
    p_cfg.attach(pre);
    p_train.attach(pre);
    pre->add_option("--unlabeled", p_unlabeled, "directory of record CSVs")->required();
    pre->add_option("--run-seed", p_run_seed, "window preparation / model seed");
    pre->add_option("--out-ckpt", p_out_ckpt, "checkpoint path")->required();
    pre->add_option("--trace-out", p_trace, "per-epoch loss CSV");
    pre->add_option("--ctfga-ckpt", p_ctfga, "pretrained temporal checkpoint (twrg)");
    pre->add_option("--mae-ckpt", p_mae, "pretrained spectrogram checkpoint (twrg)");
    pre->callback([&] {
        if (p_task == "twrg" && (p_ctfga.empty() || p_mae.empty()))
            throw CLI::ValidationError("pretrain",
                                       "--task twrg needs --ctfga-ckpt and --mae-ckpt");
        run_pretrain_cmd(p_task, p_cfg, p_train, p_unlabeled, p_run_seed, p_out_ckpt, p_trace,
                         p_ctfga, p_mae);
    });

    // finetune
    auto* ft = app.add_subcommand("finetune", "adapt a pretrained model to labels");
    std::string f_domain, f_mode = "dpt", f_labeled, f_ckpt, f_preds, f_trace;
    double f_frac = 1.0;
    std::uint64_t f_run_seed = 0;
    ConfigArgs f_cfg;
    TrainArgs f_train;
    ft->add_option("--domain", f_domain, "temporal or spectrogram")
        ->required()
        ->check(CLI::IsMember({"temporal", "spectrogram"}));
    ft->add_option("--mode", f_mode, "fine-tune, linear-probe, or dpt")
        ->check(CLI::IsMember({"fine-tune", "linear-probe", "dpt"}));
    ft->add_option("--train-fraction", f_frac, "fraction of training records used");
    f_cfg.attach(ft);
    f_train.attach(ft);
    ft->add_option("--labeled", f_labeled, "directory of labeled record CSVs")->required();
    ft->add_option("--ckpt", f_ckpt, "pretrained checkpoint")->required();
    ft->add_option("--run-seed", f_run_seed, "window preparation / model seed");
    ft->add_option("--preds-out", f_preds, "per-window predictions CSV");
    ft->add_option("--trace-out", f_trace, "per-epoch loss CSV");
    ft->callback([&] {
        run_finetune_cmd(f_domain, f_mode, f_frac, f_cfg, f_train, f_labeled, f_ckpt, f_run_seed,
                         f_preds, f_trace);
    });

    // fuse
    auto* fu = app.add_subcommand("fuse", "fit the ternary least-squares combiner");
    std::string u_in, u_preds;
    fu->add_option("--input", u_in, "CSV with columns y1,y2,y3,label")->required();
    fu->add_option("--preds-out", u_preds, "combined predictions CSV");
    fu->callback([&] { run_fuse(u_in, u_preds); });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "metrics for a gt,est prediction CSV");
    std::string e_in, e_summary, e_ba, e_clarke;
    ev->add_option("--input", e_in, "CSV with columns gt,est")->required();
    ev->add_option("--summary-out", e_summary, "metric,value CSV");
    ev->add_option("--ba-out", e_ba, "mean,difference CSV for agreement plots");
    ev->add_option("--clarke-out", e_clarke, "per-point zone CSV (inputs read as mmol/L)");
    ev->callback([&] { run_evaluate(e_in, e_summary, e_ba, e_clarke); });

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "full pretrain + adapt + inference chain");
    std::string l_unlabeled, l_labeled, l_out_dir, l_seeds, l_mode, l_preds;
    std::optional<double> l_frac;
    ConfigArgs l_cfg;
    l_cfg.attach(pl);
    pl->add_option("--unlabeled", l_unlabeled, "directory of unlabeled record CSVs")->required();
    pl->add_option("--labeled", l_labeled, "directory of labeled record CSVs")->required();
    pl->add_option("--out-dir", l_out_dir, "checkpoint + manifest directory");
    pl->add_option("--seeds", l_seeds, "comma-separated run seeds");
    pl->add_option("--mode", l_mode, "fine-tune, linear-probe, or dpt");
    pl->add_option("--train-fraction", l_frac, "fraction of training records used");
    pl->add_option("--preds-out", l_preds, "test predictions CSV");
    pl->callback([&] {
        run_pipeline_cmd(l_cfg, l_unlabeled, l_labeled, l_out_dir, l_seeds, l_mode, l_frac,
                         l_preds);
    });

    // sweep
    auto* sw = app.add_subcommand("sweep", "grid search over gamma and window length");
    std::string w_unlabeled, w_labeled, w_gammas, w_ts, w_out;
    ConfigArgs w_cfg;
    w_cfg.attach(sw);
    sw->add_option("--unlabeled", w_unlabeled, "directory of unlabeled record CSVs")->required();
    sw->add_option("--labeled", w_labeled, "directory of labeled record CSVs")->required();
    sw->add_option("--gammas", w_gammas, "comma-separated gamma values")->required();
    sw->add_option("--Ts", w_ts, "comma-separated window lengths, seconds")->required();
    sw->add_option("--out", w_out, "grid CSV");
    sw->callback([&] { run_sweep(w_cfg, w_unlabeled, w_labeled, w_gammas, w_ts, w_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
