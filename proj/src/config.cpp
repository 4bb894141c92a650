#include <charconv>
#include <fstream>
#include <sstream>

#include "ppgkit/errors.hpp"
#include "ppgkit/pipeline.hpp"

namespace ppg {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

std::string fmt_ints(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(xs[i]);
    }
    return s;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw DataError("config: bad number for " + key + ": '" + v + "'");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int i = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return i;
    } catch (const std::exception&) {
        throw DataError("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long i = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return i;
    } catch (const std::exception&) {
        throw DataError("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::vector<std::string> split_csv(const std::string& v) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream ss(v);
    while (std::getline(ss, cur, ',')) parts.push_back(cur);
    return parts;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::string config_echo(const PipelineConfig& c) {
    std::ostringstream o;
    o << "rate = " << fmt_double(c.rate) << "\n";
    o << "seconds = " << fmt_double(c.seconds) << "\n";
    o << "step_seconds = " << fmt_double(c.step_seconds) << "\n";
    o << "gamma = " << fmt_double(c.gamma) << "\n";
    o << "mask_ratio = " << fmt_double(c.mask_ratio) << "\n";
    o << "vmd.k = " << c.vmd.k << "\n";
    o << "vmd.alpha = " << fmt_double(c.vmd.alpha) << "\n";
    o << "vmd.tau = " << fmt_double(c.vmd.tau) << "\n";
    o << "vmd.eps = " << fmt_double(c.vmd.eps) << "\n";
    o << "vmd.max_iter = " << c.vmd.max_iter << "\n";
    o << "stft.n_fft = " << c.stft.n_fft << "\n";
    o << "stft.hop = " << c.stft.hop << "\n";
    o << "stft.window = " << (c.stft.window == WindowFn::hann ? "hann" : "rect") << "\n";
    o << "enc.widths = " << fmt_ints(c.enc.widths) << "\n";
    o << "enc.kernels = " << fmt_ints({c.enc.kernels[0], c.enc.kernels[1], c.enc.kernels[2]}) << "\n";
    o << "enc.embed_dim = " << c.enc.embed_dim << "\n";
    o << "enc.guide_stages = " << c.enc.guide_stages << "\n";
    o << "dec.hidden = " << c.dec.hidden << "\n";
    o << "dec.dropout = " << fmt_double(c.dec.rate) << "\n";
    o << "spec.patch_h = " << c.smodel.patch_h << "\n";
    o << "spec.patch_w = " << c.smodel.patch_w << "\n";
    o << "spec.embed_dim = " << c.smodel.embed_dim << "\n";
    o << "spec.enc_depth = " << c.smodel.enc_depth << "\n";
    o << "spec.dec_depth = " << c.smodel.dec_depth << "\n";
    o << "spec.heads = " << c.smodel.heads << "\n";
    o << "spec.mlp_hidden = " << c.smodel.mlp_hidden << "\n";
    o << "spec.max_tokens = " << c.smodel.max_tokens << "\n";
    o << "fusion.rank = " << c.fusion_rank << "\n";
    o << "fusion.iterations = " << c.fusion_iterations << "\n";
    o << "fusion.kernel = " << c.fusion_kernel << "\n";
    o << "twrg.hidden = " << c.twrg_hidden << "\n";
    const auto tc = [&o](const char* name, const TrainConfig& t) {
        o << name << ".lr = " << fmt_double(t.lr) << "\n";
        o << name << ".batch_size = " << t.batch_size << "\n";
        o << name << ".epochs = " << t.epochs << "\n";
        o << name << ".seed = " << t.seed << "\n";
    };
    tc("pre_temporal", c.pre_temporal);
    tc("pre_spectro", c.pre_spectro);
    tc("pre_mixed", c.pre_mixed);
    tc("adapt", c.adapt);
    o << "mode = "
      << (c.mode == TransferMode::dpt
              ? "dpt"
              : (c.mode == TransferMode::fine_tune ? "fine_tune" : "linear_probe"))
      << "\n";
    o << "train_fraction = " << fmt_double(c.train_fraction) << "\n";
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) {
        if (i) seeds += ",";
        seeds += std::to_string(c.seeds[i]);
    }
    o << "seeds = " << seeds << "\n";
    o << "out_dir = " << c.out_dir << "\n";
    return o.str();
}

void apply_config_kv(PipelineConfig& c, const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "rate") c.rate = parse_double(key, v);
    else if (key == "seconds") c.seconds = parse_double(key, v);
    else if (key == "step_seconds") c.step_seconds = parse_double(key, v);
    else if (key == "gamma") c.gamma = parse_double(key, v);
    else if (key == "mask_ratio") c.mask_ratio = parse_double(key, v);
    else if (key == "vmd.k") c.vmd.k = parse_int(key, v);
    else if (key == "vmd.alpha") c.vmd.alpha = parse_double(key, v);
    else if (key == "vmd.tau") c.vmd.tau = parse_double(key, v);
    else if (key == "vmd.eps") c.vmd.eps = parse_double(key, v);
    else if (key == "vmd.max_iter") c.vmd.max_iter = parse_int(key, v);
    else if (key == "stft.n_fft") c.stft.n_fft = parse_int(key, v);
    else if (key == "stft.hop") c.stft.hop = parse_int(key, v);
    else if (key == "stft.window") {
        if (v == "hann") c.stft.window = WindowFn::hann;
        else if (v == "rect") c.stft.window = WindowFn::rect;
        else throw DataError("config: stft.window must be hann or rect");
    } else if (key == "enc.widths") {
        std::vector<int> w;
        for (const auto& p : split_csv(v)) w.push_back(parse_int(key, trim(p)));
        if (w.empty()) throw DataError("config: enc.widths needs at least one entry");
        c.enc.widths = w;
    } else if (key == "enc.kernels") {
        const auto parts = split_csv(v);
        if (parts.size() != 3) throw DataError("config: enc.kernels needs exactly 3 entries");
        for (int i = 0; i < 3; ++i) c.enc.kernels[i] = parse_int(key, trim(parts[i]));
    } else if (key == "enc.embed_dim") c.enc.embed_dim = parse_int(key, v);
    else if (key == "enc.guide_stages") c.enc.guide_stages = parse_int(key, v);
    else if (key == "dec.hidden") c.dec.hidden = parse_int(key, v);
    else if (key == "dec.dropout") c.dec.rate = parse_double(key, v);
    else if (key == "spec.patch_h") c.smodel.patch_h = parse_int(key, v);
    else if (key == "spec.patch_w") c.smodel.patch_w = parse_int(key, v);
    else if (key == "spec.embed_dim") c.smodel.embed_dim = parse_int(key, v);
    else if (key == "spec.enc_depth") c.smodel.enc_depth = parse_int(key, v);
    else if (key == "spec.dec_depth") c.smodel.dec_depth = parse_int(key, v);
    else if (key == "spec.heads") c.smodel.heads = parse_int(key, v);
    else if (key == "spec.mlp_hidden") c.smodel.mlp_hidden = parse_int(key, v);
    else if (key == "spec.max_tokens") c.smodel.max_tokens = parse_int(key, v);
    else if (key == "fusion.rank") c.fusion_rank = parse_int(key, v);
    else if (key == "fusion.iterations") c.fusion_iterations = parse_int(key, v);
    else if (key == "fusion.kernel") c.fusion_kernel = parse_int(key, v);
    else if (key == "twrg.hidden") c.twrg_hidden = parse_int(key, v);
    else if (key.rfind("pre_temporal.", 0) == 0 || key.rfind("pre_spectro.", 0) == 0 ||
             key.rfind("pre_mixed.", 0) == 0 || key.rfind("adapt.", 0) == 0) {
        const auto dot = key.find('.');
        const std::string which = key.substr(0, dot), field = key.substr(dot + 1);
        TrainConfig& t = which == "pre_temporal" ? c.pre_temporal
                         : which == "pre_spectro" ? c.pre_spectro
                         : which == "pre_mixed"   ? c.pre_mixed
                                                  : c.adapt;
        if (field == "lr") t.lr = parse_double(key, v);
        else if (field == "batch_size") t.batch_size = parse_int(key, v);
        else if (field == "epochs") t.epochs = parse_int(key, v);
        else if (field == "seed") t.seed = parse_u64(key, v);
        else throw DataError("config: unknown key " + key);
    } else if (key == "mode") {
        if (v == "dpt") c.mode = TransferMode::dpt;
        else if (v == "fine_tune" || v == "fine-tune") c.mode = TransferMode::fine_tune;
        else if (v == "linear_probe" || v == "linear-probe") c.mode = TransferMode::linear_probe;
        else throw DataError("config: mode must be fine_tune, linear_probe, or dpt");
    } else if (key == "train_fraction") c.train_fraction = parse_double(key, v);
    else if (key == "seeds") {
        std::vector<std::uint64_t> s;
        for (const auto& p : split_csv(v)) s.push_back(parse_u64(key, trim(p)));
        if (s.empty()) throw DataError("config: seeds needs at least one entry");
        c.seeds = s;
    } else if (key == "out_dir") c.out_dir = v;
    else throw DataError("config: unknown key " + key);
}

PipelineConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot open " + path);
    PipelineConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("config: line " + std::to_string(lineno) + " lacks '='");
        apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

}  // namespace ppg
