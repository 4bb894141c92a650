#include "ppgkit/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "ppgkit/errors.hpp"

namespace ppg {

namespace {

double parse_sample(const std::string& tok, size_t line_no) {
    try {
        size_t pos = 0;
        double val = std::stod(tok, &pos);
        while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
        if (pos != tok.size()) throw std::invalid_argument(tok);
        if (!std::isfinite(val))
            throw DataError("non-finite sample at line " + std::to_string(line_no));
        return val;
    } catch (const DataError&) {
        throw;
    } catch (const std::exception&) {
        throw DataError("unparseable sample '" + tok + "' at line " + std::to_string(line_no));
    }
}

void append_samples(const std::string& text, size_t line_no, std::vector<double>& out) {
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        // trim
        size_t b = tok.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = tok.find_last_not_of(" \t\r");
        out.push_back(parse_sample(tok.substr(b, e - b + 1), line_no));
    }
}

}  // namespace

PpgRecord load_record(const std::string& path, RecordFormat format,
                      std::optional<double> rate_override) {
    PpgRecord rec;
    if (format == RecordFormat::raw_f64) {
        if (!rate_override) throw DataError("raw-f64 input requires an explicit rate");
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("cannot open " + path);
        f.seekg(0, std::ios::end);
        const auto bytes = static_cast<size_t>(f.tellg());
        f.seekg(0);
        if (bytes % sizeof(double) != 0)
            throw DataError(path + ": size is not a multiple of 8 bytes");
        rec.samples.resize(bytes / sizeof(double));
        f.read(reinterpret_cast<char*>(rec.samples.data()), bytes);
        if (!f) throw DataError("short read on " + path);
        for (size_t i = 0; i < rec.samples.size(); ++i)
            if (!std::isfinite(rec.samples[i]))
                throw DataError(path + ": non-finite sample at index " + std::to_string(i));
        rec.rate = *rate_override;
    } else {
        std::ifstream f(path);
        if (!f) throw DataError("cannot open " + path);
        std::string line;
        size_t line_no = 0;
        bool have_rate = false;
        while (std::getline(f, line)) {
            ++line_no;
            std::string body = line;
            if (line_no == 1 && line.rfind("rate=", 0) == 0) {
                const size_t semi = line.find(';');
                const std::string rate_str = line.substr(5, semi == std::string::npos
                                                                ? std::string::npos
                                                                : semi - 5);
                try {
                    rec.rate = std::stod(rate_str);
                } catch (const std::exception&) {
                    throw DataError("bad rate header '" + line + "'");
                }
                have_rate = true;
                if (semi == std::string::npos) continue;
                body = line.substr(semi + 1);
            }
            if (line_no <= 2 && line.rfind("label=", 0) == 0) {
                try {
                    rec.label = std::stod(line.substr(6));
                } catch (const std::exception&) {
                    throw DataError("bad label header '" + line + "'");
                }
                continue;
            }
            append_samples(body, line_no, rec.samples);
        }
        if (!have_rate) {
            if (!rate_override) throw DataError(path + ": no rate header and no rate flag");
            rec.rate = *rate_override;
        } else if (rate_override) {
            rec.rate = *rate_override;
        }
    }
    if (rec.samples.empty()) throw DataError(path + ": no samples");
    if (!(rec.rate > 0.0)) throw DataError(path + ": nonpositive rate");
    return rec;
}

void save_record_csv(const PpgRecord& rec, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", rec.rate);
    f << "rate=" << buf << "\n";
    if (rec.label) {
        std::snprintf(buf, sizeof(buf), "%.17g", *rec.label);
        f << "label=" << buf << "\n";
    }
    for (double s : rec.samples) {
        std::snprintf(buf, sizeof(buf), "%.17g", s);
        f << buf << "\n";
    }
    if (!f) throw DataError("write failed on " + path);
}

PpgRecord resample(const PpgRecord& rec, double target_rate) {
    if (!(rec.rate > 0.0) || !(target_rate > 0.0))
        throw DataError("resample: rates must be positive");
    if (rec.samples.empty()) throw DataError("resample: empty record");
    PpgRecord out;
    out.rate = target_rate;
    out.label = rec.label;
    if (target_rate == rec.rate) {
        out.samples = rec.samples;
        return out;
    }
    const auto n_in = static_cast<long>(rec.samples.size());
    const auto n_out = static_cast<long>(
        std::llround(static_cast<double>(n_in) * target_rate / rec.rate));
    out.samples.resize(std::max<long>(n_out, 1));
    const double ratio = rec.rate / target_rate;
    for (long i = 0; i < static_cast<long>(out.samples.size()); ++i) {
        const double pos = static_cast<double>(i) * ratio;
        const long i0 = std::min(static_cast<long>(std::floor(pos)), n_in - 1);
        const long i1 = std::min(i0 + 1, n_in - 1);
        const double frac = pos - static_cast<double>(i0);
        out.samples[i] = rec.samples[i0] * (1.0 - frac) + rec.samples[i1] * frac;
    }
    return out;
}

std::vector<double> zscore(const std::vector<double>& x) {
    if (x.empty()) throw DataError("zscore: empty input");
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    if (var == 0.0) throw DataError("zscore: constant input has zero variance");
    const double inv = 1.0 / std::sqrt(var);
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
    return out;
}

DerivativeStack derivatives(const std::vector<double>& x) {
    const size_t n = x.size();
    if (n < 4) throw DataError("derivatives: need at least 4 samples");
    DerivativeStack d;
    d.vpg.resize(n);
    d.apg.resize(n);
    d.jpg.resize(n);
    for (size_t i = 1; i < n; ++i) d.vpg[i] = x[i] - x[i - 1];
    d.vpg[0] = d.vpg[1];
    for (size_t i = 2; i < n; ++i) d.apg[i] = x[i] - 2.0 * x[i - 1] + x[i - 2];
    d.apg[0] = d.apg[1] = d.apg[2];
    for (size_t i = 3; i < n; ++i)
        d.jpg[i] = x[i] - 3.0 * x[i - 1] + 3.0 * x[i - 2] - x[i - 3];
    d.jpg[0] = d.jpg[1] = d.jpg[2] = d.jpg[3];
    return d;
}

DerivativeStack derivatives(const PpgRecord& rec) { return derivatives(rec.samples); }

std::vector<std::vector<double>> window_slide(const PpgRecord& rec, double window_s,
                                              double step_s) {
    if (!(rec.rate > 0.0)) throw DataError("window_slide: nonpositive rate");
    const long w = std::llround(window_s * rec.rate);
    const long s = std::llround(step_s * rec.rate);
    if (w < 1 || s < 1) throw DataError("window_slide: window and step must span >= 1 sample");
    const long n = static_cast<long>(rec.samples.size());
    std::vector<std::vector<double>> out;
    if (n < w) return out;
    const long count = (n - w) / s + 1;
    out.reserve(count);
    for (long i = 0; i < count; ++i) {
        const long start = i * s;
        out.emplace_back(rec.samples.begin() + start, rec.samples.begin() + start + w);
    }
    return out;
}

PafPartition partition_paf(const Mat& window, double gamma) {
    if (!(gamma > 0.0) || !(gamma < 0.5))
        throw DataError("partition_paf: gamma must lie in (0, 0.5)");
    if (window.rows < 1 || window.cols < 1) throw DataError("partition_paf: empty window");
    const int p = static_cast<int>(std::floor(gamma * window.cols));
    if (p < 1) throw DataError("partition_paf: window too short for gamma");
    const int a = window.cols - 2 * p;
    PafPartition part;
    part.gamma = gamma;
    part.past = Mat(window.rows, p);
    part.anchor = Mat(window.rows, a);
    part.future = Mat(window.rows, p);
    for (int r = 0; r < window.rows; ++r) {
        const double* src = window.row(r);
        std::copy(src, src + p, part.past.row(r));
        std::copy(src + p, src + p + a, part.anchor.row(r));
        std::copy(src + p + a, src + window.cols, part.future.row(r));
    }
    return part;
}

PpgRecord synth_ppg(double hr_bpm, double noise_std, double length_s, double rate,
                    std::uint64_t seed) {
    if (hr_bpm < 30.0 || hr_bpm > 220.0)
        throw DataError("synth_ppg: hr_bpm outside [30, 220]");
    if (!(rate > 0.0) || !(length_s > 0.0))
        throw DataError("synth_ppg: rate and length must be positive");
    if (noise_std < 0.0) throw DataError("synth_ppg: negative noise_std");
    const long n = std::llround(length_s * rate);
    if (n < 1) throw DataError("synth_ppg: no samples");

    PpgRecord rec;
    rec.rate = rate;
    rec.samples.resize(n);
    const double f0 = hr_bpm / 60.0;
    const double two_pi = 2.0 * std::numbers::pi;

    // Box-Muller over raw 53-bit uniforms keeps the noise stream identical
    // across standard libraries.
    std::mt19937_64 rng(seed);
    auto unif = [&rng]() {
        return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
    };
    auto gauss = [&]() {
        const double u1 = unif();
        const double u2 = unif();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    };

    for (long i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        double v = std::sin(two_pi * f0 * t);
        v += 0.5 * std::sin(two_pi * 2.0 * f0 * t);
        v += 0.25 * std::sin(two_pi * 3.0 * f0 * t);
        v += 0.2 * std::sin(two_pi * 0.15 * t + 0.7);
        rec.samples[i] = v + noise_std * gauss();
    }
    return rec;
}

}  // namespace ppg
