#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ppg {

// Row-major dense matrix; rows index channels in most call sites.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
    const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
};

/// A single-channel waveform with its sampling rate and an optional target
/// value attached by the caller (heart rate, SpO2, whatever is being learned).
struct PpgRecord {
    std::vector<double> samples;
    double rate = 0.0;  // Hz
    std::optional<double> label;
};

/// First three left-difference derivatives of a waveform, lengths preserved
/// by replicating the leftmost valid value into the edge positions.
struct DerivativeStack {
    std::vector<double> vpg;  // x_i - x_{i-1}
    std::vector<double> apg;  // x_i - 2 x_{i-1} + x_{i-2}
    std::vector<double> jpg;  // x_i - 3 x_{i-1} + 3 x_{i-2} - x_{i-3}
};

/// Column split of a multichannel window into past / anchor / future.
struct PafPartition {
    Mat past;
    Mat anchor;
    Mat future;
    double gamma = 0.0;
};

enum class RecordFormat { csv, raw_f64 };

// CSV: optional first line "rate=<Hz>" (samples may follow on the same line
// after ';'), optional "label=<v>" line next, then newline- or
// comma-separated samples. raw_f64: little-endian doubles, rate must come
// from rate_override.
PpgRecord load_record(const std::string& path, RecordFormat format,
                      std::optional<double> rate_override = std::nullopt);

void save_record_csv(const PpgRecord& rec, const std::string& path);

// Linear interpolation onto round(len * target / rate) samples.
PpgRecord resample(const PpgRecord& rec, double target_rate);

// (x - mean) / population std. Constant input is an error.
std::vector<double> zscore(const std::vector<double>& x);

DerivativeStack derivatives(const std::vector<double>& x);
DerivativeStack derivatives(const PpgRecord& rec);

// Fixed-length windows of window_s seconds every step_s seconds.
// Count = floor((len - W) / S) + 1; shorter records yield no windows.
std::vector<std::vector<double>> window_slide(const PpgRecord& rec, double window_s,
                                              double step_s);

// First floor(gamma*cols) columns to past, last floor(gamma*cols) to future,
// remainder to anchor. Requires 0 < gamma < 0.5 and a nonempty anchor.
PafPartition partition_paf(const Mat& window, double gamma);

// Fundamental at hr_bpm/60 Hz plus two decaying harmonics, slow baseline
// wander below 0.2 Hz, and seeded Gaussian noise scaled by noise_std.
PpgRecord synth_ppg(double hr_bpm, double noise_std, double length_s, double rate,
                    std::uint64_t seed);

}  // namespace ppg
