#pragma once

#include <vector>

#include "ppgkit/signal.hpp"

namespace ppg {

struct VmdConfig {
    int k = 4;              // number of modes
    double alpha = 2000.0;  // bandwidth penalty
    double tau = 0.0;       // dual ascent step; 0 disables the multiplier
    double eps = 1e-7;      // relative-change stopping threshold
    int max_iter = 500;

    void validate() const;
};

/// Narrowband components of a signal. center_freqs are in cycles per sample,
/// so a tone at f Hz sampled at rate M lands near f/M. residual is
/// input minus the sum of modes, making the reconstruction identity exact.
struct ModeSet {
    std::vector<std::vector<double>> modes;  // k rows, each input length
    std::vector<double> center_freqs;        // per mode, in [0, 0.5]
    std::vector<double> residual;
    int iterations_used = 0;
};

ModeSet vmd_decompose(const std::vector<double>& signal, const VmdConfig& cfg);

// Stack the raw signal (row 0) on top of its modes (rows 1..k).
Mat dilate(const std::vector<double>& signal, const ModeSet& modes);

}  // namespace ppg
