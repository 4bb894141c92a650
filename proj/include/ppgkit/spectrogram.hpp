#pragma once

#include <cstdint>
#include <vector>

#include "ppgkit/signal.hpp"

namespace ppg {

enum class WindowFn { hann, rect };

struct StftConfig {
    int n_fft = 128;
    int hop = 32;
    WindowFn window = WindowFn::hann;

    void validate() const;
};

/// Log-magnitude time-frequency grid: grid[frame][bin] = log(1 + |X|),
/// frames along rows, n_fft/2+1 bins along columns. Frame m covers samples
/// [m*hop, m*hop + n_fft); partial tail frames are dropped.
struct Spectrogram {
    Mat grid;
    int frames = 0;
    int bins = 0;
};

struct SpectrogramPatchSet {
    struct Patch {
        int row = 0;  // patch-grid coordinates
        int col = 0;
        std::vector<double> values;  // patch_h * patch_w pixels, row-major
    };

    std::vector<Patch> patches;  // row-major over the patch grid
    std::vector<int> visible_idx;  // ascending
    std::vector<int> masked_idx;   // ascending
    int patch_h = 0;
    int patch_w = 0;
    int grid_rows = 0;  // before padding
    int grid_cols = 0;
    int padded_rows = 0;
    int padded_cols = 0;
    double mask_ratio = 0.0;
};

Spectrogram stft(const std::vector<double>& x, const StftConfig& cfg);

// Zero-pad the grid up to patch multiples, cut row-major patches, and mask
// round(ratio * count) of them uniformly at random (seeded).
SpectrogramPatchSet patchify_and_mask(const Spectrogram& spec, int patch_h, int patch_w,
                                      double ratio, std::uint64_t seed);

// Padded grid rebuilt from the stored patches.
Mat reassemble(const SpectrogramPatchSet& ps);

}  // namespace ppg
