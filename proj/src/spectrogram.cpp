#include "ppgkit/spectrogram.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "ppgkit/errors.hpp"
#include "ppgkit/fft.hpp"

namespace ppg {

void StftConfig::validate() const {
    if (n_fft < 2) throw DataError("stft: n_fft must be >= 2");
    if (hop < 1 || hop > n_fft) throw DataError("stft: hop must satisfy 1 <= hop <= n_fft");
}

Spectrogram stft(const std::vector<double>& x, const StftConfig& cfg) {
    cfg.validate();
    const int n = static_cast<int>(x.size());
    if (n < cfg.n_fft) throw DataError("stft: signal shorter than one frame");

    const int overlap = cfg.n_fft - cfg.hop;
    const int frames = (n - overlap) / (cfg.n_fft - overlap);
    const int bins = cfg.n_fft / 2 + 1;

    std::vector<double> win(cfg.n_fft, 1.0);
    if (cfg.window == WindowFn::hann)
        for (int i = 0; i < cfg.n_fft; ++i)
            win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.n_fft);

    Spectrogram out;
    out.frames = frames;
    out.bins = bins;
    out.grid = Mat(frames, bins);
    std::vector<cplx> frame(cfg.n_fft);
    for (int m = 0; m < frames; ++m) {
        const int start = m * cfg.hop;
        for (int i = 0; i < cfg.n_fft; ++i)
            frame[i] = cplx(x[start + i] * win[i], 0.0);
        const std::vector<cplx> spec = fft(frame);
        for (int f = 0; f < bins; ++f) out.grid.at(m, f) = std::log1p(std::abs(spec[f]));
    }
    return out;
}

SpectrogramPatchSet patchify_and_mask(const Spectrogram& spec, int patch_h, int patch_w,
                                      double ratio, std::uint64_t seed) {
    if (patch_h < 1 || patch_w < 1) throw DataError("patchify: patch dims must be >= 1");
    if (!(ratio >= 0.0) || !(ratio < 1.0)) throw DataError("patchify: ratio must lie in [0, 1)");
    if (spec.frames < 1 || spec.bins < 1) throw DataError("patchify: empty spectrogram");

    SpectrogramPatchSet ps;
    ps.patch_h = patch_h;
    ps.patch_w = patch_w;
    ps.grid_rows = spec.frames;
    ps.grid_cols = spec.bins;
    ps.padded_rows = ((spec.frames + patch_h - 1) / patch_h) * patch_h;
    ps.padded_cols = ((spec.bins + patch_w - 1) / patch_w) * patch_w;
    ps.mask_ratio = ratio;

    const int prows = ps.padded_rows / patch_h;
    const int pcols = ps.padded_cols / patch_w;
    const int total = prows * pcols;
    ps.patches.reserve(total);
    for (int pr = 0; pr < prows; ++pr) {
        for (int pc = 0; pc < pcols; ++pc) {
            SpectrogramPatchSet::Patch p;
            p.row = pr;
            p.col = pc;
            p.values.resize(static_cast<size_t>(patch_h) * patch_w, 0.0);
            for (int i = 0; i < patch_h; ++i) {
                const int gr = pr * patch_h + i;
                if (gr >= spec.frames) continue;
                for (int j = 0; j < patch_w; ++j) {
                    const int gc = pc * patch_w + j;
                    if (gc >= spec.bins) continue;
                    p.values[static_cast<size_t>(i) * patch_w + j] = spec.grid.at(gr, gc);
                }
            }
            ps.patches.push_back(std::move(p));
        }
    }

    const int n_masked = static_cast<int>(std::llround(ratio * total));
    std::vector<int> order(total);
    for (int i = 0; i < total; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (int i = total - 1; i > 0; --i) {
        const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[i], order[j]);
    }
    ps.masked_idx.assign(order.begin(), order.begin() + n_masked);
    ps.visible_idx.assign(order.begin() + n_masked, order.end());
    std::sort(ps.masked_idx.begin(), ps.masked_idx.end());
    std::sort(ps.visible_idx.begin(), ps.visible_idx.end());
    return ps;
}

Mat reassemble(const SpectrogramPatchSet& ps) {
    Mat out(ps.padded_rows, ps.padded_cols);
    for (const auto& p : ps.patches) {
        for (int i = 0; i < ps.patch_h; ++i)
            for (int j = 0; j < ps.patch_w; ++j)
                out.at(p.row * ps.patch_h + i, p.col * ps.patch_w + j) =
                    p.values[static_cast<size_t>(i) * ps.patch_w + j];
    }
    return out;
}

}  // namespace ppg
