#include "ppgkit/vmd.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "ppgkit/errors.hpp"
#include "ppgkit/fft.hpp"

namespace ppg {

void VmdConfig::validate() const {
    if (k < 1) throw DataError("vmd: k must be >= 1");
    if (!(alpha > 0.0)) throw DataError("vmd: alpha must be positive");
    if (tau < 0.0) throw DataError("vmd: tau must be >= 0");
    if (!(eps > 0.0)) throw DataError("vmd: eps must be positive");
    if (max_iter < 1) throw DataError("vmd: max_iter must be >= 1");
}

ModeSet vmd_decompose(const std::vector<double>& signal, const VmdConfig& cfg) {
    cfg.validate();
    const int n0 = static_cast<int>(signal.size());
    if (n0 < 8) throw DataError("vmd: signal shorter than 8 samples");
    for (double v : signal)
        if (!std::isfinite(v)) throw DataError("vmd: non-finite input sample");

    // Mirror-extend by half the length on each side to soften boundary leakage.
    const int half = n0 / 2;
    std::vector<double> ext;
    ext.reserve(n0 + 2 * half);
    for (int i = half - 1; i >= 0; --i) ext.push_back(signal[i]);
    ext.insert(ext.end(), signal.begin(), signal.end());
    for (int i = n0 - 1; i >= n0 - half; --i) ext.push_back(signal[i]);

    const int t = static_cast<int>(ext.size());
    const int hb = t / 2 + 1;  // nonnegative-frequency bins
    const std::vector<cplx> x_hat_full = fft_real(ext);

    std::vector<cplx> x_hat(x_hat_full.begin(), x_hat_full.begin() + hb);
    std::vector<double> freq(hb);
    for (int j = 0; j < hb; ++j) freq[j] = static_cast<double>(j) / t;

    const int k = cfg.k;
    std::vector<std::vector<cplx>> u(k, std::vector<cplx>(hb, cplx(0.0, 0.0)));
    std::vector<std::vector<cplx>> u_prev(k, std::vector<cplx>(hb, cplx(0.0, 0.0)));
    std::vector<cplx> lam(hb, cplx(0.0, 0.0));
    std::vector<cplx> sum_all(hb, cplx(0.0, 0.0));
    std::vector<double> omega(k);
    for (int i = 0; i < k; ++i) omega[i] = 0.5 * (i + 0.5) / k;

    int iters = 0;
    for (int n = 0; n < cfg.max_iter; ++n) {
        u_prev = u;
        for (int i = 0; i < k; ++i) {
            double num = 0.0, den = 0.0;
            for (int j = 0; j < hb; ++j) {
                const cplx others = sum_all[j] - u[i][j];
                const double d = freq[j] - omega[i];
                const cplx next =
                    (x_hat[j] - others + lam[j] * 0.5) / (1.0 + 2.0 * cfg.alpha * d * d);
                sum_all[j] += next - u[i][j];
                u[i][j] = next;
                const double p = std::norm(next);
                num += freq[j] * p;
                den += p;
            }
            if (den > 0.0) omega[i] = num / den;
        }
        if (cfg.tau != 0.0)
            for (int j = 0; j < hb; ++j) lam[j] += cfg.tau * (x_hat[j] - sum_all[j]);

        double change = 0.0;
        for (int i = 0; i < k; ++i) {
            double diff = 0.0, base = 0.0;
            for (int j = 0; j < hb; ++j) {
                diff += std::norm(u[i][j] - u_prev[i][j]);
                base += std::norm(u_prev[i][j]);
            }
            change += diff / std::max(base, 1e-300);
        }
        if (!std::isfinite(change))
            throw NumericError("vmd: diverged (non-finite mode update)");
        iters = n + 1;
        if (change < cfg.eps) break;
    }

    // Hermitian completion then inverse transforms, one per mode.
    ModeSet out;
    out.iterations_used = iters;
    out.modes.resize(k);
    out.center_freqs.resize(k);
    const double sig_norm = [&] {
        double s = 0.0;
        for (double v : signal) s += v * v;
        return std::sqrt(s);
    }();
    for (int i = 0; i < k; ++i) {
        std::vector<cplx> full(t, cplx(0.0, 0.0));
        for (int j = 0; j < hb; ++j) full[j] = u[i][j];
        for (int j = 1; j < t - hb + 1; ++j) full[t - j] = std::conj(u[i][j]);
        const std::vector<cplx> time = ifft(full);
        double max_imag = 0.0;
        out.modes[i].resize(n0);
        for (int s = 0; s < n0; ++s) {
            const cplx v = time[half + s];
            out.modes[i][s] = v.real();
            max_imag = std::max(max_imag, std::abs(v.imag()));
        }
        if (sig_norm > 0.0 && max_imag > 1e-9 * sig_norm)
            throw NumericError("vmd: reconstruction lost realness");
        out.center_freqs[i] = std::clamp(omega[i], 0.0, 0.5);
    }
    out.residual.resize(n0);
    for (int s = 0; s < n0; ++s) {
        double acc = signal[s];
        for (int i = 0; i < k; ++i) acc -= out.modes[i][s];
        out.residual[s] = acc;
    }
    return out;
}

Mat dilate(const std::vector<double>& signal, const ModeSet& modes) {
    const int n = static_cast<int>(signal.size());
    for (const auto& m : modes.modes)
        if (static_cast<int>(m.size()) != n)
            throw DataError("dilate: mode length does not match signal");
    Mat out(1 + static_cast<int>(modes.modes.size()), n);
    std::copy(signal.begin(), signal.end(), out.row(0));
    for (size_t i = 0; i < modes.modes.size(); ++i)
        std::copy(modes.modes[i].begin(), modes.modes[i].end(), out.row(1 + static_cast<int>(i)));
    return out;
}

}  // namespace ppg
