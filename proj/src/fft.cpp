#include "ppgkit/fft.hpp"

#include <fftw3.h>

#include <mutex>
#include <stdexcept>

namespace ppg {

namespace {
// FFTW plan creation is not thread-safe; execution on plan-owned arrays is.
std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
}

std::vector<cplx> run(const std::vector<cplx>& x, int sign) {
    const int n = static_cast<int>(x.size());
    if (n == 0) throw std::invalid_argument("fft: empty input");
    fftw_complex* buf = fftw_alloc_complex(n);
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lk(plan_mutex());
        plan = fftw_plan_dft_1d(n, buf, buf, sign, FFTW_ESTIMATE);
    }
    for (int i = 0; i < n; ++i) {
        buf[i][0] = x[i].real();
        buf[i][1] = x[i].imag();
    }
    fftw_execute(plan);
    std::vector<cplx> out(n);
    const double scale = sign == FFTW_BACKWARD ? 1.0 / n : 1.0;
    for (int i = 0; i < n; ++i) out[i] = cplx(buf[i][0] * scale, buf[i][1] * scale);
    {
        std::lock_guard<std::mutex> lk(plan_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(buf);
    return out;
}
}  // namespace

std::vector<cplx> fft(const std::vector<cplx>& x) { return run(x, FFTW_FORWARD); }

std::vector<cplx> ifft(const std::vector<cplx>& x) { return run(x, FFTW_BACKWARD); }

std::vector<cplx> fft_real(const std::vector<double>& x) {
    std::vector<cplx> c(x.size());
    for (size_t i = 0; i < x.size(); ++i) c[i] = cplx(x[i], 0.0);
    return fft(c);
}

}  // namespace ppg
