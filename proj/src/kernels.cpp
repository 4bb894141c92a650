#include "ppgkit/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ppg::kern {

Backend& backend() {
#ifdef _OPENMP
    static Backend b = Backend::openmp;
#else
    static Backend b = Backend::serial;
#endif
    return b;
}

bool openmp_compiled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {
bool use_omp() { return openmp_compiled() && backend() == Backend::openmp; }
}

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    use_omp() ? detail::matmul_nn_omp(a, b, c, m, k, n)
              : detail::matmul_nn_serial(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    use_omp() ? detail::matmul_nt_omp(a, b, c, m, k, n)
              : detail::matmul_nt_serial(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    use_omp() ? detail::matmul_tn_omp(a, b, c, m, k, n)
              : detail::matmul_tn_serial(a, b, c, m, k, n);
}

void conv1d_fwd(const double* x, const double* w, const double* bias, double* y,
                int nb, int cin, int len, int cout, int k, int stride, int pl, int pr) {
    use_omp() ? detail::conv1d_fwd_omp(x, w, bias, y, nb, cin, len, cout, k, stride, pl, pr)
              : detail::conv1d_fwd_serial(x, w, bias, y, nb, cin, len, cout, k, stride, pl, pr);
}

void conv1d_bwd_x(const double* dy, const double* w, double* dx,
                  int nb, int cin, int len, int cout, int k, int stride, int pl, int pr) {
    use_omp() ? detail::conv1d_bwd_x_omp(dy, w, dx, nb, cin, len, cout, k, stride, pl, pr)
              : detail::conv1d_bwd_x_serial(dy, w, dx, nb, cin, len, cout, k, stride, pl, pr);
}

void conv1d_bwd_w(const double* dy, const double* x, double* dw,
                  int nb, int cin, int len, int cout, int k, int stride, int pl, int pr) {
    use_omp() ? detail::conv1d_bwd_w_omp(dy, x, dw, nb, cin, len, cout, k, stride, pl, pr)
              : detail::conv1d_bwd_w_serial(dy, x, dw, nb, cin, len, cout, k, stride, pl, pr);
}

void conv1d_bwd_b(const double* dy, double* db, int nb, int cout, int lout) {
    use_omp() ? detail::conv1d_bwd_b_omp(dy, db, nb, cout, lout)
              : detail::conv1d_bwd_b_serial(dy, db, nb, cout, lout);
}

}  // namespace ppg::kern
