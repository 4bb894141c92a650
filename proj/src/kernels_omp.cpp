#include "ppgkit/kernels.hpp"

// OpenMP variants parallelize over output elements only; the per-element
// reduction order matches the serial kernels exactly, so results are
// bit-identical for any thread count.

namespace ppg::kern::detail {

void matmul_nn_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
            c[i * n + j] = acc;
        }
    }
}

void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < m; ++p) acc += a[p * k + i] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

void conv1d_fwd_omp(const double* x, const double* w, const double* bias, double* y,
                    int nb, int cin, int len, int cout, int k, int stride, int pl, int pr) {
    const int lout = (len + pl + pr - k) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < nb; ++b) {
        for (int co = 0; co < cout; ++co) {
            for (int t = 0; t < lout; ++t) {
                double acc = bias ? bias[co] : 0.0;
                const int base = t * stride - pl;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xr = x + (static_cast<long>(b) * cin + ci) * len;
                    const double* wr = w + (static_cast<long>(co) * cin + ci) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const int n = base + kk;
                        if (n >= 0 && n < len) acc += xr[n] * wr[kk];
                    }
                }
                y[(static_cast<long>(b) * cout + co) * lout + t] = acc;
            }
        }
    }
}

void conv1d_bwd_x_omp(const double* dy, const double* w, double* dx,
                      int nb, int cin, int len, int cout, int k, int stride, int pl, int pr) {
    const int lout = (len + pl + pr - k) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < nb; ++b) {
        for (int ci = 0; ci < cin; ++ci) {
            for (int n = 0; n < len; ++n) {
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) {
                    const double* dyr = dy + (static_cast<long>(b) * cout + co) * lout;
                    const double* wr = w + (static_cast<long>(co) * cin + ci) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const int num = n + pl - kk;
                        if (num < 0 || num % stride != 0) continue;
                        const int t = num / stride;
                        if (t < lout) acc += dyr[t] * wr[kk];
                    }
                }
                dx[(static_cast<long>(b) * cin + ci) * len + n] += acc;
            }
        }
    }
}

void conv1d_bwd_w_omp(const double* dy, const double* x, double* dw,
                      int nb, int cin, int len, int cout, int k, int stride, int pl, int pr) {
    const int lout = (len + pl + pr - k) / stride + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < cin; ++ci) {
            for (int kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                for (int b = 0; b < nb; ++b) {
                    const double* dyr = dy + (static_cast<long>(b) * cout + co) * lout;
                    const double* xr = x + (static_cast<long>(b) * cin + ci) * len;
                    for (int t = 0; t < lout; ++t) {
                        const int n = t * stride + kk - pl;
                        if (n >= 0 && n < len) acc += dyr[t] * xr[n];
                    }
                }
                dw[(static_cast<long>(co) * cin + ci) * k + kk] += acc;
            }
        }
    }
}

void conv1d_bwd_b_omp(const double* dy, double* db, int nb, int cout, int lout) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int b = 0; b < nb; ++b) {
            const double* dyr = dy + (static_cast<long>(b) * cout + co) * lout;
            for (int t = 0; t < lout; ++t) acc += dyr[t];
        }
        db[co] += acc;
    }
}

}  // namespace ppg::kern::detail
