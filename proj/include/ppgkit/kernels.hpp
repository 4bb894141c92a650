#pragma once

#include <cstdint>

// Dense inner loops shared by the tensor ops. Every kernel has a serial
// reference implementation and an OpenMP variant; both produce bit-identical
// results because each output element is reduced in the same order by exactly
// one thread.

namespace ppg::kern {

enum class Backend { serial, openmp };

Backend& backend();  // process-wide setting, default openmp when compiled in
bool openmp_compiled();
int max_threads();

// C(m,n) = A(m,k) * B(k,n)
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// C(m,n) = A(m,k) * B(n,k)^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// C(k,n) = A(m,k)^T * B(m,n)
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

// x (B,Cin,L), w (Cout,Cin,K), bias (Cout) nullable, y (B,Cout,Lout)
// Lout = (L + pl + pr - K)/stride + 1
void conv1d_fwd(const double* x, const double* w, const double* bias, double* y,
                int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_x(const double* dy, const double* w, double* dx,
                  int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_w(const double* dy, const double* x, double* dw,
                  int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_b(const double* dy, double* db, int nb, int cout, int lout);

namespace detail {
void matmul_nn_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n);
void conv1d_fwd_serial(const double* x, const double* w, const double* bias, double* y,
                       int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_x_serial(const double* dy, const double* w, double* dx,
                         int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_w_serial(const double* dy, const double* x, double* dw,
                         int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_b_serial(const double* dy, double* db, int nb, int cout, int lout);

void matmul_nn_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k, int n);
void conv1d_fwd_omp(const double* x, const double* w, const double* bias, double* y,
                    int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_x_omp(const double* dy, const double* w, double* dx,
                      int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_w_omp(const double* dy, const double* x, double* dw,
                      int nb, int cin, int len, int cout, int k, int stride, int pl, int pr);
void conv1d_bwd_b_omp(const double* dy, double* db, int nb, int cout, int lout);
}  // namespace detail

}  // namespace ppg::kern
