#pragma once

#include <complex>
#include <vector>

namespace ppg {

using cplx = std::complex<double>;

// Forward DFT, X[j] = sum_n x[n] exp(-2*pi*i*j*n/N). No scaling.
std::vector<cplx> fft(const std::vector<cplx>& x);

// Inverse DFT with 1/N scaling, so ifft(fft(x)) == x up to roundoff.
std::vector<cplx> ifft(const std::vector<cplx>& x);

std::vector<cplx> fft_real(const std::vector<double>& x);

}  // namespace ppg
