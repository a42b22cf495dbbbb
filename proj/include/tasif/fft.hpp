// Radix-2 real FFT pair over matrix columns, plus the adjoint transforms
// used by the backward pass of the spectral filter.
#pragma once

#include "tasif/common.hpp"

namespace tasif {

// Half spectrum of a real [n x d] signal: floor(n/2)+1 bins per column.
struct ComplexSpectrum {
  i64 n_bins = 0;
  i64 cols = 0;
  std::vector<double> re;  // n_bins * cols, row-major
  std::vector<double> im;
};

// In-place complex FFT, n a power of two. inverse=true applies conjugate
// twiddles and the 1/n factor.
void fft_radix2(double* re, double* im, i64 n, bool inverse);

// Forward transform of real x [n x d], column-wise; bin k of column j is
// sum_t x[t,j] * exp(-2*pi*i*k*t/n). Bins 0 and n/2 carry exact zero
// imaginary parts. n must be a power of two.
ComplexSpectrum rfft(const double* x, i64 n, i64 d);

// Inverse of rfft: reconstructs the Hermitian extension from the half
// spectrum (imaginary parts of bins 0 and n/2 are ignored) and returns the
// real signal. s must hold floor(n/2)+1 bins.
void irfft(const ComplexSpectrum& s, i64 n, double* out);

// Adjoint of rfft as a real-linear map: given a cotangent on (re, im),
// produce the cotangent on x. Same layout conventions as rfft.
void rfft_adjoint(const ComplexSpectrum& cot, i64 n, double* out);

// Adjoint of irfft: given a cotangent on the real output, produce the
// cotangent on the half spectrum.
ComplexSpectrum irfft_adjoint(const double* cot, i64 n, i64 d);

}  // namespace tasif
