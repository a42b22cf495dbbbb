#include "tasif/fft.hpp"

#include <cmath>

namespace tasif {

void fft_radix2(double* re, double* im, i64 n, bool inverse) {
  TASIF_CHECK(is_power_of_two(n), "fft length " << n << " is not a power of two");
  // bit reversal permutation
  for (i64 i = 1, j = 0; i < n; ++i) {
    i64 bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (i64 len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    double wr = std::cos(ang), wi = std::sin(ang);
    for (i64 i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (i64 k = 0; k < len / 2; ++k) {
        i64 a = i + k, b = i + k + len / 2;
        double ur = re[a], ui = im[a];
        double vr = re[b] * cr - im[b] * ci;
        double vi = re[b] * ci + im[b] * cr;
        re[a] = ur + vr;
        im[a] = ui + vi;
        re[b] = ur - vr;
        im[b] = ui - vi;
        double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
  if (inverse) {
    double inv = 1.0 / static_cast<double>(n);
    for (i64 i = 0; i < n; ++i) {
      re[i] *= inv;
      im[i] *= inv;
    }
  }
}

ComplexSpectrum rfft(const double* x, i64 n, i64 d) {
  TASIF_CHECK(is_power_of_two(n), "rfft length " << n << " is not a power of two");
  i64 m = n / 2 + 1;
  ComplexSpectrum s;
  s.n_bins = m;
  s.cols = d;
  s.re.assign(static_cast<size_t>(m * d), 0.0);
  s.im.assign(static_cast<size_t>(m * d), 0.0);
  std::vector<double> br(static_cast<size_t>(n)), bi(static_cast<size_t>(n));
  for (i64 j = 0; j < d; ++j) {
    for (i64 t = 0; t < n; ++t) {
      br[static_cast<size_t>(t)] = x[t * d + j];
      bi[static_cast<size_t>(t)] = 0.0;
    }
    fft_radix2(br.data(), bi.data(), n, false);
    for (i64 k = 0; k < m; ++k) {
      s.re[static_cast<size_t>(k * d + j)] = br[static_cast<size_t>(k)];
      s.im[static_cast<size_t>(k * d + j)] = bi[static_cast<size_t>(k)];
    }
    // real input: these are zero in exact arithmetic
    s.im[static_cast<size_t>(0 * d + j)] = 0.0;
    if (n % 2 == 0) s.im[static_cast<size_t>((n / 2) * d + j)] = 0.0;
  }
  return s;
}

void irfft(const ComplexSpectrum& s, i64 n, double* out) {
  TASIF_CHECK(is_power_of_two(n), "irfft length " << n << " is not a power of two");
  i64 m = n / 2 + 1;
  TASIF_CHECK(s.n_bins == m,
              "irfft: spectrum has " << s.n_bins << " bins, length " << n << " needs " << m);
  i64 d = s.cols;
  std::vector<double> br(static_cast<size_t>(n)), bi(static_cast<size_t>(n));
  for (i64 j = 0; j < d; ++j) {
    // Hermitian extension; imaginary parts at bins 0 and n/2 are dropped.
    br[0] = s.re[static_cast<size_t>(j)];
    bi[0] = 0.0;
    for (i64 k = 1; k < m - 1; ++k) {
      double r = s.re[static_cast<size_t>(k * d + j)];
      double i = s.im[static_cast<size_t>(k * d + j)];
      br[static_cast<size_t>(k)] = r;
      bi[static_cast<size_t>(k)] = i;
      br[static_cast<size_t>(n - k)] = r;
      bi[static_cast<size_t>(n - k)] = -i;
    }
    br[static_cast<size_t>(n / 2)] = s.re[static_cast<size_t>((m - 1) * d + j)];
    bi[static_cast<size_t>(n / 2)] = 0.0;
    fft_radix2(br.data(), bi.data(), n, true);
    for (i64 t = 0; t < n; ++t) out[t * d + j] = br[static_cast<size_t>(t)];
  }
}

void rfft_adjoint(const ComplexSpectrum& cot, i64 n, double* out) {
  i64 m = n / 2 + 1;
  TASIF_CHECK(cot.n_bins == m, "rfft_adjoint: bin count mismatch");
  i64 d = cot.cols;
  std::vector<double> br(static_cast<size_t>(n)), bi(static_cast<size_t>(n));
  for (i64 j = 0; j < d; ++j) {
    // adjoint of the real-linear map x -> (Re X, Im X) on the first m bins:
    // out[t] = sum_k Gr_k cos(2pi k t / n) - Gi_k sin(2pi k t / n)
    //        = Re[ unnormalized inverse DFT of G zero-padded to n ]
    for (i64 k = 0; k < n; ++k) {
      if (k < m) {
        br[static_cast<size_t>(k)] = cot.re[static_cast<size_t>(k * d + j)];
        bi[static_cast<size_t>(k)] = cot.im[static_cast<size_t>(k * d + j)];
      } else {
        br[static_cast<size_t>(k)] = 0.0;
        bi[static_cast<size_t>(k)] = 0.0;
      }
    }
    fft_radix2(br.data(), bi.data(), n, true);
    for (i64 t = 0; t < n; ++t)
      out[t * d + j] = br[static_cast<size_t>(t)] * static_cast<double>(n);
  }
}

ComplexSpectrum irfft_adjoint(const double* cot, i64 n, i64 d) {
  i64 m = n / 2 + 1;
  ComplexSpectrum g;
  g.n_bins = m;
  g.cols = d;
  g.re.assign(static_cast<size_t>(m * d), 0.0);
  g.im.assign(static_cast<size_t>(m * d), 0.0);
  // Rows of the irfft matrix: y_t = (1/n)[Y0 + 2*sum_interior(...) + (-1)^t Y_{n/2}],
  // so the adjoint is a forward transform with per-bin weights 1/n or 2/n.
  ComplexSpectrum f = rfft(cot, n, d);
  double inv = 1.0 / static_cast<double>(n);
  for (i64 k = 0; k < m; ++k) {
    double w = (k == 0 || k == n / 2) ? inv : 2.0 * inv;
    for (i64 j = 0; j < d; ++j) {
      g.re[static_cast<size_t>(k * d + j)] = w * f.re[static_cast<size_t>(k * d + j)];
      g.im[static_cast<size_t>(k * d + j)] = w * f.im[static_cast<size_t>(k * d + j)];
    }
  }
  // bins 0 and n/2 ignore their imaginary inputs in the forward map
  for (i64 j = 0; j < d; ++j) {
    g.im[static_cast<size_t>(j)] = 0.0;
    g.im[static_cast<size_t>((m - 1) * d + j)] = 0.0;
  }
  return g;
}

}  // namespace tasif
