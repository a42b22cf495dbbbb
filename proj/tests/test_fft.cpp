#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <complex>
#include <vector>

#include "tasif/common.hpp"
#include "tasif/fft.hpp"

using namespace tasif;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Oracle: O(n^2) definition of the transform, no shared code with the
// implementation under test.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  size_t n = x.size();
  std::vector<std::complex<double>> X(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (size_t t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, -2.0 * kPi * static_cast<double>(k * t) / static_cast<double>(n));
    X[k] = acc;
  }
  return X;
}

std::vector<double> random_signal(i64 n, Rng& rng) {
  std::vector<double> x(static_cast<size_t>(n));
  for (double& v : x) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("half spectrum matches the quadratic-time definition") {
  Rng rng(11);
  for (i64 n : {2, 4, 8, 16, 32, 64}) {
    std::vector<double> x = random_signal(n, rng);
    ComplexSpectrum s = rfft(x.data(), n, 1);
    auto oracle = naive_dft(x);
    REQUIRE(s.n_bins == n / 2 + 1);
    for (i64 k = 0; k <= n / 2; ++k) {
      CHECK(std::fabs(s.re[static_cast<size_t>(k)] - oracle[static_cast<size_t>(k)].real()) < 1e-9);
      CHECK(std::fabs(s.im[static_cast<size_t>(k)] - oracle[static_cast<size_t>(k)].imag()) < 1e-9);
    }
  }
}

TEST_CASE("multi-column transform equals per-column transforms") {
  Rng rng(12);
  i64 n = 16, d = 5;
  std::vector<double> x(static_cast<size_t>(n * d));
  for (double& v : x) v = rng.normal();
  ComplexSpectrum s = rfft(x.data(), n, d);
  for (i64 j = 0; j < d; ++j) {
    std::vector<double> col(static_cast<size_t>(n));
    for (i64 t = 0; t < n; ++t) col[static_cast<size_t>(t)] = x[static_cast<size_t>(t * d + j)];
    auto oracle = naive_dft(col);
    for (i64 k = 0; k <= n / 2; ++k) {
      CHECK(std::fabs(s.re[static_cast<size_t>(k * d + j)] - oracle[static_cast<size_t>(k)].real()) < 1e-9);
      CHECK(std::fabs(s.im[static_cast<size_t>(k * d + j)] - oracle[static_cast<size_t>(k)].imag()) < 1e-9);
    }
  }
}

TEST_CASE("bins 0 and n/2 are purely real") {
  Rng rng(13);
  i64 n = 32;
  std::vector<double> x = random_signal(n, rng);
  ComplexSpectrum s = rfft(x.data(), n, 1);
  CHECK(s.im[0] == 0.0);
  CHECK(s.im[static_cast<size_t>(n / 2)] == 0.0);
}

TEST_CASE("impulse and constant signals have the expected spectra") {
  i64 n = 8;
  std::vector<double> delta(static_cast<size_t>(n), 0.0);
  delta[0] = 1.0;
  ComplexSpectrum s = rfft(delta.data(), n, 1);
  for (i64 k = 0; k <= n / 2; ++k) {
    CHECK(s.re[static_cast<size_t>(k)] == doctest::Approx(1.0));
    CHECK(std::fabs(s.im[static_cast<size_t>(k)]) < 1e-12);
  }

  std::vector<double> ones(static_cast<size_t>(n), 1.0);
  s = rfft(ones.data(), n, 1);
  CHECK(s.re[0] == doctest::Approx(static_cast<double>(n)));
  for (i64 k = 1; k <= n / 2; ++k) CHECK(std::fabs(s.re[static_cast<size_t>(k)]) < 1e-12);
}

TEST_CASE("inverse transform reconstructs the signal") {
  Rng rng(14);
  for (i64 n : {2, 4, 8, 16, 64, 128, 256}) {
    std::vector<double> x = random_signal(n, rng);
    ComplexSpectrum s = rfft(x.data(), n, 1);
    std::vector<double> back(static_cast<size_t>(n));
    irfft(s, n, back.data());
    for (i64 t = 0; t < n; ++t)
      CHECK(std::fabs(back[static_cast<size_t>(t)] - x[static_cast<size_t>(t)]) < 1e-10);
  }
}

TEST_CASE("forward transform of an inverse recovers a valid half spectrum") {
  Rng rng(15);
  i64 n = 64, m = n / 2 + 1;
  ComplexSpectrum s;
  s.n_bins = m;
  s.cols = 1;
  s.re = random_signal(m, rng);
  s.im = random_signal(m, rng);
  s.im[0] = 0.0;
  s.im[static_cast<size_t>(n / 2)] = 0.0;
  std::vector<double> x(static_cast<size_t>(n));
  irfft(s, n, x.data());
  ComplexSpectrum s2 = rfft(x.data(), n, 1);
  for (i64 k = 0; k < m; ++k) {
    CHECK(std::fabs(s2.re[static_cast<size_t>(k)] - s.re[static_cast<size_t>(k)]) < 1e-10);
    CHECK(std::fabs(s2.im[static_cast<size_t>(k)] - s.im[static_cast<size_t>(k)]) < 1e-10);
  }
}

TEST_CASE("energy is preserved between domains") {
  Rng rng(16);
  i64 n = 64;
  std::vector<double> x = random_signal(n, rng);
  ComplexSpectrum s = rfft(x.data(), n, 1);
  double time_energy = 0.0;
  for (double v : x) time_energy += v * v;
  double freq_energy = s.re[0] * s.re[0];
  for (i64 k = 1; k < n / 2; ++k)
    freq_energy += 2.0 * (s.re[static_cast<size_t>(k)] * s.re[static_cast<size_t>(k)] +
                          s.im[static_cast<size_t>(k)] * s.im[static_cast<size_t>(k)]);
  freq_energy += s.re[static_cast<size_t>(n / 2)] * s.re[static_cast<size_t>(n / 2)];
  freq_energy /= static_cast<double>(n);
  CHECK(freq_energy == doctest::Approx(time_energy).epsilon(1e-10));
}

TEST_CASE("adjoint of the forward transform satisfies the inner-product identity") {
  Rng rng(17);
  for (i64 n : {4, 8, 32}) {
    i64 m = n / 2 + 1, d = 3;
    std::vector<double> x(static_cast<size_t>(n * d));
    for (double& v : x) v = rng.normal();
    ComplexSpectrum cot;
    cot.n_bins = m;
    cot.cols = d;
    cot.re = random_signal(m * d, rng);
    cot.im = random_signal(m * d, rng);

    ComplexSpectrum fx = rfft(x.data(), n, d);
    double lhs = 0.0;
    for (size_t i = 0; i < fx.re.size(); ++i) lhs += fx.re[i] * cot.re[i] + fx.im[i] * cot.im[i];

    std::vector<double> adj(static_cast<size_t>(n * d));
    rfft_adjoint(cot, n, adj.data());
    double rhs = 0.0;
    for (size_t i = 0; i < x.size(); ++i) rhs += x[i] * adj[i];

    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("adjoint of the inverse transform satisfies the inner-product identity") {
  Rng rng(18);
  for (i64 n : {4, 8, 32}) {
    i64 m = n / 2 + 1, d = 2;
    ComplexSpectrum s;
    s.n_bins = m;
    s.cols = d;
    s.re = random_signal(m * d, rng);
    s.im = random_signal(m * d, rng);
    // imaginary parts the forward map never reads must not contribute
    std::vector<double> cot(static_cast<size_t>(n * d));
    for (double& v : cot) v = rng.normal();

    std::vector<double> y(static_cast<size_t>(n * d));
    irfft(s, n, y.data());
    double lhs = 0.0;
    for (size_t i = 0; i < y.size(); ++i) lhs += y[i] * cot[i];

    ComplexSpectrum adj = irfft_adjoint(cot.data(), n, d);
    double rhs = 0.0;
    for (size_t i = 0; i < adj.re.size(); ++i) rhs += s.re[i] * adj.re[i] + s.im[i] * adj.im[i];

    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    for (i64 j = 0; j < d; ++j) {
      CHECK(adj.im[static_cast<size_t>(j)] == 0.0);
      CHECK(adj.im[static_cast<size_t>((m - 1) * d + j)] == 0.0);
    }
  }
}

TEST_CASE("non-power-of-two lengths are rejected") {
  std::vector<double> x(6, 1.0);
  CHECK_THROWS_AS(rfft(x.data(), 6, 1), std::invalid_argument);
  double re[3] = {0, 0, 0}, im[3] = {0, 0, 0};
  CHECK_THROWS_AS(fft_radix2(re, im, 3, false), std::invalid_argument);
}
