#include "tasif/ops.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "tasif/fft.hpp"

namespace tasif {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  TASIF_CHECK(a.shape() == b.shape(),
              op << ": shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
}

i64 last_dim(const Tensor& t) {
  TASIF_CHECK(t.ndim() >= 1, "expected at least 1-d tensor");
  return t.dim(t.ndim() - 1);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a, &b})) {
    y.set_requires_grad();
    Tape::active()->record([a, b, y] {
      const auto& g = y.grad();
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) b.accumulate_grad(g);
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a, &b})) {
    y.set_requires_grad();
    Tape::active()->record([a, b, y] {
      const auto& g = y.grad();
      if (a.requires_grad()) a.accumulate_grad(g);
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a, &b})) {
    y.set_requires_grad();
    Tape::active()->record([a, b, y] {
      const auto& g = y.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        const auto& bv2 = b.data();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv2[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        const auto& av = a.data();
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.data());
  for (double& x : v) x *= c;
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a})) {
    y.set_requires_grad();
    Tape::active()->record([a, y, c] {
      const auto& g = y.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += c * g[i];
    });
  }
  return y;
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.data());
  for (double& x : v) x += c;
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a})) {
    y.set_requires_grad();
    Tape::active()->record([a, y] { a.accumulate_grad(y.grad()); });
  }
  return y;
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.data());
  for (double& x : v) x = stable_sigmoid(x);
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a})) {
    y.set_requires_grad();
    Tape::active()->record([a, y] {
      const auto& g = y.grad();
      const auto& s = y.data();
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
    });
  }
  return y;
}

Tensor softplus(const Tensor& a) {
  std::vector<double> v(a.data());
  for (double& x : v) x = std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a})) {
    y.set_requires_grad();
    Tape::active()->record([a, y] {
      const auto& g = y.grad();
      const auto& x = a.data();
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * stable_sigmoid(x[i]);
    });
  }
  return y;
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  std::vector<double> v(a.data());
  for (double& x : v) x = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  Tensor y = Tensor::from_data(a.shape(), std::move(v));
  if (grad_enabled({&a})) {
    y.set_requires_grad();
    Tape::active()->record([a, y] {
      const auto& g = y.grad();
      const auto& x = a.data();
      auto& ga = a.grad();
      for (size_t i = 0; i < ga.size(); ++i) {
        double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
        ga[i] += g[i] * (cdf + x[i] * pdf);
      }
    });
  }
  return y;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  TASIF_CHECK(s.size() == 1, "scale_by: scale must be a scalar, got " << shape_str(s.shape()));
  double c = s.data()[0];
  std::vector<double> v(x.data());
  for (double& e : v) e *= c;
  Tensor y = Tensor::from_data(x.shape(), std::move(v));
  if (grad_enabled({&x, &s})) {
    y.set_requires_grad();
    Tape::active()->record([x, s, y, c] {
      const auto& g = y.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += c * g[i];
      }
      if (s.requires_grad()) {
        const auto& xv = x.data();
        double acc = 0.0;
        for (size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
        s.grad()[0] += acc;
      }
    });
  }
  return y;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  i64 d = last_dim(x);
  TASIF_CHECK(b.ndim() == 1 && b.dim(0) == d,
              "add_bias: bias " << shape_str(b.shape()) << " vs feature dim " << d);
  std::vector<double> v(x.data());
  const auto& bv = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i % static_cast<size_t>(d)];
  Tensor y = Tensor::from_data(x.shape(), std::move(v));
  if (grad_enabled({&x, &b})) {
    y.set_requires_grad();
    Tape::active()->record([x, b, y, d] {
      const auto& g = y.grad();
      if (x.requires_grad()) x.accumulate_grad(g);
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i % static_cast<size_t>(d)] += g[i];
      }
    });
  }
  return y;
}

Tensor add_rows_broadcast(const Tensor& x, const Tensor& p) {
  TASIF_CHECK(x.ndim() == 3 && p.ndim() == 2 && x.dim(1) == p.dim(0) && x.dim(2) == p.dim(1),
              "add_rows_broadcast: " << shape_str(x.shape()) << " vs " << shape_str(p.shape()));
  i64 B = x.dim(0), plane = p.size();
  std::vector<double> v(x.data());
  const auto& pv = p.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 i = 0; i < plane; ++i) v[static_cast<size_t>(b * plane + i)] += pv[static_cast<size_t>(i)];
  Tensor y = Tensor::from_data(x.shape(), std::move(v));
  if (grad_enabled({&x, &p})) {
    y.set_requires_grad();
    Tape::active()->record([x, p, y, B, plane] {
      const auto& g = y.grad();
      if (x.requires_grad()) x.accumulate_grad(g);
      if (p.requires_grad()) {
        auto& gp = p.grad();
        for (i64 b = 0; b < B; ++b)
          for (i64 i = 0; i < plane; ++i) gp[static_cast<size_t>(i)] += g[static_cast<size_t>(b * plane + i)];
      }
    });
  }
  return y;
}

Tensor mul_rows_const(const Tensor& x, const std::vector<double>& w) {
  i64 d = last_dim(x);
  i64 rows = x.size() / d;
  TASIF_CHECK(static_cast<i64>(w.size()) == rows,
              "mul_rows_const: " << w.size() << " weights for " << rows << " rows");
  std::vector<double> v(x.data());
  for (i64 r = 0; r < rows; ++r)
    for (i64 j = 0; j < d; ++j) v[static_cast<size_t>(r * d + j)] *= w[static_cast<size_t>(r)];
  Tensor y = Tensor::from_data(x.shape(), std::move(v));
  if (grad_enabled({&x})) {
    y.set_requires_grad();
    Tape::active()->record([x, y, w, rows, d] {
      const auto& g = y.grad();
      auto& gx = x.grad();
      for (i64 r = 0; r < rows; ++r)
        for (i64 j = 0; j < d; ++j)
          gx[static_cast<size_t>(r * d + j)] += g[static_cast<size_t>(r * d + j)] * w[static_cast<size_t>(r)];
    });
  }
  return y;
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  TASIF_CHECK(!parts.empty(), "concat_lastdim: no inputs");
  const Shape& s0 = parts[0].shape();
  i64 total = 0;
  for (const Tensor& p : parts) {
    TASIF_CHECK(p.defined() && p.ndim() == parts[0].ndim(), "concat_lastdim: rank mismatch");
    for (int i = 0; i + 1 < p.ndim(); ++i)
      TASIF_CHECK(p.dim(i) == s0[static_cast<size_t>(i)], "concat_lastdim: leading dim mismatch at axis " << i);
    total += last_dim(p);
  }
  Shape out_shape = s0;
  out_shape.back() = total;
  i64 rows = numel(out_shape) / total;
  std::vector<double> v(static_cast<size_t>(rows * total));
  i64 off = 0;
  for (const Tensor& p : parts) {
    i64 d = last_dim(p);
    const auto& pv = p.data();
    for (i64 r = 0; r < rows; ++r)
      for (i64 j = 0; j < d; ++j) v[static_cast<size_t>(r * total + off + j)] = pv[static_cast<size_t>(r * d + j)];
    off += d;
  }
  Tensor y = Tensor::from_data(std::move(out_shape), std::move(v));
  bool need = false;
  if (Tape::active())
    for (const Tensor& p : parts)
      if (p.requires_grad()) need = true;
  if (need) {
    y.set_requires_grad();
    Tape::active()->record([parts, y, rows, total] {
      const auto& g = y.grad();
      i64 off2 = 0;
      for (const Tensor& p : parts) {
        i64 d = p.dim(p.ndim() - 1);
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (i64 r = 0; r < rows; ++r)
            for (i64 j = 0; j < d; ++j)
              gp[static_cast<size_t>(r * d + j)] += g[static_cast<size_t>(r * total + off2 + j)];
        }
        off2 += d;
      }
    });
  }
  return y;
}

Tensor split_heads(const Tensor& x, i64 heads) {
  TASIF_CHECK(x.ndim() == 3, "split_heads: want [B, n, d], got " << shape_str(x.shape()));
  i64 B = x.dim(0), n = x.dim(1), d = x.dim(2);
  TASIF_CHECK(heads > 0 && d % heads == 0, "split_heads: " << d << " features not divisible by " << heads);
  i64 dh = d / heads;
  std::vector<double> v(x.size());
  const auto& xv = x.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 e = 0; e < heads; ++e)
      for (i64 t = 0; t < n; ++t)
        for (i64 c = 0; c < dh; ++c)
          v[static_cast<size_t>(((b * heads + e) * n + t) * dh + c)] =
              xv[static_cast<size_t>((b * n + t) * d + e * dh + c)];
  Tensor y = Tensor::from_data({B * heads, n, dh}, std::move(v));
  if (grad_enabled({&x})) {
    y.set_requires_grad();
    Tape::active()->record([x, y, B, n, d, heads, dh] {
      const auto& g = y.grad();
      auto& gx = x.grad();
      for (i64 b = 0; b < B; ++b)
        for (i64 e = 0; e < heads; ++e)
          for (i64 t = 0; t < n; ++t)
            for (i64 c = 0; c < dh; ++c)
              gx[static_cast<size_t>((b * n + t) * d + e * dh + c)] +=
                  g[static_cast<size_t>(((b * heads + e) * n + t) * dh + c)];
    });
  }
  return y;
}

Tensor merge_heads(const Tensor& x, i64 heads) {
  TASIF_CHECK(x.ndim() == 3, "merge_heads: want [B*h, n, dh], got " << shape_str(x.shape()));
  i64 G = x.dim(0), n = x.dim(1), dh = x.dim(2);
  TASIF_CHECK(heads > 0 && G % heads == 0, "merge_heads: " << G << " groups not divisible by " << heads);
  i64 B = G / heads, d = dh * heads;
  std::vector<double> v(x.size());
  const auto& xv = x.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 e = 0; e < heads; ++e)
      for (i64 t = 0; t < n; ++t)
        for (i64 c = 0; c < dh; ++c)
          v[static_cast<size_t>((b * n + t) * d + e * dh + c)] =
              xv[static_cast<size_t>(((b * heads + e) * n + t) * dh + c)];
  Tensor y = Tensor::from_data({B, n, d}, std::move(v));
  if (grad_enabled({&x})) {
    y.set_requires_grad();
    Tape::active()->record([x, y, B, n, d, heads, dh] {
      const auto& g = y.grad();
      auto& gx = x.grad();
      for (i64 b = 0; b < B; ++b)
        for (i64 e = 0; e < heads; ++e)
          for (i64 t = 0; t < n; ++t)
            for (i64 c = 0; c < dh; ++c)
              gx[static_cast<size_t>(((b * heads + e) * n + t) * dh + c)] +=
                  g[static_cast<size_t>((b * n + t) * d + e * dh + c)];
    });
  }
  return y;
}

Tensor gather_positions(const Tensor& x, const std::vector<i64>& pos) {
  TASIF_CHECK(x.ndim() == 3, "gather_positions: want [B, n, d], got " << shape_str(x.shape()));
  i64 B = x.dim(0), n = x.dim(1), d = x.dim(2);
  TASIF_CHECK(static_cast<i64>(pos.size()) == B, "gather_positions: " << pos.size() << " positions for batch " << B);
  std::vector<double> v(static_cast<size_t>(B * d));
  const auto& xv = x.data();
  for (i64 b = 0; b < B; ++b) {
    TASIF_CHECK(pos[static_cast<size_t>(b)] >= 0 && pos[static_cast<size_t>(b)] < n,
                "gather_positions: position " << pos[static_cast<size_t>(b)] << " out of [0, " << n << ")");
    for (i64 j = 0; j < d; ++j)
      v[static_cast<size_t>(b * d + j)] = xv[static_cast<size_t>((b * n + pos[static_cast<size_t>(b)]) * d + j)];
  }
  Tensor y = Tensor::from_data({B, d}, std::move(v));
  if (grad_enabled({&x})) {
    y.set_requires_grad();
    Tape::active()->record([x, y, pos, B, n, d] {
      const auto& g = y.grad();
      auto& gx = x.grad();
      for (i64 b = 0; b < B; ++b)
        for (i64 j = 0; j < d; ++j)
          gx[static_cast<size_t>((b * n + pos[static_cast<size_t>(b)]) * d + j)] += g[static_cast<size_t>(b * d + j)];
    });
  }
  return y;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Tensor y = Tensor::scalar(acc);
  if (grad_enabled({&x})) {
    y.set_requires_grad();
    Tape::active()->record([x, y] {
      double g = y.grad()[0];
      auto& gx = x.grad();
      for (double& e : gx) e += g;
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  TASIF_CHECK(b.ndim() == 2, "matmul: rhs must be 2-d, got " << shape_str(b.shape()));
  i64 q = last_dim(a), r = b.dim(1);
  TASIF_CHECK(b.dim(0) == q,
              "matmul: inner dims " << shape_str(a.shape()) << " x " << shape_str(b.shape()));
  i64 M = a.size() / q;
  Shape out_shape = a.shape();
  out_shape.back() = r;
  std::vector<double> v(static_cast<size_t>(M * r));
  {
    CMapMat A(a.data().data(), M, q), B(b.data().data(), q, r);
    MapMat C(v.data(), M, r);
    C.noalias() = A * B;
  }
  Tensor y = Tensor::from_data(std::move(out_shape), std::move(v));
  if (grad_enabled({&a, &b})) {
    y.set_requires_grad();
    Tape::active()->record([a, b, y, M, q, r] {
      CMapMat G(y.grad().data(), M, r);
      if (a.requires_grad()) {
        CMapMat B(b.data().data(), q, r);
        MapMat GA(a.grad().data(), M, q);
        GA.noalias() += G * B.transpose();
      }
      if (b.requires_grad()) {
        CMapMat A(a.data().data(), M, q);
        MapMat GB(b.grad().data(), q, r);
        GB.noalias() += A.transpose() * G;
      }
    });
  }
  return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  TASIF_CHECK(b.ndim() == 2, "matmul_nt: rhs must be 2-d, got " << shape_str(b.shape()));
  i64 q = last_dim(a), r = b.dim(0);
  TASIF_CHECK(b.dim(1) == q,
              "matmul_nt: inner dims " << shape_str(a.shape()) << " x " << shape_str(b.shape()) << "^T");
  i64 M = a.size() / q;
  Shape out_shape = a.shape();
  out_shape.back() = r;
  std::vector<double> v(static_cast<size_t>(M * r));
  {
    CMapMat A(a.data().data(), M, q), B(b.data().data(), r, q);
    MapMat C(v.data(), M, r);
    C.noalias() = A * B.transpose();
  }
  Tensor y = Tensor::from_data(std::move(out_shape), std::move(v));
  if (grad_enabled({&a, &b})) {
    y.set_requires_grad();
    Tape::active()->record([a, b, y, M, q, r] {
      CMapMat G(y.grad().data(), M, r);
      if (a.requires_grad()) {
        CMapMat B(b.data().data(), r, q);
        MapMat GA(a.grad().data(), M, q);
        GA.noalias() += G * B;
      }
      if (b.requires_grad()) {
        CMapMat A(a.data().data(), M, q);
        MapMat GB(b.grad().data(), r, q);
        GB.noalias() += G.transpose() * A;
      }
    });
  }
  return y;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  TASIF_CHECK(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0),
              "bmm: want matching 3-d batches, got " << shape_str(a.shape()) << " x " << shape_str(b.shape()));
  i64 G = a.dim(0), p = a.dim(1), q = a.dim(2);
  i64 r = trans_b ? b.dim(1) : b.dim(2);
  i64 bq = trans_b ? b.dim(2) : b.dim(1);
  TASIF_CHECK(bq == q, "bmm: inner dims " << shape_str(a.shape()) << " x " << shape_str(b.shape())
                                          << (trans_b ? "^T" : ""));
  std::vector<double> v(static_cast<size_t>(G * p * r));
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (i64 g = 0; g < G; ++g) {
    CMapMat A(ap + g * p * q, p, q);
    MapMat C(v.data() + g * p * r, p, r);
    if (trans_b) {
      CMapMat B(bp + g * r * q, r, q);
      C.noalias() = A * B.transpose();
    } else {
      CMapMat B(bp + g * q * r, q, r);
      C.noalias() = A * B;
    }
  }
  Tensor y = Tensor::from_data({G, p, r}, std::move(v));
  if (grad_enabled({&a, &b})) {
    y.set_requires_grad();
    Tape::active()->record([a, b, y, trans_b, G, p, q, r] {
      const double* gp_ = y.grad().data();
      const double* ap2 = a.data().data();
      const double* bp2 = b.data().data();
      for (i64 g = 0; g < G; ++g) {
        CMapMat Gm(gp_ + g * p * r, p, r);
        if (a.requires_grad()) {
          MapMat GA(a.grad().data() + g * p * q, p, q);
          if (trans_b) {
            CMapMat B(bp2 + g * r * q, r, q);
            GA.noalias() += Gm * B;
          } else {
            CMapMat B(bp2 + g * q * r, q, r);
            GA.noalias() += Gm * B.transpose();
          }
        }
        if (b.requires_grad()) {
          CMapMat A(ap2 + g * p * q, p, q);
          if (trans_b) {
            MapMat GB(b.grad().data() + g * r * q, r, q);
            GB.noalias() += Gm.transpose() * A;
          } else {
            MapMat GB(b.grad().data() + g * q * r, q, r);
            GB.noalias() += A.transpose() * Gm;
          }
        }
      }
    });
  }
  return y;
}

Tensor softmax_rows(const Tensor& x) {
  i64 d = last_dim(x);
  i64 rows = x.size() / d;
  std::vector<double> v(x.size());
  const auto& xv = x.data();
  for (i64 r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (i64 j = 0; j < d; ++j) {
      double e = xv[static_cast<size_t>(r * d + j)];
      TASIF_CHECK(!std::isnan(e), "softmax_rows: NaN at row " << r << " col " << j);
      m = std::max(m, e);
    }
    double s = 0.0;
    for (i64 j = 0; j < d; ++j) {
      double e = std::exp(xv[static_cast<size_t>(r * d + j)] - m);
      v[static_cast<size_t>(r * d + j)] = e;
      s += e;
    }
    for (i64 j = 0; j < d; ++j) v[static_cast<size_t>(r * d + j)] /= s;
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(v));
  if (grad_enabled({&x})) {
    y.set_requires_grad();
    Tape::active()->record([x, y, rows, d] {
      const auto& g = y.grad();
      const auto& p = y.data();
      auto& gx = x.grad();
      for (i64 r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (i64 j = 0; j < d; ++j) dot += g[static_cast<size_t>(r * d + j)] * p[static_cast<size_t>(r * d + j)];
        for (i64 j = 0; j < d; ++j)
          gx[static_cast<size_t>(r * d + j)] +=
              p[static_cast<size_t>(r * d + j)] * (g[static_cast<size_t>(r * d + j)] - dot);
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double eps = 1e-12;
  i64 d = last_dim(x);
  TASIF_CHECK(gain.ndim() == 1 && gain.dim(0) == d && bias.ndim() == 1 && bias.dim(0) == d,
              "layer_norm: gain/bias " << shape_str(gain.shape()) << "/" << shape_str(bias.shape())
                                       << " vs feature dim " << d);
  i64 rows = x.size() / d;
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<double> v(x.size());
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  for (i64 r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (i64 j = 0; j < d; ++j) mu += xv[static_cast<size_t>(r * d + j)];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (i64 j = 0; j < d; ++j) {
      double c = xv[static_cast<size_t>(r * d + j)] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[static_cast<size_t>(r)] = rs;
    for (i64 j = 0; j < d; ++j) {
      double h = (xv[static_cast<size_t>(r * d + j)] - mu) * rs;
      (*xhat)[static_cast<size_t>(r * d + j)] = h;
      v[static_cast<size_t>(r * d + j)] = gv[static_cast<size_t>(j)] * h + bv[static_cast<size_t>(j)];
    }
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(v));
  if (grad_enabled({&x, &gain, &bias})) {
    y.set_requires_grad();
    Tape::active()->record([x, gain, bias, y, xhat, rstd, rows, d] {
      const auto& g = y.grad();
      const auto& gv2 = gain.data();
      if (gain.requires_grad()) {
        auto& gg = gain.grad();
        for (i64 r = 0; r < rows; ++r)
          for (i64 j = 0; j < d; ++j)
            gg[static_cast<size_t>(j)] +=
                g[static_cast<size_t>(r * d + j)] * (*xhat)[static_cast<size_t>(r * d + j)];
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (i64 r = 0; r < rows; ++r)
          for (i64 j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += g[static_cast<size_t>(r * d + j)];
      }
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (i64 r = 0; r < rows; ++r) {
          double mean_gh = 0.0, mean_ghh = 0.0;
          for (i64 j = 0; j < d; ++j) {
            double gh = g[static_cast<size_t>(r * d + j)] * gv2[static_cast<size_t>(j)];
            mean_gh += gh;
            mean_ghh += gh * (*xhat)[static_cast<size_t>(r * d + j)];
          }
          mean_gh /= static_cast<double>(d);
          mean_ghh /= static_cast<double>(d);
          double rs = (*rstd)[static_cast<size_t>(r)];
          for (i64 j = 0; j < d; ++j) {
            double gh = g[static_cast<size_t>(r * d + j)] * gv2[static_cast<size_t>(j)];
            gx[static_cast<size_t>(r * d + j)] +=
                rs * (gh - mean_gh - (*xhat)[static_cast<size_t>(r * d + j)] * mean_ghh);
          }
        }
      }
    });
  }
  return y;
}

Tensor add_attention_mask(const Tensor& scores, const std::vector<double>& mask, i64 heads) {
  TASIF_CHECK(scores.ndim() == 3, "add_attention_mask: want [B*h, n, n], got " << shape_str(scores.shape()));
  i64 G = scores.dim(0), n1 = scores.dim(1), n2 = scores.dim(2);
  TASIF_CHECK(heads > 0 && G % heads == 0, "add_attention_mask: " << G << " groups not divisible by " << heads);
  i64 B = G / heads, plane = n1 * n2;
  TASIF_CHECK(static_cast<i64>(mask.size()) == B * plane,
              "add_attention_mask: mask holds " << mask.size() << " values, want " << B * plane);
  std::vector<double> v(scores.data());
  for (i64 b = 0; b < B; ++b)
    for (i64 e = 0; e < heads; ++e)
      for (i64 i = 0; i < plane; ++i)
        v[static_cast<size_t>((b * heads + e) * plane + i)] += mask[static_cast<size_t>(b * plane + i)];
  Tensor y = Tensor::from_data(scores.shape(), std::move(v));
  if (grad_enabled({&scores})) {
    y.set_requires_grad();
    Tape::active()->record([scores, y] { scores.accumulate_grad(y.grad()); });
  }
  return y;
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  TASIF_CHECK(rate >= 0.0 && rate < 1.0, "dropout: rate " << rate << " outside [0, 1)");
  if (!training || rate == 0.0) return x;
  double keep_scale = 1.0 / (1.0 - rate);
  auto keep = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> v(x.data());
  for (size_t i = 0; i < v.size(); ++i) {
    double k = rng.uniform() < rate ? 0.0 : keep_scale;
    (*keep)[i] = k;
    v[i] *= k;
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(v));
  if (grad_enabled({&x})) {
    y.set_requires_grad();
    Tape::active()->record([x, y, keep] {
      const auto& g = y.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (*keep)[i];
    });
  }
  return y;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<i64>& idx, Shape out_leading) {
  TASIF_CHECK(table.ndim() == 2, "embedding_lookup: table must be [V, d], got " << shape_str(table.shape()));
  i64 V = table.dim(0), d = table.dim(1);
  i64 R = numel(out_leading);
  TASIF_CHECK(static_cast<i64>(idx.size()) == R,
              "embedding_lookup: " << idx.size() << " indices for output " << shape_str(out_leading));
  std::vector<double> v(static_cast<size_t>(R * d));
  const auto& tv = table.data();
  for (i64 r = 0; r < R; ++r) {
    i64 ix = idx[static_cast<size_t>(r)];
    TASIF_CHECK(ix >= 0 && ix < V, "embedding_lookup: index " << ix << " out of [0, " << V << ")");
    for (i64 j = 0; j < d; ++j) v[static_cast<size_t>(r * d + j)] = tv[static_cast<size_t>(ix * d + j)];
  }
  Shape out_shape = std::move(out_leading);
  out_shape.push_back(d);
  Tensor y = Tensor::from_data(std::move(out_shape), std::move(v));
  if (grad_enabled({&table})) {
    y.set_requires_grad();
    Tape::active()->record([table, y, idx, R, d] {
      const auto& g = y.grad();
      auto& gt = table.grad();
      for (i64 r = 0; r < R; ++r) {
        i64 ix = idx[static_cast<size_t>(r)];
        for (i64 j = 0; j < d; ++j) gt[static_cast<size_t>(ix * d + j)] += g[static_cast<size_t>(r * d + j)];
      }
    });
  }
  return y;
}

Tensor embedding_bag_mean(const Tensor& table, const std::vector<i64>& idx,
                          const std::vector<double>& mask, i64 m, Shape out_leading) {
  TASIF_CHECK(table.ndim() == 2, "embedding_bag_mean: table must be [V, d], got " << shape_str(table.shape()));
  i64 V = table.dim(0), d = table.dim(1);
  i64 R = numel(out_leading);
  TASIF_CHECK(static_cast<i64>(idx.size()) == R * m && mask.size() == idx.size(),
              "embedding_bag_mean: " << idx.size() << " indices / " << mask.size() << " mask values for "
                                     << R << " rows x " << m);
  std::vector<double> v(static_cast<size_t>(R * d), 0.0);
  auto inv_cnt = std::make_shared<std::vector<double>>(static_cast<size_t>(R), 0.0);
  const auto& tv = table.data();
  for (i64 r = 0; r < R; ++r) {
    double cnt = 0.0;
    for (i64 s = 0; s < m; ++s) cnt += mask[static_cast<size_t>(r * m + s)];
    if (cnt == 0.0) continue;
    double ic = 1.0 / cnt;
    (*inv_cnt)[static_cast<size_t>(r)] = ic;
    for (i64 s = 0; s < m; ++s) {
      double w = mask[static_cast<size_t>(r * m + s)];
      if (w == 0.0) continue;
      i64 ix = idx[static_cast<size_t>(r * m + s)];
      TASIF_CHECK(ix >= 0 && ix < V, "embedding_bag_mean: index " << ix << " out of [0, " << V << ")");
      for (i64 j = 0; j < d; ++j) v[static_cast<size_t>(r * d + j)] += w * ic * tv[static_cast<size_t>(ix * d + j)];
    }
  }
  Shape out_shape = std::move(out_leading);
  out_shape.push_back(d);
  Tensor y = Tensor::from_data(std::move(out_shape), std::move(v));
  if (grad_enabled({&table})) {
    y.set_requires_grad();
    Tape::active()->record([table, y, idx, mask, inv_cnt, R, m, d] {
      const auto& g = y.grad();
      auto& gt = table.grad();
      for (i64 r = 0; r < R; ++r) {
        double ic = (*inv_cnt)[static_cast<size_t>(r)];
        if (ic == 0.0) continue;
        for (i64 s = 0; s < m; ++s) {
          double w = mask[static_cast<size_t>(r * m + s)];
          if (w == 0.0) continue;
          i64 ix = idx[static_cast<size_t>(r * m + s)];
          for (i64 j = 0; j < d; ++j)
            gt[static_cast<size_t>(ix * d + j)] += w * ic * g[static_cast<size_t>(r * d + j)];
        }
      }
    });
  }
  return y;
}

std::pair<Tensor, Tensor> rfft_op(const Tensor& x) {
  TASIF_CHECK(x.ndim() == 2 || x.ndim() == 3, "rfft_op: want [n, d] or [B, n, d], got " << shape_str(x.shape()));
  bool batched = x.ndim() == 3;
  i64 B = batched ? x.dim(0) : 1;
  i64 n = x.dim(batched ? 1 : 0), d = last_dim(x);
  TASIF_CHECK(is_power_of_two(n), "rfft_op: length " << n << " is not a power of two");
  i64 m = n / 2 + 1;
  std::vector<double> re(static_cast<size_t>(B * m * d)), im(static_cast<size_t>(B * m * d));
  const double* xp = x.data().data();
  for (i64 b = 0; b < B; ++b) {
    ComplexSpectrum sp = rfft(xp + b * n * d, n, d);
    std::copy(sp.re.begin(), sp.re.end(), re.begin() + b * m * d);
    std::copy(sp.im.begin(), sp.im.end(), im.begin() + b * m * d);
  }
  Shape out_shape = batched ? Shape{B, m, d} : Shape{m, d};
  Tensor yr = Tensor::from_data(out_shape, std::move(re));
  Tensor yi = Tensor::from_data(out_shape, std::move(im));
  if (grad_enabled({&x})) {
    yr.set_requires_grad();
    yi.set_requires_grad();
    Tape::active()->record([x, yr, yi, B, n, m, d] {
      const auto& gr = yr.grad();
      const auto& gi = yi.grad();
      auto& gx = x.grad();
      for (i64 b = 0; b < B; ++b) {
        ComplexSpectrum cot;
        cot.n_bins = m;
        cot.cols = d;
        cot.re.assign(gr.begin() + b * m * d, gr.begin() + (b + 1) * m * d);
        cot.im.assign(gi.begin() + b * m * d, gi.begin() + (b + 1) * m * d);
        std::vector<double> dx(static_cast<size_t>(n * d));
        rfft_adjoint(cot, n, dx.data());
        for (i64 i = 0; i < n * d; ++i) gx[static_cast<size_t>(b * n * d + i)] += dx[static_cast<size_t>(i)];
      }
    });
  }
  return {yr, yi};
}

Tensor irfft_op(const Tensor& re, const Tensor& im, i64 n) {
  check_same_shape(re, im, "irfft_op");
  TASIF_CHECK(re.ndim() == 2 || re.ndim() == 3, "irfft_op: want [m, d] or [B, m, d], got " << shape_str(re.shape()));
  bool batched = re.ndim() == 3;
  i64 B = batched ? re.dim(0) : 1;
  i64 m = re.dim(batched ? 1 : 0), d = last_dim(re);
  TASIF_CHECK(is_power_of_two(n) && m == n / 2 + 1,
              "irfft_op: " << m << " bins do not fit output length " << n);
  std::vector<double> v(static_cast<size_t>(B * n * d));
  const auto& rv = re.data();
  const auto& iv = im.data();
  for (i64 b = 0; b < B; ++b) {
    ComplexSpectrum sp;
    sp.n_bins = m;
    sp.cols = d;
    sp.re.assign(rv.begin() + b * m * d, rv.begin() + (b + 1) * m * d);
    sp.im.assign(iv.begin() + b * m * d, iv.begin() + (b + 1) * m * d);
    irfft(sp, n, v.data() + b * n * d);
  }
  Shape out_shape = batched ? Shape{B, n, d} : Shape{n, d};
  Tensor y = Tensor::from_data(std::move(out_shape), std::move(v));
  if (grad_enabled({&re, &im})) {
    y.set_requires_grad();
    Tape::active()->record([re, im, y, B, n, m, d] {
      const auto& g = y.grad();
      for (i64 b = 0; b < B; ++b) {
        ComplexSpectrum cot = irfft_adjoint(g.data() + b * n * d, n, d);
        if (re.requires_grad()) {
          auto& gr = re.grad();
          for (i64 i = 0; i < m * d; ++i) gr[static_cast<size_t>(b * m * d + i)] += cot.re[static_cast<size_t>(i)];
        }
        if (im.requires_grad()) {
          auto& gi = im.grad();
          for (i64 i = 0; i < m * d; ++i) gi[static_cast<size_t>(b * m * d + i)] += cot.im[static_cast<size_t>(i)];
        }
      }
    });
  }
  return y;
}

std::pair<Tensor, Tensor> complex_modulate(const Tensor& sr, const Tensor& si,
                                           const Tensor& wr, const Tensor& wi) {
  check_same_shape(sr, si, "complex_modulate");
  check_same_shape(wr, wi, "complex_modulate");
  TASIF_CHECK(wr.ndim() == 2, "complex_modulate: filter must be [m, d], got " << shape_str(wr.shape()));
  bool batched = sr.ndim() == 3;
  TASIF_CHECK(batched || sr.ndim() == 2, "complex_modulate: spectrum must be 2-d or 3-d");
  i64 B = batched ? sr.dim(0) : 1;
  i64 m = sr.dim(batched ? 1 : 0), d = last_dim(sr);
  TASIF_CHECK(wr.dim(0) == m && wr.dim(1) == d,
              "complex_modulate: filter " << shape_str(wr.shape()) << " vs spectrum " << shape_str(sr.shape()));
  i64 plane = m * d;
  std::vector<double> vr(static_cast<size_t>(B * plane)), vi(static_cast<size_t>(B * plane));
  const auto& srv = sr.data();
  const auto& siv = si.data();
  const auto& wrv = wr.data();
  const auto& wiv = wi.data();
  for (i64 b = 0; b < B; ++b)
    for (i64 i = 0; i < plane; ++i) {
      size_t k = static_cast<size_t>(b * plane + i);
      size_t w = static_cast<size_t>(i);
      vr[k] = srv[k] * wrv[w] - siv[k] * wiv[w];
      vi[k] = srv[k] * wiv[w] + siv[k] * wrv[w];
    }
  Tensor yr = Tensor::from_data(sr.shape(), std::move(vr));
  Tensor yi = Tensor::from_data(sr.shape(), std::move(vi));
  if (grad_enabled({&sr, &si, &wr, &wi})) {
    yr.set_requires_grad();
    yi.set_requires_grad();
    Tape::active()->record([sr, si, wr, wi, yr, yi, B, plane] {
      const auto& gr = yr.grad();
      const auto& gi = yi.grad();
      const auto& srv2 = sr.data();
      const auto& siv2 = si.data();
      const auto& wrv2 = wr.data();
      const auto& wiv2 = wi.data();
      double* gsr = sr.requires_grad() ? sr.grad().data() : nullptr;
      double* gsi = si.requires_grad() ? si.grad().data() : nullptr;
      double* gwr = wr.requires_grad() ? wr.grad().data() : nullptr;
      double* gwi = wi.requires_grad() ? wi.grad().data() : nullptr;
      for (i64 b = 0; b < B; ++b)
        for (i64 i = 0; i < plane; ++i) {
          size_t k = static_cast<size_t>(b * plane + i);
          size_t w = static_cast<size_t>(i);
          if (gsr) gsr[k] += gr[k] * wrv2[w] + gi[k] * wiv2[w];
          if (gsi) gsi[k] += -gr[k] * wiv2[w] + gi[k] * wrv2[w];
          if (gwr) gwr[w] += gr[k] * srv2[k] + gi[k] * siv2[k];
          if (gwi) gwi[w] += -gr[k] * siv2[k] + gi[k] * srv2[k];
        }
    });
  }
  return {yr, yi};
}

}  // namespace tasif
