#include "tasif/losses.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <memory>

namespace tasif {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

double stable_softplus(double x) { return std::log1p(std::exp(-std::fabs(x))) + std::max(x, 0.0); }

void check_score_table(const Tensor& s, const Tensor& table, const char* op) {
  TASIF_CHECK(s.ndim() == 2 && table.ndim() == 2 && s.dim(1) == table.dim(1),
              op << ": scores " << shape_str(s.shape()) << " vs table " << shape_str(table.shape()));
  TASIF_CHECK(table.dim(0) >= 2, op << ": table needs at least one non-padding row");
}

}  // namespace

Tensor cross_entropy_over_table(const Tensor& s, const Tensor& table,
                                const std::vector<i64>& targets) {
  check_score_table(s, table, "cross_entropy_over_table");
  const i64 B = s.dim(0), d = s.dim(1), C = table.dim(0) - 1;
  TASIF_CHECK(static_cast<i64>(targets.size()) == B,
              "cross_entropy_over_table: " << targets.size() << " targets for batch " << B);
  for (i64 b = 0; b < B; ++b)
    TASIF_CHECK(targets[static_cast<size_t>(b)] >= 1 && targets[static_cast<size_t>(b)] <= C,
                "cross_entropy_over_table: target " << targets[static_cast<size_t>(b)]
                                                    << " outside [1," << C << "]");

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(B * C));
  CMapMat S(s.data().data(), B, d);
  CMapMat T(table.data().data() + d, C, d);  // rows 1..V-1
  MapMat P(probs->data(), B, C);
  P.noalias() = S * T.transpose();

  double total = 0.0;
  for (i64 b = 0; b < B; ++b) {
    double mx = P.row(b).maxCoeff();
    double z = 0.0;
    for (i64 c = 0; c < C; ++c) z += std::exp(P(b, c) - mx);
    double lse = mx + std::log(z);
    total += lse - P(b, targets[static_cast<size_t>(b)] - 1);
    for (i64 c = 0; c < C; ++c) P(b, c) = std::exp(P(b, c) - lse);
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(B));

  if (grad_enabled({&s, &table})) {
    y.set_requires_grad();
    std::vector<i64> tg = targets;
    Tape::active()->record([s, table, y, probs, tg, B, d, C] {
      double g = y.grad()[0] / static_cast<double>(B);
      RowMat R = MapMat(probs->data(), B, C) * g;
      for (i64 b = 0; b < B; ++b) R(b, tg[static_cast<size_t>(b)] - 1) -= g;
      CMapMat S(s.data().data(), B, d);
      CMapMat T(table.data().data() + d, C, d);
      if (s.requires_grad()) {
        std::vector<double> ds(static_cast<size_t>(B * d), 0.0);
        MapMat(ds.data(), B, d).noalias() = R * T;
        s.accumulate_grad(ds);
      }
      if (table.requires_grad()) {
        std::vector<double> dt(table.data().size(), 0.0);
        MapMat(dt.data() + d, C, d).noalias() = R.transpose() * S;
        table.accumulate_grad(dt);
      }
    });
  }
  return y;
}

Tensor soft_cross_entropy_over_table(const Tensor& s, const Tensor& table,
                                     const std::vector<double>& multi_hot, i64* skipped_rows) {
  check_score_table(s, table, "soft_cross_entropy_over_table");
  const i64 B = s.dim(0), d = s.dim(1), C = table.dim(0) - 1;
  TASIF_CHECK(static_cast<i64>(multi_hot.size()) == B * C,
              "soft_cross_entropy_over_table: label plane holds " << multi_hot.size()
                                                                  << " values, want " << B * C);

  // normalized targets; rows with no mass get weight 0
  auto q = std::make_shared<std::vector<double>>(multi_hot);
  std::vector<double> row_weight(static_cast<size_t>(B), 0.0);
  i64 used = 0;
  for (i64 b = 0; b < B; ++b) {
    double mass = 0.0;
    for (i64 c = 0; c < C; ++c) {
      TASIF_CHECK(multi_hot[static_cast<size_t>(b * C + c)] >= 0.0,
                  "soft_cross_entropy_over_table: negative label mass");
      mass += multi_hot[static_cast<size_t>(b * C + c)];
    }
    if (mass == 0.0) continue;
    for (i64 c = 0; c < C; ++c) (*q)[static_cast<size_t>(b * C + c)] /= mass;
    row_weight[static_cast<size_t>(b)] = 1.0;
    ++used;
  }
  if (skipped_rows) *skipped_rows += B - used;
  if (used == 0) {
    std::fprintf(stderr, "warning: soft cross-entropy batch has no labeled rows, contributing 0\n");
    return Tensor::scalar(0.0);
  }

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(B * C));
  CMapMat S(s.data().data(), B, d);
  CMapMat T(table.data().data() + d, C, d);
  MapMat P(probs->data(), B, C);
  P.noalias() = S * T.transpose();

  double total = 0.0;
  for (i64 b = 0; b < B; ++b) {
    double mx = P.row(b).maxCoeff();
    double z = 0.0;
    for (i64 c = 0; c < C; ++c) z += std::exp(P(b, c) - mx);
    double lse = mx + std::log(z);
    if (row_weight[static_cast<size_t>(b)] > 0.0) {
      double dot = 0.0;
      for (i64 c = 0; c < C; ++c) dot += (*q)[static_cast<size_t>(b * C + c)] * P(b, c);
      total += lse - dot;
    }
    for (i64 c = 0; c < C; ++c) P(b, c) = std::exp(P(b, c) - lse);
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(used));

  if (grad_enabled({&s, &table})) {
    y.set_requires_grad();
    auto weights = std::make_shared<std::vector<double>>(std::move(row_weight));
    Tape::active()->record([s, table, y, probs, q, weights, used, B, d, C] {
      double g = y.grad()[0] / static_cast<double>(used);
      RowMat R(B, C);
      for (i64 b = 0; b < B; ++b) {
        double w = (*weights)[static_cast<size_t>(b)] * g;
        for (i64 c = 0; c < C; ++c)
          R(b, c) = w * ((*probs)[static_cast<size_t>(b * C + c)] -
                         (*q)[static_cast<size_t>(b * C + c)]);
      }
      CMapMat S(s.data().data(), B, d);
      CMapMat T(table.data().data() + d, C, d);
      if (s.requires_grad()) {
        std::vector<double> ds(static_cast<size_t>(B * d), 0.0);
        MapMat(ds.data(), B, d).noalias() = R * T;
        s.accumulate_grad(ds);
      }
      if (table.requires_grad()) {
        std::vector<double> dt(table.data().size(), 0.0);
        MapMat(dt.data() + d, C, d).noalias() = R.transpose() * S;
        table.accumulate_grad(dt);
      }
    });
  }
  return y;
}

Tensor info_nce_cosine(const Tensor& a, const Tensor& b, double tau, i64* zero_norm_pairs) {
  TASIF_CHECK(a.ndim() == 2 && a.shape() == b.shape(),
              "info_nce_cosine: want matching B x d inputs, got " << shape_str(a.shape()) << " vs "
                                                                  << shape_str(b.shape()));
  TASIF_CHECK(tau > 0.0, "info_nce_cosine: temperature must be positive, got " << tau);
  const i64 B = a.dim(0), d = a.dim(1);

  auto na = std::make_shared<std::vector<double>>(static_cast<size_t>(B));
  auto nb = std::make_shared<std::vector<double>>(static_cast<size_t>(B));
  for (i64 i = 0; i < B; ++i) {
    double sa = 0.0, sb = 0.0;
    for (i64 k = 0; k < d; ++k) {
      double xa = a.data()[static_cast<size_t>(i * d + k)];
      double xb = b.data()[static_cast<size_t>(i * d + k)];
      sa += xa * xa;
      sb += xb * xb;
    }
    (*na)[static_cast<size_t>(i)] = std::sqrt(sa);
    (*nb)[static_cast<size_t>(i)] = std::sqrt(sb);
  }

  auto cosm = std::make_shared<std::vector<double>>(static_cast<size_t>(B * B), 0.0);
  for (i64 i = 0; i < B; ++i)
    for (i64 k = 0; k < B; ++k) {
      double ni = (*na)[static_cast<size_t>(i)], nk = (*nb)[static_cast<size_t>(k)];
      if (ni == 0.0 || nk == 0.0) {
        if (zero_norm_pairs) ++*zero_norm_pairs;
        continue;  // cosine declared 0
      }
      double dot = 0.0;
      for (i64 c = 0; c < d; ++c)
        dot += a.data()[static_cast<size_t>(i * d + c)] * b.data()[static_cast<size_t>(k * d + c)];
      (*cosm)[static_cast<size_t>(i * B + k)] = dot / (ni * nk);
    }

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(B * B));
  double total = 0.0;
  for (i64 i = 0; i < B; ++i) {
    double mx = -1e300;
    for (i64 k = 0; k < B; ++k) mx = std::max(mx, (*cosm)[static_cast<size_t>(i * B + k)] / tau);
    double z = 0.0;
    for (i64 k = 0; k < B; ++k)
      z += std::exp((*cosm)[static_cast<size_t>(i * B + k)] / tau - mx);
    double lse = mx + std::log(z);
    total += lse - (*cosm)[static_cast<size_t>(i * B + i)] / tau;
    for (i64 k = 0; k < B; ++k)
      (*probs)[static_cast<size_t>(i * B + k)] =
          std::exp((*cosm)[static_cast<size_t>(i * B + k)] / tau - lse);
  }
  Tensor y = Tensor::scalar(total / static_cast<double>(B));

  if (grad_enabled({&a, &b})) {
    y.set_requires_grad();
    Tape::active()->record([a, b, y, na, nb, cosm, probs, tau, B, d] {
      double g = y.grad()[0] / static_cast<double>(B);
      std::vector<double> da(a.data().size(), 0.0), db(b.data().size(), 0.0);
      for (i64 i = 0; i < B; ++i)
        for (i64 k = 0; k < B; ++k) {
          double ni = (*na)[static_cast<size_t>(i)], nk = (*nb)[static_cast<size_t>(k)];
          if (ni == 0.0 || nk == 0.0) continue;  // constant cosine, no gradient
          double dc = g * ((*probs)[static_cast<size_t>(i * B + k)] - (i == k ? 1.0 : 0.0)) / tau;
          double cik = (*cosm)[static_cast<size_t>(i * B + k)];
          for (i64 c = 0; c < d; ++c) {
            double ai = a.data()[static_cast<size_t>(i * d + c)];
            double bk = b.data()[static_cast<size_t>(k * d + c)];
            da[static_cast<size_t>(i * d + c)] += dc * (bk / (ni * nk) - cik * ai / (ni * ni));
            db[static_cast<size_t>(k * d + c)] += dc * (ai / (ni * nk) - cik * bk / (nk * nk));
          }
        }
      if (a.requires_grad()) a.accumulate_grad(da);
      if (b.requires_grad()) b.accumulate_grad(db);
    });
  }
  return y;
}

Tensor bce_multi_label(const Tensor& s, const Tensor& w, const Tensor& b,
                       const std::vector<double>& labels) {
  TASIF_CHECK(s.ndim() == 2 && w.ndim() == 2 && s.dim(1) == w.dim(1),
              "bce_multi_label: scores " << shape_str(s.shape()) << " vs heads " << shape_str(w.shape()));
  const i64 B = s.dim(0), d = s.dim(1), C = w.dim(0);
  TASIF_CHECK(b.ndim() == 1 && b.dim(0) == C, "bce_multi_label: bias " << shape_str(b.shape())
                                                                       << " for " << C << " heads");
  TASIF_CHECK(static_cast<i64>(labels.size()) == B * C,
              "bce_multi_label: label plane holds " << labels.size() << " values, want " << B * C);
  for (double y : labels)
    TASIF_CHECK(y == 0.0 || y == 1.0, "bce_multi_label: label " << y << " outside {0,1}");

  auto grads = std::make_shared<std::vector<double>>(static_cast<size_t>(B * C));
  CMapMat S(s.data().data(), B, d);
  CMapMat W(w.data().data(), C, d);
  RowMat L(B, C);
  L.noalias() = S * W.transpose();
  double total = 0.0;
  for (i64 r = 0; r < B; ++r)
    for (i64 c = 0; c < C; ++c) {
      double raw = L(r, c) + b.data()[static_cast<size_t>(c)];
      double lc = std::min(30.0, std::max(-30.0, raw));
      double y = labels[static_cast<size_t>(r * C + c)];
      total += y * stable_softplus(-lc) + (1.0 - y) * stable_softplus(lc);
      double inside = (raw > -30.0 && raw < 30.0) ? 1.0 : 0.0;
      double sig = 1.0 / (1.0 + std::exp(-lc));
      (*grads)[static_cast<size_t>(r * C + c)] = inside * (sig - y);
    }
  Tensor y = Tensor::scalar(total / static_cast<double>(B));

  if (grad_enabled({&s, &w, &b})) {
    y.set_requires_grad();
    Tape::active()->record([s, w, b, y, grads, B, d, C] {
      double g = y.grad()[0] / static_cast<double>(B);
      CMapMat R(grads->data(), B, C);
      CMapMat S(s.data().data(), B, d);
      CMapMat W(w.data().data(), C, d);
      if (s.requires_grad()) {
        std::vector<double> ds(static_cast<size_t>(B * d), 0.0);
        MapMat(ds.data(), B, d).noalias() = R * W * g;
        s.accumulate_grad(ds);
      }
      if (w.requires_grad()) {
        std::vector<double> dw(static_cast<size_t>(C * d), 0.0);
        MapMat(dw.data(), C, d).noalias() = R.transpose() * S * g;
        w.accumulate_grad(dw);
      }
      if (b.requires_grad()) {
        std::vector<double> dbv(static_cast<size_t>(C), 0.0);
        for (i64 r = 0; r < B; ++r)
          for (i64 c = 0; c < C; ++c) dbv[static_cast<size_t>(c)] += g * R(r, c);
        b.accumulate_grad(dbv);
      }
    });
  }
  return y;
}

LossBreakdown joint_loss(const ForwardOutput& out, const TasifParameters& params,
                         const SequenceBatch& batch, const LossConfig& lc) {
  const ModelConfig& cfg = params.config;
  const i64 types = params.vocab.attr_types();
  const i64 B = out.s_id.dim(0);
  TASIF_CHECK(static_cast<i64>(batch.target_item.size()) == B,
              "joint_loss: batch targets " << batch.target_item.size() << " vs scores " << B);
  TASIF_CHECK(static_cast<i64>(out.s_attr.size()) == types, "joint_loss: attribute score count");

  LossBreakdown bd;
  bd.rec_id = cross_entropy_over_table(out.s_id, params.e_id, batch.target_item);
  bd.joint = bd.rec_id;

  for (i64 j = 0; j < types; ++j) {
    const size_t js = static_cast<size_t>(j);
    Tensor rec_attr = cfg.use_nap
                          ? soft_cross_entropy_over_table(out.s_attr[js], params.e_attr[js],
                                                          batch.target_multi_hot[js],
                                                          &bd.empty_label_rows)
                          : Tensor::scalar(0.0);
    Tensor align;
    if (cfg.use_ura) {
      Tensor e_id_rows = embedding_lookup(params.e_id, batch.target_item, Shape{B});
      const auto& tb = batch.target_attributes[js];
      Tensor e_aj_rows = embedding_bag_mean(params.e_attr[js], tb.values, tb.mask, tb.m, Shape{B});
      align = info_nce_cosine(e_id_rows, e_aj_rows, lc.temperature, &bd.zero_norm_pairs);
    } else {
      align = Tensor::scalar(0.0);
    }
    Tensor i2a = cfg.use_i2a ? bce_multi_label(out.s_id, params.i2a_w[js], params.i2a_b[js],
                                               batch.target_multi_hot[js])
                             : Tensor::scalar(0.0);

    Tensor bundle = add(add(scale(rec_attr, lc.lambda1), scale(align, lc.lambda2)),
                        scale(i2a, lc.lambda3));
    Tensor wj = softplus(params.attr_weight_logits[js]);
    bd.joint = add(bd.joint, scale_by(bundle, wj));

    bd.rec_attr.push_back(rec_attr);
    bd.align.push_back(align);
    bd.i2a.push_back(i2a);
    bd.attr_weights.push_back(wj.item());
  }
  return bd;
}

}  // namespace tasif
