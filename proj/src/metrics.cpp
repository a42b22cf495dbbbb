#include "tasif/metrics.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <limits>

namespace tasif {
namespace {

using MatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double softplus_scalar(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// rank = 1 + #(strictly greater) + #(equal with smaller item index)
std::vector<i64> rank_rows(const std::vector<double>& scores, i64 batch, i64 items,
                           const std::vector<i64>& targets) {
  TASIF_CHECK(scores.size() == static_cast<size_t>(batch * items), "score matrix size mismatch");
  TASIF_CHECK(targets.size() == static_cast<size_t>(batch), "one target per row required");
  std::vector<i64> ranks(static_cast<size_t>(batch));
  for (i64 b = 0; b < batch; ++b) {
    const i64 t = targets[static_cast<size_t>(b)];
    TASIF_CHECK(t >= 1 && t < items, "target item " << t << " outside catalog of " << items);
    const double* row = scores.data() + b * items;
    const double st = row[t];
    TASIF_CHECK(std::isfinite(st), "target item " << t << " has non-finite score");
    i64 rank = 1;
    for (i64 j = 0; j < items; ++j) {
      const double sj = row[j];
      TASIF_CHECK(!std::isnan(sj), "NaN score at row " << b << " item " << j);
      if (sj > st || (sj == st && j < t)) ++rank;
    }
    ranks[static_cast<size_t>(b)] = rank;
  }
  return ranks;
}

void check_cutoffs(const std::vector<i64>& cutoffs) {
  TASIF_CHECK(!cutoffs.empty(), "at least one cutoff required");
  for (i64 k : cutoffs) TASIF_CHECK(k >= 1, "cutoff must be positive, got " << k);
}

}  // namespace

std::vector<double> composite_scores(const ForwardOutput& out, const TasifParameters& params,
                                     const InteractionDataset& ds, double beta) {
  TASIF_CHECK(beta >= 0.0 && beta <= 1.0, "beta must lie in [0,1], got " << beta);
  const i64 d = params.config.d;
  const i64 items = params.vocab.item_vocab;
  TASIF_CHECK(items == ds.item_count(), "catalog size mismatch between parameters and dataset");
  const i64 types = params.vocab.attr_types();
  TASIF_CHECK(types == ds.attr_type_count(), "attribute type count mismatch");
  TASIF_CHECK(out.s_id.ndim() == 2 && out.s_id.shape()[1] == d, "s_id must be [B, d]");
  const i64 batch = out.s_id.shape()[0];

  MatMap s_id(out.s_id.data().data(), batch, d);
  MatMap e_id(params.e_id.data().data(), items, d);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> total =
      s_id * e_id.transpose();

  if (beta > 0.0) {
    total *= 1.0 - beta;
    for (i64 j = 0; j < types; ++j) {
      const i64 vj = params.vocab.attr_vocabs[static_cast<size_t>(j)];
      TASIF_CHECK(vj == ds.attr_value_count(j), "attribute vocab mismatch for type " << j);
      const Tensor& s_aj = out.s_attr[static_cast<size_t>(j)];
      TASIF_CHECK(s_aj.ndim() == 2 && s_aj.shape()[0] == batch && s_aj.shape()[1] == d,
                  "s_attr[" << j << "] must be [B, d]");
      MatMap s_a(s_aj.data().data(), batch, d);
      MatMap e_a(params.e_attr[static_cast<size_t>(j)].data().data(), vj, d);
      // value-level scores, then averaged onto each item over its value ids
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> val_scores =
          s_a * e_a.transpose();
      const double wj =
          beta * softplus_scalar(params.attr_weight_logits[static_cast<size_t>(j)].item());
      for (i64 i = 1; i < items; ++i) {
        const auto& vals = ds.item_attrs[static_cast<size_t>(i)][static_cast<size_t>(j)];
        if (vals.empty()) continue;
        for (i64 b = 0; b < batch; ++b) {
          double acc = 0.0;
          for (i64 v : vals) acc += val_scores(b, v);
          total(b, i) += wj * acc / static_cast<double>(vals.size());
        }
      }
    }
  }
  std::vector<double> flat(static_cast<size_t>(batch * items));
  for (i64 b = 0; b < batch; ++b) {
    flat[static_cast<size_t>(b * items)] = kNegInf;  // padding id never recommended
    for (i64 i = 1; i < items; ++i) flat[static_cast<size_t>(b * items + i)] = total(b, i);
  }
  return flat;
}

MetricsReport rank_and_measure(const std::vector<double>& scores, i64 batch, i64 items,
                               const std::vector<i64>& targets, const std::vector<i64>& cutoffs) {
  TASIF_CHECK(batch >= 1, "empty batch");
  check_cutoffs(cutoffs);
  const std::vector<i64> ranks = rank_rows(scores, batch, items, targets);
  MetricsReport rep;
  rep.evaluated_users = batch;
  for (i64 k : cutoffs) {
    double hits = 0.0, gain = 0.0;
    for (i64 r : ranks) {
      if (r <= k) {
        hits += 1.0;
        gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
    }
    rep.recall[k] = hits / static_cast<double>(batch);
    rep.ndcg[k] = gain / static_cast<double>(batch);
  }
  return rep;
}

MetricsReport evaluate(const TasifModel& model, const InteractionDataset& ds,
                       const std::vector<SplitIndex::Example>& examples, const EvalConfig& cfg,
                       std::vector<RankRecord>* dump) {
  TASIF_CHECK(!examples.empty(), "cannot evaluate an empty split");
  TASIF_CHECK(Tape::active() == nullptr, "evaluation must run outside any autodiff tape");
  check_cutoffs(cfg.cutoffs);
  TASIF_CHECK(cfg.batch_size >= 1, "batch size must be positive");
  const auto start = std::chrono::steady_clock::now();

  const i64 n = model.config().n;
  const i64 items = model.vocab().item_vocab;
  BatchIterator it(ds, examples, n, cfg.batch_size, 0, /*shuffle=*/false);
  Rng rng(cfg.seed);  // forward in eval mode never draws from it

  std::map<i64, double> hits, gains;
  for (i64 k : cfg.cutoffs) hits[k] = gains[k] = 0.0;
  i64 done = 0;
  SequenceBatch batch;
  while (it.next(batch)) {
    const ForwardOutput out = model.forward(batch, /*training=*/false, rng);
    std::vector<double> scores = composite_scores(out, model.params(), ds, cfg.beta);
    if (cfg.mask_seen) {
      for (i64 b = 0; b < batch.batch_size; ++b) {
        const auto& ex = examples[static_cast<size_t>(done + b)];
        const auto& seq = ds.user_sequences[static_cast<size_t>(ex.user)];
        const i64 target = batch.target_item[static_cast<size_t>(b)];
        for (i64 p = 0; p < ex.target_pos; ++p) {
          const i64 seen = seq[static_cast<size_t>(p)].item;
          if (seen != target) scores[static_cast<size_t>(b * items + seen)] = kNegInf;
        }
      }
    }
    const std::vector<i64> ranks = rank_rows(scores, batch.batch_size, items, batch.target_item);
    for (i64 b = 0; b < batch.batch_size; ++b) {
      const i64 r = ranks[static_cast<size_t>(b)];
      for (i64 k : cfg.cutoffs) {
        if (r <= k) {
          hits[k] += 1.0;
          gains[k] += 1.0 / std::log2(static_cast<double>(r) + 1.0);
        }
      }
      if (dump != nullptr) {
        dump->push_back({examples[static_cast<size_t>(done + b)].user,
                         batch.target_item[static_cast<size_t>(b)], r});
      }
    }
    done += batch.batch_size;
  }
  TASIF_CHECK(done == static_cast<i64>(examples.size()), "batch stream did not cover the split");

  MetricsReport rep;
  rep.evaluated_users = done;
  rep.seed = cfg.seed;
  for (i64 k : cfg.cutoffs) {
    rep.recall[k] = hits[k] / static_cast<double>(done);
    rep.ndcg[k] = gains[k] / static_cast<double>(done);
  }
  rep.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace tasif
