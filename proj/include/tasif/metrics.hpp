// Full-catalog composite scoring and leave-one-out ranking metrics.
#pragma once

#include <map>
#include <vector>

#include "tasif/losses.hpp"
#include "tasif/model.hpp"

namespace tasif {

struct EvalConfig {
  double beta = 0.3;                 // attribute share of the composite score
  std::vector<i64> cutoffs{10, 20};
  i64 batch_size = 256;
  bool mask_seen = false;            // exclude history items (never the target)
  u64 seed = 0;                      // bookkeeping only; evaluation is deterministic
};

struct MetricsReport {
  std::map<i64, double> recall;  // cutoff -> mean hit rate
  std::map<i64, double> ndcg;    // cutoff -> mean 1/log2(rank+1)
  i64 evaluated_users = 0;
  u64 seed = 0;
  double wall_time = 0.0;
};

struct RankRecord {
  i64 user = 0;
  i64 target = 0;
  i64 rank = 0;
};

// (1-beta) * s_id.E_ID^T + beta * sum_j W_j * gather_j, laid out B x |I|
// row-major with column = item id. Column 0 (padding) scores -inf. The
// per-item attribute score is the mean of s_aj.E_Aj^T over that item's
// values; items without values of a type contribute 0 for it.
std::vector<double> composite_scores(const ForwardOutput& out, const TasifParameters& params,
                                     const InteractionDataset& ds, double beta);

// rank = 1 + #(strictly greater) + #(equal at a smaller index): deterministic
// ascending-index tie break. Scores may be -inf (excluded items) but not NaN.
MetricsReport rank_and_measure(const std::vector<double>& scores, i64 batch, i64 items,
                               const std::vector<i64>& targets, const std::vector<i64>& cutoffs);

// Streams the split in stable order through the frozen model (dropout off),
// scores the full catalog and aggregates ranks. dump, when given, receives
// one record per evaluated user.
MetricsReport evaluate(const TasifModel& model, const InteractionDataset& ds,
                       const std::vector<SplitIndex::Example>& examples, const EvalConfig& cfg,
                       std::vector<RankRecord>* dump = nullptr);

}  // namespace tasif
