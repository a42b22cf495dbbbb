// Training objectives: next-item cross-entropy, next-attribute soft
// cross-entropy, contrastive embedding alignment, item-to-attribute BCE,
// and their weighted joint combination.
#pragma once

#include <vector>

#include "tasif/model.hpp"

namespace tasif {

struct LossConfig {
  double lambda1 = 1.0;      // next-attribute weight
  double lambda2 = 0.1;      // alignment weight
  double lambda3 = 10.0;     // item-to-attribute weight
  double temperature = 0.07; // contrastive temperature
};

// Mean over the batch of -log softmax(s . table^T)[target], scored over
// rows 1..V-1 of the table (row 0 is the padding id). Targets must be >= 1.
Tensor cross_entropy_over_table(const Tensor& s, const Tensor& table,
                                const std::vector<i64>& targets);

// Soft-target variant: multi_hot is B x (V-1) row-major with nonnegative
// mass (index c stands for vocabulary id c+1); each row is normalized to a
// distribution. Rows with no mass are skipped and counted into
// *skipped_rows; if every row is empty the loss is 0 and a warning is
// printed.
Tensor soft_cross_entropy_over_table(const Tensor& s, const Tensor& table,
                                     const std::vector<double>& multi_hot,
                                     i64* skipped_rows = nullptr);

// Mean over anchors i of -log[ exp(cos(a_i,b_i)/tau) / sum_k exp(cos(a_i,b_k)/tau) ].
// One-directional: no symmetric b-anchored term. A row with exact zero norm
// has its cosines declared 0 and each affected pair counted into
// *zero_norm_pairs.
Tensor info_nce_cosine(const Tensor& a, const Tensor& b, double tau,
                       i64* zero_norm_pairs = nullptr);

// Mean over the batch of the label-summed binary cross-entropy of
// sigmoid(s . w^T + b) against {0,1} labels (B x C row-major). Logits are
// clamped to +-30 before the logs.
Tensor bce_multi_label(const Tensor& s, const Tensor& w, const Tensor& b,
                       const std::vector<double>& labels);

struct LossBreakdown {
  Tensor joint;
  Tensor rec_id;
  std::vector<Tensor> rec_attr;  // per type; disabled terms are detached zeros
  std::vector<Tensor> align;
  std::vector<Tensor> i2a;
  std::vector<double> attr_weights;  // softplus(W_j logit) at this step
  i64 empty_label_rows = 0;
  i64 zero_norm_pairs = 0;
};

// joint = rec_id + sum_j softplus(w_j) * (l1*rec_attr_j + l2*align_j + l3*i2a_j).
// The use_nap / use_ura / use_i2a switches in params.config zero out their
// component exactly (no graph edges, no gradient).
LossBreakdown joint_loss(const ForwardOutput& out, const TasifParameters& params,
                         const SequenceBatch& batch, const LossConfig& lc);

}  // namespace tasif
