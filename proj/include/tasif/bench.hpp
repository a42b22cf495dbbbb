// Fusion-layer scaling microbenchmark: attention-matrix counts and wall
// times for the guided fusion layout versus a pairwise cross-attention
// reference, as the attribute count grows.
#pragma once

#include <string>
#include <vector>

#include "tasif/common.hpp"

namespace tasif {

struct ScalingRecord {
  i64 attr_count = 0;
  i64 attention_matrix_count = 0;
  double median_seconds = 0.0;  // median over trials
  std::string variant;          // "tasif" | "mssr_reference"
};

struct ScalingResult {
  std::vector<ScalingRecord> records;
  double tasif_slope = 0.0;  // least-squares log(time) vs log(attr_count + 2)
  double mssr_slope = 0.0;
};

// tasif: attr_count + 1 (one guided pass over the id stream plus one
// self-attention per attribute stream). mssr_reference: (attr_count + 2)^2
// (one cross-attention per ordered source pair over id, attrs, positions).
i64 fusion_attention_count(const std::string& variant, i64 attr_count);

// Forward-only single-head timing at the given shape; trials >= 3. Both
// variants run the same attention kernel over the same random sources.
ScalingResult run_scaling(i64 n, i64 d, const std::vector<i64>& attr_counts, i64 trials,
                          u64 seed = 0);

}  // namespace tasif
