#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tasif/tensor.hpp"

namespace tasif {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
  i64 checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_err = 0.0;
  bool ok = false;  // max_rel_err <= tol
};

// Compares reverse-mode gradients against central differences on a random
// subsample of entries per parameter. loss_fn must build the loss from the
// given parameter tensors and be deterministic; two probe evaluations that
// differ cause a rejection. Relative error uses |a-b| / max(|a|,|b|,1e-2).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps = 1e-5, double tol = 1e-4,
                           i64 samples_per_param = 64, u64 seed = 0);

}  // namespace tasif
