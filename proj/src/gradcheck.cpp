#include "tasif/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tasif {

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps, double tol, i64 samples_per_param, u64 seed) {
  TASIF_CHECK(Tape::active() == nullptr, "grad_check: cannot run under an active tape");
  TASIF_CHECK(eps > 0.0 && samples_per_param > 0, "grad_check: eps and sample count must be positive");
  for (const auto& [name, t] : params)
    TASIF_CHECK(t.defined() && t.requires_grad(), "grad_check: parameter '" << name << "' does not require gradients");

  double probe1 = loss_fn().item();
  double probe2 = loss_fn().item();
  TASIF_CHECK(probe1 == probe2, "grad_check: loss_fn is not deterministic (" << probe1 << " vs " << probe2 << ")");

  for (const auto& [name, t] : params) t.zero_grad();
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = loss_fn();
    TASIF_CHECK(loss.size() == 1, "grad_check: loss_fn must return a scalar");
    tape.backward(loss);
  }
  for (const auto& [name, t] : params) analytic.push_back(t.grad());

  Rng rng(mix_seed(seed, 0x67726164));
  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& t = params[pi].second;
    auto& values = t.data();
    i64 n = static_cast<i64>(values.size());
    std::vector<i64> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    i64 k = std::min(n, samples_per_param);

    GradCheckEntry entry;
    entry.name = params[pi].first;
    entry.checked = k;
    for (double g : analytic[pi]) entry.max_abs_grad = std::max(entry.max_abs_grad, std::fabs(g));
    for (i64 s = 0; s < k; ++s) {
      size_t ix = static_cast<size_t>(order[static_cast<size_t>(s)]);
      double saved = values[ix];
      values[ix] = saved + eps;
      double fp = loss_fn().item();
      values[ix] = saved - eps;
      double fm = loss_fn().item();
      values[ix] = saved;
      double fd = (fp - fm) / (2.0 * eps);
      double an = analytic[pi][ix];
      double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-2});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.params.push_back(std::move(entry));
  }
  report.ok = report.max_rel_err <= tol;
  for (const auto& [name, t] : params) t.zero_grad();
  return report;
}

}  // namespace tasif
