// Dense double tensors with reverse-mode differentiation on a define-by-run
// tape. Forward execution order is the topological order; backward replays
// the tape once in reverse and then frees it.
#pragma once

#include <functional>
#include <memory>

#include "tasif/common.hpp"

namespace tasif {

class Tensor {
 public:
  Tensor() = default;  // null handle

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value.assign(static_cast<size_t>(numel(t.n_->shape)), 0.0);
    return t;
  }

  static Tensor full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.n_->value) x = v;
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from_data(Shape shape, std::vector<double> data) {
    TASIF_CHECK(numel(shape) == static_cast<i64>(data.size()),
                "from_data: " << shape_str(shape) << " does not hold " << data.size() << " values");
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    return t;
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev, bool truncated = true) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.n_->value)
      x = truncated ? rng.truncated_normal(stddev) : rng.normal() * stddev;
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  i64 dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  i64 size() const { return static_cast<i64>(n_->value.size()); }

  std::vector<double>& data() const { return n_->value; }
  double item() const {
    TASIF_CHECK(size() == 1, "item() on non-scalar tensor " << shape_str(shape()));
    return n_->value[0];
  }

  bool requires_grad() const { return n_ && n_->requires_grad; }
  const Tensor& set_requires_grad(bool v = true) const {
    n_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return n_ && !n_->grad.empty(); }
  std::vector<double>& grad() const {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), 0.0);
    return n_->grad;
  }
  void zero_grad() const { n_->grad.clear(); }

  // += g into grad; never called on requires_grad == false nodes
  void accumulate_grad(const std::vector<double>& g) const {
    auto& gr = grad();
    for (size_t i = 0; i < gr.size(); ++i) gr[i] += g[i];
  }

  bool same_node(const Tensor& o) const { return n_ == o.n_; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until materialized
    bool requires_grad = false;
  };
  std::shared_ptr<Node> n_;
};

// One tape per thread; activated for its lifetime. Ops record backward
// closures onto the active tape when any input requires a gradient.
class Tape {
 public:
  Tape() {
    TASIF_CHECK(active_ == nullptr, "nested tapes are not supported");
    active_ = this;
  }
  ~Tape() { active_ = nullptr; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  size_t size() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1, replays entries in reverse, frees the tape.
  void backward(const Tensor& loss) {
    TASIF_CHECK(loss.size() == 1, "backward() requires a scalar loss, got " << shape_str(loss.shape()));
    loss.grad()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  std::vector<std::function<void()>> entries_;
  static thread_local Tape* active_;
};

// True when a tape is active and any listed input wants gradients.
inline bool grad_enabled(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

}  // namespace tasif
