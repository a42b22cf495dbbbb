#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tasif/tensor.hpp"

namespace tasif {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;        // added after the square root
  double weight_decay = 0.0;  // decoupled; 0 disables
};

// One bias-corrected moment update on a raw buffer, step counter t >= 1.
void adam_step_dense(std::vector<double>& param, const std::vector<double>& grad,
                     std::vector<double>& m, std::vector<double>& v, i64 t,
                     const AdamConfig& cfg);

// Tracks registered parameters with their moment slots. A parameter whose
// gradient contains a non-finite entry is skipped for that step and the
// incident counted; everything else proceeds.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // decay_exempt_rows: leading rows (e.g. an embedding's padding row 0)
  // excluded from weight decay
  void add_param(const std::string& name, const Tensor& t, i64 decay_exempt_rows = 0);
  size_t param_count() const { return slots_.size(); }
  i64 step_count() const { return step_; }
  i64 skipped_incidents() const { return skipped_; }
  const AdamConfig& config() const { return cfg_; }

  void step();
  void zero_grad_all();

  // moments + step counter, for exact training resume
  void serialize(std::ostream& os) const;
  void deserialize(std::istream& is);

 private:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
    size_t decay_skip = 0;  // leading elements excluded from weight decay
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  i64 step_ = 0;
  i64 skipped_ = 0;
};

}  // namespace tasif
