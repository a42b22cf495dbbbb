#include "tasif/adam.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace tasif {

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void write_u64(std::ostream& os, u64 v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

u64 read_u64(std::istream& is) {
  u64 v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  TASIF_CHECK(is.good(), "optimizer state: truncated stream");
  return v;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& is, std::vector<double>& v) {
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  TASIF_CHECK(is.good(), "optimizer state: truncated stream");
}

}  // namespace

void adam_step_dense(std::vector<double>& param, const std::vector<double>& grad,
                     std::vector<double>& m, std::vector<double>& v, i64 t,
                     const AdamConfig& cfg) {
  TASIF_CHECK(param.size() == grad.size() && param.size() == m.size() && param.size() == v.size(),
              "adam_step_dense: buffer sizes disagree");
  TASIF_CHECK(t >= 1, "adam_step_dense: step counter must be >= 1, got " << t);
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    double mhat = m[i] / bc1;
    double vhat = v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

void Adam::add_param(const std::string& name, const Tensor& t, i64 decay_exempt_rows) {
  TASIF_CHECK(t.defined() && t.requires_grad(), "Adam: parameter '" << name << "' does not require gradients");
  TASIF_CHECK(decay_exempt_rows >= 0, "Adam: negative decay_exempt_rows");
  for (const Slot& s : slots_)
    TASIF_CHECK(!s.param.same_node(t) && s.name != name, "Adam: parameter '" << name << "' registered twice");
  Slot s;
  s.name = name;
  s.param = t;
  s.m.assign(t.data().size(), 0.0);
  s.v.assign(t.data().size(), 0.0);
  if (decay_exempt_rows > 0) {
    i64 rows = t.shape().empty() ? 1 : t.shape()[0];
    TASIF_CHECK(decay_exempt_rows <= rows, "Adam: parameter '" << name << "' has " << rows
                                                               << " rows, cannot exempt " << decay_exempt_rows);
    s.decay_skip = static_cast<size_t>(decay_exempt_rows) * (t.data().size() / static_cast<size_t>(rows));
  }
  slots_.push_back(std::move(s));
}

void Adam::step() {
  ++step_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (Slot& s : slots_) {
    const auto& g = s.param.grad();  // zero-filled if untouched
    if (!all_finite(g)) {
      ++skipped_;
      continue;
    }
    auto& p = s.param.data();
    for (size_t i = 0; i < p.size(); ++i) {
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (cfg_.weight_decay != 0.0 && i >= s.decay_skip) p[i] -= cfg_.lr * cfg_.weight_decay * p[i];
    }
  }
}

void Adam::zero_grad_all() {
  for (Slot& s : slots_) s.param.zero_grad();
}

void Adam::serialize(std::ostream& os) const {
  write_u64(os, static_cast<u64>(step_));
  write_u64(os, static_cast<u64>(skipped_));
  write_u64(os, slots_.size());
  for (const Slot& s : slots_) {
    write_u64(os, s.name.size());
    os.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    write_u64(os, s.m.size());
    write_doubles(os, s.m);
    write_doubles(os, s.v);
  }
}

void Adam::deserialize(std::istream& is) {
  step_ = static_cast<i64>(read_u64(is));
  skipped_ = static_cast<i64>(read_u64(is));
  u64 n = read_u64(is);
  TASIF_CHECK(n == slots_.size(),
              "optimizer state: holds " << n << " parameters, model has " << slots_.size());
  for (Slot& s : slots_) {
    u64 len = read_u64(is);
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    TASIF_CHECK(is.good() && name == s.name,
                "optimizer state: parameter '" << name << "' where '" << s.name << "' expected");
    u64 cnt = read_u64(is);
    TASIF_CHECK(cnt == s.m.size(), "optimizer state: parameter '" << s.name << "' holds " << cnt
                                                                  << " values, model wants " << s.m.size());
    read_doubles(is, s.m);
    read_doubles(is, s.v);
  }
}

}  // namespace tasif
