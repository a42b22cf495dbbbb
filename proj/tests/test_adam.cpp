#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "tasif/adam.hpp"
#include "tasif/ops.hpp"

using namespace tasif;

TEST_CASE("zero gradient leaves parameters and fresh moments unchanged") {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 3.0}).set_requires_grad();
  Adam opt;
  opt.add_param("p", p);
  p.grad();  // materialize zeros
  opt.step();
  CHECK(p.data() == std::vector<double>{1.0, -2.0, 3.0});
  CHECK(opt.step_count() == 1);
}

TEST_CASE("single step with unit gradient moves by almost exactly lr") {
  // m-hat = 1, v-hat = 1, delta = -lr / (1 + eps)
  std::vector<double> p = {0.0}, g = {1.0}, m = {0.0}, v = {0.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step_dense(p, g, m, v, 1, cfg);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(m[0] == doctest::Approx(0.1));
  CHECK(v[0] == doctest::Approx(0.001));
}

TEST_CASE("constant gradient approaches a step of lr times its sign") {
  std::vector<double> p = {0.0}, m = {0.0}, v = {0.0};
  std::vector<double> g = {-3.5};
  AdamConfig cfg;
  cfg.lr = 0.01;
  double prev = p[0];
  double last_step = 0.0;
  for (i64 t = 1; t <= 2000; ++t) {
    adam_step_dense(p, g, m, v, t, cfg);
    last_step = p[0] - prev;
    prev = p[0];
  }
  CHECK(last_step == doctest::Approx(cfg.lr).epsilon(1e-3));  // sign(g) = -1, so +lr
}

TEST_CASE("class step matches the dense recurrence") {
  Tensor p = Tensor::from_data({2}, {0.5, -0.25}).set_requires_grad();
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam opt(cfg);
  opt.add_param("p", p);

  std::vector<double> ref = p.data(), m = {0, 0}, v = {0, 0};
  for (i64 t = 1; t <= 7; ++t) {
    std::vector<double> g = {0.3 * static_cast<double>(t), -1.0};
    p.zero_grad();
    p.accumulate_grad(g);
    opt.step();
    adam_step_dense(ref, g, m, v, t, cfg);
  }
  CHECK(p.data()[0] == doctest::Approx(ref[0]).epsilon(1e-15));
  CHECK(p.data()[1] == doctest::Approx(ref[1]).epsilon(1e-15));
}

TEST_CASE("non-finite gradients skip the parameter and are counted") {
  Tensor a = Tensor::from_data({2}, {1.0, 1.0}).set_requires_grad();
  Tensor b = Tensor::from_data({2}, {2.0, 2.0}).set_requires_grad();
  Adam opt;
  opt.add_param("a", a);
  opt.add_param("b", b);
  a.accumulate_grad({std::nan(""), 1.0});
  b.accumulate_grad({1.0, 1.0});
  opt.step();
  CHECK(a.data() == std::vector<double>{1.0, 1.0});  // untouched
  CHECK(b.data()[0] != 2.0);                          // updated
  CHECK(opt.skipped_incidents() == 1);
}

TEST_CASE("duplicate registration is rejected") {
  Tensor p = Tensor::from_data({1}, {0.0}).set_requires_grad();
  Adam opt;
  opt.add_param("p", p);
  CHECK_THROWS_AS(opt.add_param("p2", p), std::invalid_argument);
  Tensor frozen = Tensor::from_data({1}, {0.0});
  CHECK_THROWS_AS(opt.add_param("frozen", frozen), std::invalid_argument);
}

TEST_CASE("state round trip continues the exact trajectory") {
  auto make = [](Adam& opt, Tensor& p) {
    p = Tensor::from_data({3}, {0.1, 0.2, 0.3}).set_requires_grad();
    opt.add_param("p", p);
  };
  AdamConfig cfg;
  cfg.lr = 0.02;

  Adam opt_a(cfg);
  Tensor pa;
  make(opt_a, pa);
  Rng rng(7);
  std::vector<std::vector<double>> grads;
  for (int t = 0; t < 10; ++t) {
    std::vector<double> g = {rng.normal(), rng.normal(), rng.normal()};
    grads.push_back(g);
  }
  for (int t = 0; t < 5; ++t) {
    pa.zero_grad();
    pa.accumulate_grad(grads[static_cast<size_t>(t)]);
    opt_a.step();
  }
  std::stringstream state;
  opt_a.serialize(state);
  std::vector<double> snapshot = pa.data();

  Adam opt_b(cfg);
  Tensor pb;
  make(opt_b, pb);
  pb.data() = snapshot;
  opt_b.deserialize(state);
  CHECK(opt_b.step_count() == 5);

  for (int t = 5; t < 10; ++t) {
    for (Tensor* p : {&pa, &pb}) p->zero_grad();
    pa.accumulate_grad(grads[static_cast<size_t>(t)]);
    pb.accumulate_grad(grads[static_cast<size_t>(t)]);
    opt_a.step();
    opt_b.step();
  }
  CHECK(pa.data() == pb.data());  // bit-identical continuation
}

TEST_CASE("state with mismatched layout is rejected") {
  Tensor p = Tensor::from_data({2}, {0.0, 0.0}).set_requires_grad();
  Adam opt;
  opt.add_param("p", p);
  std::stringstream state;
  opt.serialize(state);

  Adam other;
  Tensor q = Tensor::from_data({3}, {0.0, 0.0, 0.0}).set_requires_grad();
  other.add_param("p", q);
  CHECK_THROWS_AS(other.deserialize(state), std::invalid_argument);
}

TEST_CASE("weight decay skips exempt leading rows") {
  AdamConfig cfg;
  cfg.lr = 0.5;
  cfg.weight_decay = 0.1;
  Adam opt(cfg);
  Tensor table = Tensor::from_data({3, 2}, {4.0, 4.0, 4.0, 4.0, 4.0, 4.0}).set_requires_grad();
  opt.add_param("table", table, 1);
  table.accumulate_grad({0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
  opt.step();
  // zero gradient leaves the Adam update at zero, decay alone moves rows 1..2
  CHECK(table.data()[0] == 4.0);
  CHECK(table.data()[1] == 4.0);
  for (size_t i = 2; i < 6; ++i) CHECK(table.data()[i] == doctest::Approx(4.0 * (1.0 - 0.05)).epsilon(1e-12));

  Tensor bad = Tensor::from_data({2, 2}, {0.0, 0.0, 0.0, 0.0}).set_requires_grad();
  Adam other;
  CHECK_THROWS_AS(other.add_param("bad", bad, 3), std::invalid_argument);
}
