#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "tasif/metrics.hpp"

using namespace tasif;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// independent rank oracle: sort item indices by (score desc, index asc) and
// locate the target
i64 sort_rank(const std::vector<double>& row, i64 target) {
  std::vector<i64> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](i64 a, i64 b) {
    if (row[static_cast<size_t>(a)] != row[static_cast<size_t>(b)])
      return row[static_cast<size_t>(a)] > row[static_cast<size_t>(b)];
    return a < b;
  });
  auto it = std::find(idx.begin(), idx.end(), target);
  return static_cast<i64>(it - idx.begin()) + 1;
}

MetricsReport report_from_ranks(const std::vector<i64>& ranks, const std::vector<i64>& cutoffs) {
  MetricsReport rep;
  rep.evaluated_users = static_cast<i64>(ranks.size());
  for (i64 k : cutoffs) {
    double hits = 0.0, gain = 0.0;
    for (i64 r : ranks) {
      if (r <= k) {
        hits += 1.0;
        gain += 1.0 / std::log2(static_cast<double>(r) + 1.0);
      }
    }
    rep.recall[k] = hits / static_cast<double>(ranks.size());
    rep.ndcg[k] = gain / static_cast<double>(ranks.size());
  }
  return rep;
}

// minimal dataset carrying just the catalog structure composite_scores reads
InteractionDataset toy_catalog(i64 items, const std::vector<i64>& attr_vocabs, Rng& rng,
                               double empty_frac = 0.2) {
  InteractionDataset ds;
  ds.item_names.resize(static_cast<size_t>(items));
  for (i64 j = 0; j < static_cast<i64>(attr_vocabs.size()); ++j) {
    ds.attr_type_names.push_back("t" + std::to_string(j));
    ds.attr_value_names.push_back(
        std::vector<std::string>(static_cast<size_t>(attr_vocabs[static_cast<size_t>(j)])));
    ds.attr_multiplicity.push_back(2);
  }
  ds.item_attrs.resize(static_cast<size_t>(items));
  for (i64 i = 0; i < items; ++i) {
    auto& per_type = ds.item_attrs[static_cast<size_t>(i)];
    per_type.resize(attr_vocabs.size());
    if (i == 0) continue;
    for (size_t j = 0; j < attr_vocabs.size(); ++j) {
      if (rng.uniform() < empty_frac) continue;
      i64 c = rng.randint(1, 2);
      for (i64 x = 0; x < c; ++x) per_type[j].push_back(rng.randint(1, attr_vocabs[j] - 1));
    }
  }
  return ds;
}

ForwardOutput random_output(i64 batch, i64 d, i64 types, Rng& rng) {
  ForwardOutput out;
  out.s_id = Tensor::randn({batch, d}, rng, 1.0, false);
  for (i64 j = 0; j < types; ++j) out.s_attr.push_back(Tensor::randn({batch, d}, rng, 1.0, false));
  return out;
}

double dot_row(const Tensor& a, i64 ra, const Tensor& b, i64 rb, i64 d) {
  double acc = 0.0;
  for (i64 c = 0; c < d; ++c)
    acc += a.data()[static_cast<size_t>(ra * d + c)] * b.data()[static_cast<size_t>(rb * d + c)];
  return acc;
}

}  // namespace

TEST_CASE("rank closed forms") {
  // one row, 6 items; target 3 holds the top score
  std::vector<double> s = {-kInf, 0.1, 0.2, 9.0, 0.4, 0.3};
  auto rep = rank_and_measure(s, 1, 6, {3}, {1, 10});
  CHECK(rep.recall.at(1) == 1.0);
  CHECK(rep.ndcg.at(1) == 1.0);
  CHECK(rep.recall.at(10) == 1.0);
  CHECK(rep.ndcg.at(10) == 1.0);

  // push target to rank 3: ndcg = 1/log2(4) = 0.5 exactly
  s = {-kInf, 5.0, 4.0, 3.0, 0.4, 0.3};
  rep = rank_and_measure(s, 1, 6, {3}, {2, 10});
  CHECK(rep.recall.at(2) == 0.0);
  CHECK(rep.ndcg.at(2) == 0.0);
  CHECK(rep.recall.at(10) == 1.0);
  CHECK(rep.ndcg.at(10) == 0.5);
}

TEST_CASE("ties break by ascending item index") {
  std::vector<double> s(7, 1.25);  // all equal, including index 0
  auto rep = rank_and_measure(s, 1, 7, {3}, {3, 4});
  // indices 0,1,2 tie with smaller index -> rank 4
  CHECK(rep.recall.at(3) == 0.0);
  CHECK(rep.recall.at(4) == 1.0);
  CHECK(rep.ndcg.at(4) == 1.0 / std::log2(5.0));
}

TEST_CASE("agrees with sort-based oracle under heavy ties") {
  Rng rng(404);
  for (int rep_i = 0; rep_i < 200; ++rep_i) {
    const i64 batch = 1 + rng.randint(0, 5);
    const i64 items = 20 + rng.randint(0, 280);
    std::vector<double> s(static_cast<size_t>(batch * items));
    for (auto& v : s) v = static_cast<double>(rng.randint(0, 12)) / 4.0;  // discrete -> ties
    std::vector<i64> targets(static_cast<size_t>(batch));
    std::vector<i64> oracle(static_cast<size_t>(batch));
    for (i64 b = 0; b < batch; ++b) {
      targets[static_cast<size_t>(b)] = rng.randint(1, items - 1);
      std::vector<double> row(s.begin() + b * items, s.begin() + (b + 1) * items);
      oracle[static_cast<size_t>(b)] = sort_rank(row, targets[static_cast<size_t>(b)]);
    }
    std::vector<i64> cutoffs = {1, 5, items / 2, items};
    auto got = rank_and_measure(s, batch, items, targets, cutoffs);
    auto want = report_from_ranks(oracle, cutoffs);
    for (i64 k : cutoffs) {
      CHECK(got.recall.at(k) == want.recall.at(k));
      CHECK(got.ndcg.at(k) == want.ndcg.at(k));
    }
  }
}

TEST_CASE("metric bounds and cutoff monotonicity") {
  Rng rng(77);
  for (int rep_i = 0; rep_i < 50; ++rep_i) {
    const i64 batch = 1 + rng.randint(0, 7);
    const i64 items = 40;
    std::vector<double> s(static_cast<size_t>(batch * items));
    for (auto& v : s) v = rng.normal();
    std::vector<i64> targets(static_cast<size_t>(batch));
    for (auto& t : targets) t = rng.randint(1, items - 1);
    auto rep = rank_and_measure(s, batch, items, targets, {10, 20});
    CHECK(rep.recall.at(10) <= rep.recall.at(20));
    CHECK(rep.ndcg.at(10) <= rep.ndcg.at(20));
    for (i64 k : {i64{10}, i64{20}}) {
      CHECK(rep.ndcg.at(k) <= rep.recall.at(k));
      CHECK(rep.recall.at(k) <= 1.0);
      CHECK(rep.ndcg.at(k) >= 0.0);
    }
  }
}

TEST_CASE("constant score shift leaves the report unchanged") {
  Rng rng(31);
  const i64 batch = 5, items = 64;
  std::vector<double> s(static_cast<size_t>(batch * items));
  for (auto& v : s) v = static_cast<double>(rng.randint(-32, 32)) / 16.0;  // exact fractions
  std::vector<i64> targets = {3, 10, 1, 63, 40};
  std::vector<double> shifted = s;
  for (auto& v : shifted) v += 4.0;
  auto a = rank_and_measure(s, batch, items, targets, {10, 20});
  auto b = rank_and_measure(shifted, batch, items, targets, {10, 20});
  CHECK(a.recall == b.recall);
  CHECK(a.ndcg == b.ndcg);
}

TEST_CASE("rank_and_measure input validation") {
  std::vector<double> s = {0.0, 1.0, 2.0, 3.0};
  CHECK_THROWS(rank_and_measure(s, 1, 4, {0}, {10}));  // padding id as target
  CHECK_THROWS(rank_and_measure(s, 1, 4, {4}, {10}));  // outside catalog
  CHECK_THROWS(rank_and_measure(s, 1, 4, {1}, {}));    // no cutoffs
  CHECK_THROWS(rank_and_measure(s, 1, 4, {1}, {0}));   // degenerate cutoff
  CHECK_THROWS(rank_and_measure(s, 2, 4, {1, 1}, {10}));  // size mismatch
  std::vector<double> bad = {0.0, std::nan(""), 2.0, 3.0};
  CHECK_THROWS(rank_and_measure(bad, 1, 4, {1}, {10}));
  std::vector<double> masked_target = {0.0, -kInf, 2.0, 3.0};
  CHECK_THROWS(rank_and_measure(masked_target, 1, 4, {1}, {10}));
}

TEST_CASE("composite score with beta 0 is exactly the id score") {
  Rng rng(11);
  auto ds = toy_catalog(9, {5, 7}, rng);
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  VocabInfo vocab{9, {5, 7}, 4};
  auto params = TasifParameters::init(cfg, vocab, 3);
  auto out = random_output(4, cfg.d, 2, rng);
  auto scores = composite_scores(out, params, ds, 0.0);
  for (i64 b = 0; b < 4; ++b) {
    CHECK(scores[static_cast<size_t>(b * 9)] == -kInf);
    for (i64 i = 1; i < 9; ++i) {
      const double want = dot_row(out.s_id, b, params.e_id, i, cfg.d);
      CHECK(scores[static_cast<size_t>(b * 9 + i)] == want);
    }
  }
}

TEST_CASE("composite score matches a per-item double loop") {
  Rng rng(12);
  const i64 items = 14, d = 8, batch = 3;
  auto ds = toy_catalog(items, {6, 4}, rng, 0.35);
  ModelConfig cfg;
  cfg.d = d;
  cfg.n = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  VocabInfo vocab{items, {6, 4}, 4};
  auto params = TasifParameters::init(cfg, vocab, 9);
  // make the learned weights non-trivial
  params.attr_weight_logits[0].data()[0] = 0.8;
  params.attr_weight_logits[1].data()[0] = -1.3;
  auto out = random_output(batch, d, 2, rng);

  const double beta = 0.4;
  auto scores = composite_scores(out, params, ds, beta);
  auto sp = [](double x) { return std::log1p(std::exp(x)); };
  for (i64 b = 0; b < batch; ++b) {
    for (i64 i = 1; i < items; ++i) {
      double want = (1.0 - beta) * dot_row(out.s_id, b, params.e_id, i, d);
      for (i64 j = 0; j < 2; ++j) {
        const auto& vals = ds.item_attrs[static_cast<size_t>(i)][static_cast<size_t>(j)];
        if (vals.empty()) continue;
        double mean = 0.0;
        for (i64 v : vals)
          mean += dot_row(out.s_attr[static_cast<size_t>(j)], b,
                          params.e_attr[static_cast<size_t>(j)], v, d);
        mean /= static_cast<double>(vals.size());
        want += beta * sp(params.attr_weight_logits[static_cast<size_t>(j)].item()) * mean;
      }
      CHECK(std::abs(scores[static_cast<size_t>(b * items + i)] - want) < 1e-9);
    }
  }
}

TEST_CASE("beta 1 with one shared attribute value ties every item") {
  Rng rng(13);
  const i64 items = 10;
  InteractionDataset ds;
  ds.item_names.resize(static_cast<size_t>(items));
  ds.attr_type_names = {"only"};
  ds.attr_value_names = {{"", "shared"}};
  ds.attr_multiplicity = {1};
  ds.item_attrs.resize(static_cast<size_t>(items));
  for (i64 i = 0; i < items; ++i) {
    ds.item_attrs[static_cast<size_t>(i)].resize(1);
    if (i > 0) ds.item_attrs[static_cast<size_t>(i)][0] = {1};
  }
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  VocabInfo vocab{items, {2}, 4};
  auto params = TasifParameters::init(cfg, vocab, 2);
  auto out = random_output(2, cfg.d, 1, rng);
  auto scores = composite_scores(out, params, ds, 1.0);
  // every real item scores identically -> rank of target t is t itself
  for (i64 t : {i64{1}, i64{4}, i64{9}}) {
    auto rep = rank_and_measure(scores, 2, items, {t, t}, {items});
    CHECK(rep.ndcg.at(items) == 1.0 / std::log2(static_cast<double>(t) + 1.0));
  }
}

TEST_CASE("composite score rejects beta outside the unit interval") {
  Rng rng(14);
  auto ds = toy_catalog(6, {4}, rng);
  ModelConfig cfg;
  cfg.d = 8;
  cfg.n = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  VocabInfo vocab{6, {4}, 4};
  auto params = TasifParameters::init(cfg, vocab, 5);
  auto out = random_output(2, cfg.d, 1, rng);
  CHECK_THROWS(composite_scores(out, params, ds, -0.1));
  CHECK_THROWS(composite_scores(out, params, ds, 1.5));
  CHECK_NOTHROW(composite_scores(out, params, ds, 1.0));
}

TEST_CASE("evaluate is deterministic and covers the whole split") {
  auto loaded = load_interactions("data/sample.tsv",
                                  {"user_id", "item_id", "timestamp", {"category", "brand"}});
  auto ds = build_dataset(loaded.records, {"user_id", "item_id", "timestamp", {"category", "brand"}},
                          5, 30);
  auto split = leave_one_out_split(ds);
  REQUIRE(!split.valid.empty());

  ModelConfig cfg;
  cfg.d = 8;
  cfg.n = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  TasifModel model(cfg, vocab_of(ds), 21);

  EvalConfig ec;
  ec.beta = 0.3;
  ec.batch_size = 4;
  ec.seed = 99;
  std::vector<RankRecord> dump;
  auto a = evaluate(model, ds, split.valid, ec, &dump);
  auto b = evaluate(model, ds, split.valid, ec);
  CHECK(a.evaluated_users == static_cast<i64>(split.valid.size()));
  CHECK(a.evaluated_users == b.evaluated_users);
  CHECK(a.recall == b.recall);
  CHECK(a.ndcg == b.ndcg);
  CHECK(a.seed == 99);
  CHECK(a.wall_time >= 0.0);
  CHECK(dump.size() == split.valid.size());
  for (size_t i = 0; i < dump.size(); ++i) {
    CHECK(dump[i].user == split.valid[i].user);
    CHECK(dump[i].rank >= 1);
    CHECK(dump[i].rank < ds.item_count());
    CHECK(dump[i].target >= 1);
  }

  SUBCASE("empty split is rejected") { CHECK_THROWS(evaluate(model, ds, {}, ec)); }
  SUBCASE("an active tape is rejected") {
    Tape tape;
    CHECK_THROWS(evaluate(model, ds, split.valid, ec));
  }
}

TEST_CASE("masking seen items never hurts the target") {
  auto loaded = load_interactions("data/sample.tsv",
                                  {"user_id", "item_id", "timestamp", {"category", "brand"}});
  auto ds = build_dataset(loaded.records, {"user_id", "item_id", "timestamp", {"category", "brand"}},
                          5, 30);
  auto split = leave_one_out_split(ds);

  ModelConfig cfg;
  cfg.d = 8;
  cfg.n = 8;
  cfg.blocks = 1;
  cfg.heads = 2;
  TasifModel model(cfg, vocab_of(ds), 4);

  EvalConfig off;
  off.beta = 0.2;
  off.batch_size = 8;
  EvalConfig on = off;
  on.mask_seen = true;

  std::vector<RankRecord> d_off, d_on;
  auto r_off = evaluate(model, ds, split.test, off, &d_off);
  auto r_on = evaluate(model, ds, split.test, on, &d_on);
  REQUIRE(d_off.size() == d_on.size());
  bool improved = false;
  for (size_t i = 0; i < d_off.size(); ++i) {
    CHECK(d_on[i].rank <= d_off[i].rank);
    if (d_on[i].rank < d_off[i].rank) improved = true;
  }
  CHECK(improved);  // sample data revisits items, so masking must bite somewhere
  for (i64 k : {i64{10}, i64{20}}) CHECK(r_on.recall.at(k) >= r_off.recall.at(k));
}
