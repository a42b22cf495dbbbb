#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tasif/bench.hpp"
#include "tasif/config.hpp"
#include "tasif/synthetic.hpp"
#include "tasif/trainer.hpp"

using namespace tasif;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("tasif_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

json strip_wall(json j) {
  j.erase("wall_time");
  return j;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

InteractionDataset sample_dataset() {
  ColumnSchema schema{"user_id", "item_id", "timestamp", {"category", "brand"}};
  auto rep = load_interactions("data/sample.tsv", schema);
  return build_dataset(rep.records, schema, 5, 30);
}

TrainOptions tiny_options(const std::string& out_dir, u64 seed = 5) {
  TrainOptions o;
  o.model.d = 8;
  o.model.n = 8;
  o.model.blocks = 1;
  o.model.heads = 2;
  o.adam.lr = 1e-3;
  o.epochs = 2;
  o.patience = 10;
  o.seed = seed;
  o.out_dir = out_dir;
  return o;
}

}  // namespace

TEST_CASE("config defaults and typed getters") {
  RunConfig c;
  CHECK(c.get("lr") == "1e-4");
  CHECK(c.get_double("lr") == 1e-4);
  CHECK(c.get_int("d") == 64);
  CHECK(c.get_bool("use_tsp"));
  CHECK(c.get_int_list("cutoffs") == std::vector<i64>{10, 20});
  CHECK(c.get_list("attr_cols") == std::vector<std::string>{"category", "brand"});
  CHECK(c.get_seed("seed") == 42);

  const ModelConfig m = c.model_config();
  CHECK(m.d == 64);
  CHECK(m.fusion == FusionMode::kGate);
  CHECK(m.filter == FilterKind::kAdaptive);
  CHECK(m.use_i2a);
  CHECK(c.adam_config().lr == 1e-4);
  CHECK(c.loss_config().lambda3 == 10.0);
  CHECK(c.column_schema().attribute_cols.size() == 2);

  CHECK_THROWS(c.set("no_such_key", "1"));
  CHECK_THROWS(c.get("no_such_key"));
  c.set("d", "abc");
  CHECK_THROWS(c.get_int("d"));
  c.set("dropout", "high");
  CHECK_THROWS(c.get_double("dropout"));
  c.set("causal", "maybe");
  CHECK_THROWS(c.get_bool("causal"));
}

TEST_CASE("config layering: file, environment, explicit override") {
  TempDir tmp("cfg");
  {
    std::ofstream f(tmp.sub("run.conf"));
    f << "# comment line\n";
    f << "d = 32   # trailing comment\n";
    f << "lr=5e-4\n";
    f << "\n";
  }
  RunConfig c;
  c.apply_file(tmp.sub("run.conf"));
  CHECK(c.get_int("d") == 32);
  CHECK(c.get_double("lr") == 5e-4);

  ::setenv("TASIF_D", "16", 1);
  c.apply_env();
  ::unsetenv("TASIF_D");
  CHECK(c.get_int("d") == 16);

  c.apply_override("d=8");
  CHECK(c.get_int("d") == 8);
  CHECK_THROWS(c.apply_override("nonsense"));

  {
    std::ofstream f(tmp.sub("bad.conf"));
    f << "unknown_key = 3\n";
  }
  RunConfig d;
  CHECK_THROWS(d.apply_file(tmp.sub("bad.conf")));
  CHECK_THROWS(d.apply_file(tmp.sub("missing.conf")));
}

TEST_CASE("resolved config round-trips") {
  TempDir tmp("cfgrt");
  RunConfig a;
  a.set("d", "48");
  a.set("fusion", "concat_linear");
  a.set("attr_cols", "city,stars");
  {
    std::ofstream f(tmp.sub("resolved.conf"));
    f << a.resolved();
  }
  RunConfig b;
  b.apply_file(tmp.sub("resolved.conf"));
  for (const auto& e : RunConfig::schema()) CHECK(a.get(e.key) == b.get(e.key));
}

TEST_CASE("memorization set follows the ring rule") {
  auto recs = memorization_records();
  REQUIRE(recs.size() == 600);
  std::map<std::string, std::vector<std::pair<i64, i64>>> per_user;  // ts -> item index
  for (const auto& r : recs) {
    REQUIRE(r.attributes.size() == 1);
    const i64 k = std::stoll(r.item.substr(1));
    CHECK(r.attributes[0][0] == (k % 2 == 0 ? "even" : "odd"));
    per_user[r.user].push_back({r.timestamp, k});
  }
  REQUIRE(per_user.size() == 50);
  for (auto& [user, seq] : per_user) {
    std::sort(seq.begin(), seq.end());
    REQUIRE(seq.size() == 12);
    for (size_t i = 1; i < seq.size(); ++i) CHECK(seq[i].second == (seq[i - 1].second + 1) % 20);
  }
  auto ds = build_dataset(recs, memorization_schema(), 5, 30);
  CHECK(ds.user_count() == 50);
  CHECK(ds.item_count() == 21);  // ring + padding
  CHECK(ds.attr_type_count() == 1);
  CHECK(ds.attr_value_count(0) == 3);  // even, odd + padding
  auto split = leave_one_out_split(ds);
  CHECK(split.train.size() == 500);
  CHECK(split.test.size() == 50);
}

TEST_CASE("time-signal set carries the regime only in the tokens") {
  auto recs = time_signal_records();
  REQUIRE(recs.size() == 240 * 8);
  auto ds = build_dataset(recs, time_signal_schema(), 5, 30);
  CHECK(ds.user_count() == 240);
  CHECK(ds.item_count() == 61);  // 40 markers + 20 fillers + padding
  CHECK(ds.time_token_count == 40);
  CHECK(ds.attr_type_count() == 0);

  i64 marker_events = 0;
  for (i64 u = 0; u < ds.user_count(); ++u) {
    const auto& seq = ds.user_sequences[static_cast<size_t>(u)];
    REQUIRE(seq.size() == 8);
    const std::string& name = ds.user_names[static_cast<size_t>(u)];
    const i64 regime = std::stoll(name.substr(1, 2));
    const i64 marker_pos = name[3] == 'a' ? 6 : 7;
    for (size_t i = 0; i < seq.size(); ++i) {
      CHECK(seq[i].time_token == regime);  // whole sequence in one span
      const std::string& item = ds.item_names[static_cast<size_t>(seq[i].item)];
      if (static_cast<i64>(i) == marker_pos) {
        CHECK(item == "m" + std::string(regime - 1 < 10 ? "0" : "") + std::to_string(regime - 1));
        ++marker_events;
      } else {
        CHECK(item[0] == 'f');
      }
    }
  }
  CHECK(marker_events == 240);

  // leave-one-out: type-b users test on the marker with an all-filler context;
  // type-a users carry the marker at the second-to-last slot, which is both a
  // train pair (the map gets gradients) and the validation target (early
  // stopping tracks the map)
  auto split = leave_one_out_split(ds);
  for (const auto& ex : split.test) {
    const std::string& name = ds.user_names[static_cast<size_t>(ex.user)];
    const auto& seq = ds.user_sequences[static_cast<size_t>(ex.user)];
    const std::string& target = ds.item_names[static_cast<size_t>(seq[static_cast<size_t>(ex.target_pos)].item)];
    if (name[3] == 'b') {
      CHECK(target[0] == 'm');
      for (i64 p = 0; p < ex.target_pos; ++p)
        CHECK(ds.item_names[static_cast<size_t>(seq[static_cast<size_t>(p)].item)][0] == 'f');
    } else {
      CHECK(target[0] == 'f');
    }
  }
  for (const auto& ex : split.valid) {
    const std::string& name = ds.user_names[static_cast<size_t>(ex.user)];
    const auto& seq = ds.user_sequences[static_cast<size_t>(ex.user)];
    const std::string& target = ds.item_names[static_cast<size_t>(seq[static_cast<size_t>(ex.target_pos)].item)];
    CHECK(target[0] == (name[3] == 'a' ? 'm' : 'f'));
  }
  i64 marker_train_targets = 0;
  for (const auto& ex : split.train) {
    const auto& seq = ds.user_sequences[static_cast<size_t>(ex.user)];
    const std::string& target = ds.item_names[static_cast<size_t>(seq[static_cast<size_t>(ex.target_pos)].item)];
    if (target[0] == 'm') {
      ++marker_train_targets;
      CHECK(ds.user_names[static_cast<size_t>(ex.user)][3] == 'a');
    }
  }
  CHECK(marker_train_targets == 120);  // every type-a user trains on its marker once
}

TEST_CASE("trainer writes logs, checkpoints and state") {
  TempDir tmp("train");
  auto ds = sample_dataset();
  auto split = leave_one_out_split(ds);
  auto res = train_model(ds, split, tiny_options(tmp.sub("run")));

  CHECK(res.epochs_run == 2);
  CHECK(!res.aborted);
  CHECK(res.best_epoch >= 1);
  CHECK(std::isfinite(res.final_train_loss));
  REQUIRE(fs::exists(res.log_path));
  REQUIRE(fs::exists(res.best_checkpoint));
  REQUIRE(fs::exists(res.last_checkpoint));
  REQUIRE(fs::exists(res.state_path));
  CHECK(!fs::exists(res.abort_path));

  auto lines = read_jsonl(res.log_path);
  REQUIRE(lines.size() == 2);
  for (const auto& rec : lines) {
    CHECK(rec.contains("epoch"));
    CHECK(rec.contains("train_loss"));
    CHECK(rec.contains("rec_id"));
    CHECK(rec["rec_attr"].size() == 2);
    CHECK(rec["attr_weights"].size() == 2);
    CHECK(rec["valid_ndcg"].contains("20"));
    CHECK(rec.contains("wall_time"));
  }
  CHECK(lines[0]["epoch"] == 1);
  CHECK(lines[1]["epoch"] == 2);

  // the best checkpoint reloads into the same architecture
  auto params = load_checkpoint(res.best_checkpoint);
  require_same_setup(params, tiny_options("x").model, vocab_of(ds));
}

TEST_CASE("identical seeds give identical runs") {
  TempDir tmp("replay");
  auto ds = sample_dataset();
  auto split = leave_one_out_split(ds);
  auto r1 = train_model(ds, split, tiny_options(tmp.sub("a"), 9));
  auto r2 = train_model(ds, split, tiny_options(tmp.sub("b"), 9));

  auto l1 = read_jsonl(r1.log_path), l2 = read_jsonl(r2.log_path);
  REQUIRE(l1.size() == l2.size());
  for (size_t i = 0; i < l1.size(); ++i) CHECK(strip_wall(l1[i]) == strip_wall(l2[i]));
  CHECK(slurp(r1.best_checkpoint) == slurp(r2.best_checkpoint));
  CHECK(slurp(r1.last_checkpoint) == slurp(r2.last_checkpoint));
  CHECK(slurp(r1.state_path) == slurp(r2.state_path));

  auto r3 = train_model(ds, split, tiny_options(tmp.sub("c"), 10));
  CHECK(slurp(r1.last_checkpoint) != slurp(r3.last_checkpoint));
}

TEST_CASE("resume continues bit-identically") {
  TempDir tmp("resume");
  auto ds = sample_dataset();
  auto split = leave_one_out_split(ds);

  auto straight = tiny_options(tmp.sub("straight"), 7);
  straight.epochs = 4;
  auto rs = train_model(ds, split, straight);

  auto first = tiny_options(tmp.sub("resumed"), 7);
  first.epochs = 2;
  train_model(ds, split, first);
  auto second = first;
  second.epochs = 4;
  second.resume = true;
  auto rr = train_model(ds, split, second);

  CHECK(rr.epochs_run == 4);
  CHECK(slurp(rs.last_checkpoint) == slurp(rr.last_checkpoint));
  CHECK(slurp(rs.state_path) == slurp(rr.state_path));
  auto ls = read_jsonl(rs.log_path), lr = read_jsonl(rr.log_path);
  REQUIRE(ls.size() == 4);
  REQUIRE(lr.size() == 4);
  for (size_t i = 0; i < 4; ++i) CHECK(strip_wall(ls[i]) == strip_wall(lr[i]));

  // resume with a mismatched architecture is rejected
  auto wrong = second;
  wrong.model.d = 16;
  CHECK_THROWS(train_model(ds, split, wrong));
}

TEST_CASE("early stopping halts patience epochs past the best") {
  TempDir tmp("estop");
  auto ds = sample_dataset();
  auto split = leave_one_out_split(ds);
  auto opts = tiny_options(tmp.sub("run"), 3);
  opts.adam.lr = 0.0;  // frozen model: epoch 1 is the best forever
  opts.epochs = 40;
  opts.patience = 2;
  auto res = train_model(ds, split, opts);
  CHECK(res.stopped_early);
  CHECK(res.best_epoch == 1);
  CHECK(res.epochs_run == 3);  // 1 best + 2 patience
}

TEST_CASE("non-finite loss aborts and persists the batch id") {
  TempDir tmp("abort");
  auto ds = sample_dataset();
  auto split = leave_one_out_split(ds);
  auto opts = tiny_options(tmp.sub("run"), 4);
  opts.inject_non_finite_step = 0;
  auto res = train_model(ds, split, opts);
  CHECK(res.aborted);
  CHECK(res.abort_epoch == 1);
  CHECK(res.abort_step == 0);
  REQUIRE(fs::exists(res.abort_path));
  auto ab = json::parse(slurp(res.abort_path));
  CHECK(ab["epoch"] == 1);
  CHECK(ab["batch_in_epoch"] == 0);
  CHECK(ab.contains("order_seed"));
  CHECK(!fs::exists(res.last_checkpoint));
}

TEST_CASE("trainer rejects degenerate inputs") {
  auto ds = sample_dataset();
  auto split = leave_one_out_split(ds);
  auto opts = tiny_options("");
  CHECK_THROWS(train_model(ds, split, opts));  // empty out_dir
  TempDir tmp("reject");
  auto opts2 = tiny_options(tmp.sub("r"));
  SplitIndex empty;
  empty.valid = split.valid;
  CHECK_THROWS(train_model(ds, empty, opts2));  // no train examples
}

TEST_CASE("fusion attention counts are exact") {
  CHECK(fusion_attention_count("tasif", 1) == 2);
  CHECK(fusion_attention_count("mssr_reference", 1) == 9);
  CHECK(fusion_attention_count("tasif", 4) == 5);
  CHECK(fusion_attention_count("mssr_reference", 4) == 36);
  for (i64 a : {i64{1}, i64{2}, i64{4}, i64{8}}) {
    CHECK(fusion_attention_count("tasif", a) == a + 1);
    CHECK(fusion_attention_count("mssr_reference", a) == (a + 2) * (a + 2));
  }
  CHECK_THROWS(fusion_attention_count("other", 1));
}

TEST_CASE("scaling benchmark produces records and finite slopes") {
  auto r = run_scaling(16, 16, {1, 2}, 3, 1);
  REQUIRE(r.records.size() == 4);
  for (const auto& rec : r.records) {
    CHECK(rec.median_seconds > 0.0);
    CHECK(rec.attention_matrix_count ==
          fusion_attention_count(rec.variant, rec.attr_count));
  }
  CHECK(std::isfinite(r.tasif_slope));
  CHECK(std::isfinite(r.mssr_slope));
  CHECK_THROWS(run_scaling(16, 16, {}, 3));
  CHECK_THROWS(run_scaling(16, 16, {1}, 1));
  CHECK_THROWS(run_scaling(15, 16, {1}, 3));
  CHECK_THROWS(run_scaling(16, 15, {1}, 3));
}
