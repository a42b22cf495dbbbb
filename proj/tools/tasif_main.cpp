// Command-line entry point: prepare, train, eval, ablate, filter-study,
// bench-scaling, dump-attention, sweep.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tasif/bench.hpp"
#include "tasif/config.hpp"
#include "tasif/metrics.hpp"
#include "tasif/synthetic.hpp"
#include "tasif/trainer.hpp"

using namespace tasif;
namespace fs = std::filesystem;

namespace {

// ---------- config plumbing ----------

struct ConfigCli {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::string> holders;  // parallel to RunConfig::schema()
};

void attach_config_flags(CLI::App* sub, ConfigCli& cc) {
  sub->add_option("--config", cc.config_file, "key = value config file");
  sub->add_option("--set", cc.sets, "extra key=value override, repeatable");
  const auto& schema = RunConfig::schema();
  cc.holders.resize(schema.size());
  for (size_t i = 0; i < schema.size(); ++i)
    sub->add_option("--" + schema[i].key, cc.holders[i], schema[i].help);
}

RunConfig resolve_config(const CLI::App* sub, const ConfigCli& cc) {
  RunConfig rc;
  if (!cc.config_file.empty()) rc.apply_file(cc.config_file);
  rc.apply_env();
  for (const auto& kv : cc.sets) rc.apply_override(kv);
  const auto& schema = RunConfig::schema();
  for (size_t i = 0; i < schema.size(); ++i)
    if (sub->count("--" + schema[i].key) > 0) rc.set(schema[i].key, cc.holders[i]);
  return rc;
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string cache_path_of(const RunConfig& rc) {
  std::string cache = rc.get("cache_path");
  if (cache.empty()) cache = rc.get("out_dir") + "/dataset.cache";
  return cache;
}

InteractionDataset obtain_dataset(const RunConfig& rc, bool* cache_hit = nullptr,
                                  i64* skipped_rows = nullptr) {
  const std::string cache = cache_path_of(rc);
  const u64 key = dataset_cache_key(rc.get("dataset"), rc.column_schema(), rc.get_int("k_core"),
                                    rc.get_int("span_days"), rc.get_int("n"),
                                    rc.get_int("min_timestamp"));
  if (auto ds = load_dataset_cache(cache, key)) {
    if (cache_hit) *cache_hit = true;
    return std::move(*ds);
  }
  if (cache_hit) *cache_hit = false;
  const LoadReport rep = load_interactions(rc.get("dataset"), rc.column_schema());
  if (skipped_rows) *skipped_rows = rep.skipped_rows;
  InteractionDataset ds = build_dataset(rep.records, rc.column_schema(), rc.get_int("k_core"),
                                        rc.get_int("span_days"), rc.get_int("min_timestamp"));
  ensure_parent_dir(cache);
  save_dataset_cache(cache, ds, key);
  return ds;
}

// ---------- output helpers ----------

void write_tsv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  ensure_parent_dir(path);
  std::ofstream out(path);
  TASIF_CHECK(out.good(), "cannot write '" << path << "'");
  for (size_t i = 0; i < header.size(); ++i) out << (i ? "\t" : "") << header[i];
  out << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
    out << "\n";
  }
}

void print_table(const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> w(header.size());
  for (size_t i = 0; i < header.size(); ++i) w[i] = header[i].size();
  for (const auto& r : rows)
    for (size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], r[i].size());
  auto line = [&](const std::vector<std::string>& r) {
    for (size_t i = 0; i < r.size(); ++i) std::printf("%-*s  ", static_cast<int>(w[i]), r[i].c_str());
    std::printf("\n");
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::vector<std::string> metric_header(const std::vector<i64>& cutoffs,
                                       const std::string& first) {
  std::vector<std::string> h{first};
  for (i64 k : cutoffs) h.push_back("recall@" + std::to_string(k));
  for (i64 k : cutoffs) h.push_back("ndcg@" + std::to_string(k));
  return h;
}

void append_metrics(std::vector<std::string>& row, const MetricsReport& r,
                    const std::vector<i64>& cutoffs) {
  for (i64 k : cutoffs) row.push_back(fmt(r.recall.at(k)));
  for (i64 k : cutoffs) row.push_back(fmt(r.ndcg.at(k)));
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
  MetricsReport m;
  m.evaluated_users = reports.front().evaluated_users;
  for (const auto& [k, _] : reports.front().recall) {
    double r = 0, n = 0;
    for (const auto& rep : reports) {
      r += rep.recall.at(k);
      n += rep.ndcg.at(k);
    }
    m.recall[k] = r / static_cast<double>(reports.size());
    m.ndcg[k] = n / static_cast<double>(reports.size());
  }
  return m;
}

const std::vector<SplitIndex::Example>& pick_split(const SplitIndex& split,
                                                   const std::string& name) {
  if (name == "train") return split.train;
  if (name == "valid") return split.valid;
  if (name == "test") return split.test;
  fail("unknown split '" + name + "' (expected train, valid or test)");
}

// ---------- commands ----------

int cmd_prepare(const CLI::App* sub, const ConfigCli& cc, const std::string& synthetic) {
  RunConfig rc = resolve_config(sub, cc);
  if (!synthetic.empty()) {
    ensure_parent_dir(rc.get("dataset"));
    if (synthetic == "memorization") {
      write_interactions_tsv(rc.get("dataset"), memorization_records(), memorization_schema());
      rc.set("attr_cols", "parity");
    } else if (synthetic == "time-signal") {
      write_interactions_tsv(rc.get("dataset"), time_signal_records(), time_signal_schema());
      rc.set("attr_cols", "");
    } else {
      fail("unknown synthetic set '" + synthetic + "' (memorization | time-signal)");
    }
    rc.set("user_col", "user_id");
    rc.set("item_col", "item_id");
    rc.set("time_col", "timestamp");
  }
  fs::create_directories(rc.get("out_dir"));

  bool cache_hit = false;
  i64 skipped = 0;
  const InteractionDataset ds = obtain_dataset(rc, &cache_hit, &skipped);
  const i64 inter = ds.interaction_count();
  const i64 real_items = ds.item_count() - 1;
  const double density =
      static_cast<double>(inter) / (static_cast<double>(ds.user_count()) * real_items);

  std::vector<std::vector<std::string>> rows = {
      {"users", std::to_string(ds.user_count())},
      {"items", std::to_string(real_items)},
      {"interactions", std::to_string(inter)},
      {"avg_length", fmt(static_cast<double>(inter) / ds.user_count(), "%.2f")},
      {"density", fmt(density, "%.6f")},
      {"time_tokens", std::to_string(ds.time_token_count)},
      {"span_days", rc.get("span_days")},
  };
  for (i64 j = 0; j < ds.attr_type_count(); ++j)
    rows.push_back({"attr_values[" + ds.attr_type_names[static_cast<size_t>(j)] + "]",
                    std::to_string(ds.attr_value_count(j) - 1)});
  write_tsv(rc.get("out_dir") + "/dataset_stats.tsv", {"stat", "value"}, rows);

  const std::string cache_note = cache_hit ? "cache hit: dataset loaded without recomputation"
                                           : "cache written: " + cache_path_of(rc);
  std::printf("%s\n", cache_note.c_str());
  if (!cache_hit) std::printf("skipped malformed rows: %lld\n", static_cast<long long>(skipped));
  print_table({"stat", "value"}, rows);
  return 0;
}

TrainOptions options_from_config(const RunConfig& rc, const std::string& out_dir) {
  TrainOptions o;
  o.model = rc.model_config();
  o.adam = rc.adam_config();
  o.loss = rc.loss_config();
  o.batch_size = rc.get_int("batch_size");
  o.eval_batch_size = rc.get_int("eval_batch_size");
  o.epochs = rc.get_int("epochs");
  o.patience = rc.get_int("patience");
  o.beta = rc.get_double("beta");
  o.cutoffs = rc.get_int_list("cutoffs");
  o.seed = rc.get_seed("seed");
  o.out_dir = out_dir;
  return o;
}

int report_training(const TrainResult& res) {
  if (res.aborted) {
    std::fprintf(stderr, "ERROR\tcategory=state\tnon-finite loss at epoch %lld batch %lld; see %s\n",
                 static_cast<long long>(res.abort_epoch), static_cast<long long>(res.abort_step),
                 res.abort_path.c_str());
    return 5;
  }
  std::printf("epochs run: %lld%s\n", static_cast<long long>(res.epochs_run),
              res.stopped_early ? " (early stop)" : "");
  std::printf("best epoch: %lld  valid ndcg@20: %.6f\n", static_cast<long long>(res.best_epoch),
              res.best_ndcg20);
  std::printf("final train loss: %.6f\n", res.final_train_loss);
  std::printf("best checkpoint: %s\n", res.best_checkpoint.c_str());
  std::printf("log: %s\n", res.log_path.c_str());
  return 0;
}

int cmd_train(const CLI::App* sub, const ConfigCli& cc, bool resume, bool verbose) {
  RunConfig rc = resolve_config(sub, cc);
  fs::create_directories(rc.get("out_dir"));
  {
    std::ofstream f(rc.get("out_dir") + "/config.resolved");
    TASIF_CHECK(f.good(), "cannot write resolved config");
    f << rc.resolved();
  }
  const InteractionDataset ds = obtain_dataset(rc);
  const SplitIndex split = leave_one_out_split(ds);
  TrainOptions opts = options_from_config(rc, rc.get("out_dir"));
  opts.resume = resume;
  opts.quiet = !verbose;
  return report_training(train_model(ds, split, opts));
}

int cmd_eval(const CLI::App* sub, const ConfigCli& cc, std::string checkpoint,
             const std::string& split_name, const std::string& rank_dump) {
  RunConfig rc = resolve_config(sub, cc);
  if (checkpoint.empty()) checkpoint = rc.get("out_dir") + "/best.ckpt";
  TasifParameters params = load_checkpoint(checkpoint);
  const InteractionDataset ds = obtain_dataset(rc);
  require_same_setup(params, params.config, vocab_of(ds));  // catalog must match
  const TasifModel model(std::move(params));
  const SplitIndex split = leave_one_out_split(ds);
  const auto& examples = pick_split(split, split_name);

  EvalConfig ec;
  ec.beta = rc.get_double("beta");
  ec.cutoffs = rc.get_int_list("cutoffs");
  ec.batch_size = rc.get_int("eval_batch_size");
  ec.mask_seen = rc.get_bool("mask_seen");

  const std::vector<i64> seeds = rc.get_int_list("seeds");
  TASIF_CHECK(!seeds.empty(), "seed list is empty");
  std::vector<MetricsReport> reports;
  std::vector<std::vector<std::string>> rows;
  std::vector<RankRecord> dump;
  for (size_t i = 0; i < seeds.size(); ++i) {
    ec.seed = static_cast<u64>(seeds[i]);
    reports.push_back(evaluate(model, ds, examples, ec, i == 0 && !rank_dump.empty() ? &dump : nullptr));
    std::vector<std::string> row{std::to_string(seeds[i])};
    append_metrics(row, reports.back(), ec.cutoffs);
    rows.push_back(std::move(row));
  }
  const MetricsReport mean = mean_report(reports);
  std::vector<std::string> mrow{"mean"};
  append_metrics(mrow, mean, ec.cutoffs);
  rows.push_back(mrow);
  // evaluation is deterministic, so cross-seed variance must be zero
  std::vector<std::string> vrow{"variance"};
  for (int which = 0; which < 2; ++which)
    for (i64 k : ec.cutoffs) {
      auto value = [&](const MetricsReport& r) {
        return which == 0 ? r.recall.at(k) : r.ndcg.at(k);
      };
      bool all_equal = true;
      for (const auto& r : reports) all_equal = all_equal && value(r) == value(reports.front());
      double acc = 0;
      const double m = which == 0 ? mean.recall.at(k) : mean.ndcg.at(k);
      for (const auto& r : reports) acc += (value(r) - m) * (value(r) - m);
      vrow.push_back(fmt(all_equal ? 0.0 : acc / static_cast<double>(reports.size()), "%.9g"));
    }
  rows.push_back(vrow);

  const auto header = metric_header(ec.cutoffs, "seed");
  write_tsv(rc.get("out_dir") + "/eval_" + split_name + ".tsv", header, rows);
  std::printf("split: %s  users: %lld  beta: %.3f\n", split_name.c_str(),
              static_cast<long long>(mean.evaluated_users), ec.beta);
  print_table(header, rows);

  if (!rank_dump.empty()) {
    std::vector<std::vector<std::string>> drs;
    for (const auto& r : dump)
      drs.push_back({ds.user_names[static_cast<size_t>(r.user)],
                     ds.item_names[static_cast<size_t>(r.target)], std::to_string(r.rank)});
    write_tsv(rank_dump, {"user", "target", "rank"}, drs);
    std::printf("per-user ranks written to %s\n", rank_dump.c_str());
  }
  return 0;
}

// trains one variant per seed and evaluates the test split with the mean
std::vector<std::vector<std::string>> run_variants(
    const RunConfig& rc, const InteractionDataset& ds, const SplitIndex& split,
    const std::vector<std::pair<std::string, ModelConfig>>& variants,
    const std::vector<i64>& cutoffs) {
  const std::vector<i64> seeds = rc.get_int_list("seeds");
  TASIF_CHECK(!seeds.empty(), "seed list is empty");
  std::vector<std::vector<std::string>> rows;
  for (const auto& [label, mc] : variants) {
    std::vector<MetricsReport> reports;
    for (i64 seed : seeds) {
      TrainOptions opts = options_from_config(rc, rc.get("out_dir") + "/" + label + "/s" +
                                                      std::to_string(seed));
      opts.model = mc;
      opts.seed = static_cast<u64>(seed);
      const TrainResult res = train_model(ds, split, opts);
      TASIF_CHECK(!res.aborted, "variant '" << label << "' aborted on a non-finite loss; see "
                                            << res.abort_path);
      const TasifModel best(load_checkpoint(res.best_checkpoint));
      EvalConfig ec;
      ec.beta = rc.get_double("beta");
      ec.cutoffs = cutoffs;
      ec.batch_size = rc.get_int("eval_batch_size");
      ec.seed = static_cast<u64>(seed);
      reports.push_back(evaluate(best, ds, split.test, ec));
      std::printf("  %s seed %lld: test ndcg@20 %.6f\n", label.c_str(),
                  static_cast<long long>(seed), reports.back().ndcg.at(20));
      std::fflush(stdout);
    }
    std::vector<std::string> row{label};
    append_metrics(row, mean_report(reports), cutoffs);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<i64> cutoffs_with_20(const RunConfig& rc) {
  std::vector<i64> cutoffs = rc.get_int_list("cutoffs");
  if (std::find(cutoffs.begin(), cutoffs.end(), i64{20}) == cutoffs.end()) cutoffs.push_back(20);
  return cutoffs;
}

int cmd_ablate(const CLI::App* sub, const ConfigCli& cc) {
  RunConfig rc = resolve_config(sub, cc);
  const InteractionDataset ds = obtain_dataset(rc);
  const SplitIndex split = leave_one_out_split(ds);
  const ModelConfig base = rc.model_config();

  std::vector<std::pair<std::string, ModelConfig>> variants{{"full", base}};
  auto add = [&](const std::string& label, auto&& tweak) {
    ModelConfig m = base;
    tweak(m);
    variants.push_back({label, m});
  };
  add("wo_tsp", [](ModelConfig& m) { m.use_tsp = false; });
  add("wo_aff", [](ModelConfig& m) { m.use_aff = false; });
  add("wo_asif", [](ModelConfig& m) { m.use_asif = false; });
  add("wo_nap", [](ModelConfig& m) { m.use_nap = false; });
  add("wo_ura", [](ModelConfig& m) { m.use_ura = false; });
  add("wo_i2a", [](ModelConfig& m) { m.use_i2a = false; });

  const std::vector<i64> cutoffs = cutoffs_with_20(rc);
  const auto rows = run_variants(rc, ds, split, variants, cutoffs);
  const auto header = metric_header(cutoffs, "variant");
  write_tsv(rc.get("out_dir") + "/ablation.tsv", header, rows);
  print_table(header, rows);
  return 0;
}

int cmd_filter_study(const CLI::App* sub, const ConfigCli& cc) {
  RunConfig rc = resolve_config(sub, cc);
  const InteractionDataset ds = obtain_dataset(rc);
  const SplitIndex split = leave_one_out_split(ds);
  const ModelConfig base = rc.model_config();

  std::vector<std::pair<std::string, ModelConfig>> variants;
  for (const char* kind : {"none", "low_pass", "high_suppress", "learnable", "adaptive"}) {
    ModelConfig m = base;
    m.use_aff = true;
    m.filter = parse_filter_kind(kind);
    variants.push_back({kind, m});
  }
  const std::vector<i64> cutoffs = cutoffs_with_20(rc);
  const auto rows = run_variants(rc, ds, split, variants, cutoffs);
  const auto header = metric_header(cutoffs, "filter");
  write_tsv(rc.get("out_dir") + "/filter_study.tsv", header, rows);
  print_table(header, rows);
  return 0;
}

int cmd_bench_scaling(const CLI::App* sub, const ConfigCli& cc, const std::string& counts_csv,
                      i64 trials) {
  RunConfig rc = resolve_config(sub, cc);
  RunConfig counts_holder;
  counts_holder.set("cutoffs", counts_csv);  // reuse the list parser
  const std::vector<i64> counts = counts_holder.get_int_list("cutoffs");
  const ScalingResult r =
      run_scaling(rc.get_int("n"), rc.get_int("d"), counts, trials, rc.get_seed("seed"));

  std::vector<std::vector<std::string>> rows;
  for (const auto& rec : r.records)
    rows.push_back({rec.variant, std::to_string(rec.attr_count),
                    std::to_string(rec.attention_matrix_count),
                    fmt(rec.median_seconds, "%.9f")});
  const std::vector<std::string> header{"variant", "attr_count", "attention_matrices",
                                        "median_seconds"};
  fs::create_directories(rc.get("out_dir"));
  write_tsv(rc.get("out_dir") + "/scaling.tsv", header, rows);
  print_table(header, rows);
  std::printf("fitted log-log slopes: tasif %.4f  mssr_reference %.4f\n", r.tasif_slope,
              r.mssr_slope);
  return 0;
}

int cmd_dump_attention(const CLI::App* sub, const ConfigCli& cc, std::string checkpoint,
                       const std::string& user, std::string out_path) {
  RunConfig rc = resolve_config(sub, cc);
  if (checkpoint.empty()) checkpoint = rc.get("out_dir") + "/best.ckpt";
  TasifParameters params = load_checkpoint(checkpoint);
  const InteractionDataset ds = obtain_dataset(rc);
  require_same_setup(params, params.config, vocab_of(ds));

  const auto uit = std::find(ds.user_names.begin(), ds.user_names.end(), user);
  TASIF_CHECK(uit != ds.user_names.end(), "unknown user '" << user << "'");
  const i64 u = uit - ds.user_names.begin();
  const auto& seq = ds.user_sequences[static_cast<size_t>(u)];
  TASIF_CHECK(seq.size() >= 2, "user '" << user << "' has fewer than 2 events");

  const TasifModel model(std::move(params));
  const i64 n = model.config().n;
  const SequenceBatch batch =
      make_batch(ds, {{u, static_cast<i64>(seq.size()) - 1}}, 0, 1, n);
  ForwardTrace trace;
  Rng rng(0);
  model.forward(batch, /*training=*/false, rng, &trace);

  if (out_path.empty()) out_path = rc.get("out_dir") + "/attention_" + user + ".tsv";
  ensure_parent_dir(out_path);
  std::ofstream out(out_path);
  TASIF_CHECK(out.good(), "cannot write '" << out_path << "'");
  out << "stream\thead\tkey_pos\titem\tlabels\tweight\n";

  const i64 heads = model.config().heads;
  const i64 types = model.vocab().attr_types();
  auto label_of = [&](i64 pos) {
    std::string lab;
    for (i64 j = 0; j < types; ++j) {
      const auto& blk = batch.attributes[static_cast<size_t>(j)];
      for (i64 v = 0; v < blk.m; ++v) {
        if (blk.mask[static_cast<size_t>(pos * blk.m + v)] != 1.0) continue;
        if (!lab.empty()) lab += "|";
        lab += ds.attr_value_names[static_cast<size_t>(j)]
                                  [static_cast<size_t>(blk.values[static_cast<size_t>(pos * blk.m + v)])];
      }
    }
    return lab.empty() ? std::string("-") : lab;
  };
  auto emit = [&](const std::string& stream, const Tensor& probs) {
    for (i64 h = 0; h < heads; ++h)
      for (i64 j = 0; j < n; ++j) {
        const double w = probs.data()[static_cast<size_t>((h * n + n - 1) * n + j)];
        const i64 item = batch.items[static_cast<size_t>(j)];
        char wbuf[40];
        std::snprintf(wbuf, sizeof(wbuf), "%.17g", w);
        out << stream << '\t' << h << '\t' << j << '\t'
            << (item == 0 ? "PAD" : ds.item_names[static_cast<size_t>(item)]) << '\t'
            << label_of(j) << '\t' << wbuf << '\n';
      }
  };
  emit("id", trace.attn_id.back());
  for (i64 j = 0; j < types; ++j)
    emit("attr:" + ds.attr_type_names[static_cast<size_t>(j)],
         trace.attn_attr.back()[static_cast<size_t>(j)]);
  TASIF_CHECK(out.good(), "write to '" << out_path << "' failed");
  std::printf("attention rows for user %s written to %s\n", user.c_str(), out_path.c_str());
  return 0;
}

int cmd_sweep(const CLI::App* sub, const ConfigCli& cc) {
  RunConfig rc = resolve_config(sub, cc);
  const std::vector<i64> spans = rc.get_int_list("span_grid");
  const std::vector<double> betas = rc.get_double_list("beta_grid");
  const std::vector<i64> seeds = rc.get_int_list("seeds");
  TASIF_CHECK(!spans.empty() && !betas.empty() && !seeds.empty(), "empty sweep grid");
  const std::vector<i64> cutoffs = cutoffs_with_20(rc);

  std::vector<std::vector<std::string>> rows;
  std::map<std::pair<i64, i64>, double> mean_valid;  // (span, beta index) -> mean ndcg@20
  std::map<std::pair<i64, i64>, std::vector<std::string>> best_ckpts;

  for (i64 span : spans) {
    RunConfig rs = rc;
    rs.set("span_days", std::to_string(span));
    rs.set("cache_path", rc.get("out_dir") + "/cache_span" + std::to_string(span));
    const InteractionDataset ds = obtain_dataset(rs);
    const SplitIndex split = leave_one_out_split(ds);
    for (i64 seed : seeds) {
      TrainOptions opts = options_from_config(
          rs, rc.get("out_dir") + "/span" + std::to_string(span) + "_s" + std::to_string(seed));
      opts.seed = static_cast<u64>(seed);
      const TrainResult res = train_model(ds, split, opts);
      TASIF_CHECK(!res.aborted, "sweep trial aborted; see " << res.abort_path);
      const TasifModel best(load_checkpoint(res.best_checkpoint));
      for (size_t bi = 0; bi < betas.size(); ++bi) {
        EvalConfig ec;
        ec.beta = betas[bi];
        ec.cutoffs = cutoffs;
        ec.batch_size = rs.get_int("eval_batch_size");
        ec.seed = static_cast<u64>(seed);
        const MetricsReport vr = evaluate(best, ds, split.valid, ec);
        std::vector<std::string> row{std::to_string(span), std::to_string(seed),
                                     fmt(betas[bi], "%.2f")};
        append_metrics(row, vr, cutoffs);
        rows.push_back(std::move(row));
        mean_valid[{span, static_cast<i64>(bi)}] +=
            vr.ndcg.at(20) / static_cast<double>(seeds.size());
        best_ckpts[{span, static_cast<i64>(bi)}].push_back(res.best_checkpoint);
        std::printf("  span %lld seed %lld beta %.2f: valid ndcg@20 %.6f\n",
                    static_cast<long long>(span), static_cast<long long>(seed), betas[bi],
                    vr.ndcg.at(20));
        std::fflush(stdout);
      }
    }
  }
  std::vector<std::string> header{"span_days", "seed", "beta"};
  for (i64 k : cutoffs) header.push_back("valid_recall@" + std::to_string(k));
  for (i64 k : cutoffs) header.push_back("valid_ndcg@" + std::to_string(k));
  write_tsv(rc.get("out_dir") + "/sweep.tsv", header, rows);
  print_table(header, rows);

  auto best = std::max_element(mean_valid.begin(), mean_valid.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  const i64 best_span = best->first.first;
  const double best_beta = betas[static_cast<size_t>(best->first.second)];
  std::printf("best by mean valid ndcg@20: span %lld beta %.2f (%.6f)\n",
              static_cast<long long>(best_span), best_beta, best->second);

  // test metrics at the winning cell, averaged over the retrained seeds
  RunConfig rs = rc;
  rs.set("span_days", std::to_string(best_span));
  rs.set("cache_path", rc.get("out_dir") + "/cache_span" + std::to_string(best_span));
  const InteractionDataset ds = obtain_dataset(rs);
  const SplitIndex split = leave_one_out_split(ds);
  std::vector<MetricsReport> test_reports;
  for (size_t i = 0; i < seeds.size(); ++i) {
    EvalConfig ec;
    ec.beta = best_beta;
    ec.cutoffs = cutoffs;
    ec.batch_size = rs.get_int("eval_batch_size");
    ec.seed = static_cast<u64>(seeds[i]);
    const TasifModel model(load_checkpoint(best_ckpts[best->first][i]));
    test_reports.push_back(evaluate(model, ds, split.test, ec));
  }
  const MetricsReport mt = mean_report(test_reports);
  std::vector<std::string> trow{"test_mean"};
  append_metrics(trow, mt, cutoffs);
  print_table(metric_header(cutoffs, ""), {trow});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential recommender with time tokens, frequency filters and guided fusion"};
  app.require_subcommand(1);

  ConfigCli cc_prepare, cc_train, cc_eval, cc_ablate, cc_filter, cc_bench, cc_dump, cc_sweep;
  std::string synthetic, checkpoint, split_name = "test", rank_dump, user, attn_out;
  std::string counts_csv = "1,2,4,8";
  i64 trials = 10;
  bool resume = false, verbose = false;

  auto* p = app.add_subcommand("prepare", "build and cache the dataset, print its statistics");
  attach_config_flags(p, cc_prepare);
  p->add_option("--synthetic", synthetic, "generate a bundled set first: memorization | time-signal");

  auto* t = app.add_subcommand("train", "train a model with early stopping");
  attach_config_flags(t, cc_train);
  t->add_flag("--resume", resume, "continue from last.ckpt + opt.state in out_dir");
  t->add_flag("--verbose", verbose, "per-epoch progress on stderr");

  auto* e = app.add_subcommand("eval", "rank the full catalog for a split");
  attach_config_flags(e, cc_eval);
  e->add_option("--checkpoint", checkpoint, "model checkpoint (default <out_dir>/best.ckpt)");
  e->add_option("--split", split_name, "train | valid | test (default test)");
  e->add_option("--rank-dump", rank_dump, "write per-user (user, target, rank) TSV here");

  auto* a = app.add_subcommand("ablate", "train the full model and each switch-off variant");
  attach_config_flags(a, cc_ablate);

  auto* f = app.add_subcommand("filter-study", "train one variant per filter kind");
  attach_config_flags(f, cc_filter);

  auto* b = app.add_subcommand("bench-scaling", "fusion-layer cost vs attribute count");
  attach_config_flags(b, cc_bench);
  b->add_option("--attr-counts", counts_csv, "comma list of attribute counts (default 1,2,4,8)");
  b->add_option("--trials", trials, "timing trials per point (default 10)");

  auto* d = app.add_subcommand("dump-attention", "final-block attention rows for one user");
  attach_config_flags(d, cc_dump);
  d->add_option("--checkpoint", checkpoint, "model checkpoint (default <out_dir>/best.ckpt)");
  d->add_option("--user", user, "user id as it appears in the dataset")->required();
  d->add_option("--out", attn_out, "output TSV (default <out_dir>/attention_<user>.tsv)");

  auto* s = app.add_subcommand("sweep", "grid over span_days, beta and training seeds");
  attach_config_flags(s, cc_sweep);

  try {
    app.parse(argc, argv);
    if (p->parsed()) return cmd_prepare(p, cc_prepare, synthetic);
    if (t->parsed()) return cmd_train(t, cc_train, resume, verbose);
    if (e->parsed()) return cmd_eval(e, cc_eval, checkpoint, split_name, rank_dump);
    if (a->parsed()) return cmd_ablate(a, cc_ablate);
    if (f->parsed()) return cmd_filter_study(f, cc_filter);
    if (b->parsed()) return cmd_bench_scaling(b, cc_bench, counts_csv, trials);
    if (d->parsed()) return cmd_dump_attention(d, cc_dump, checkpoint, user, attn_out);
    if (s->parsed()) return cmd_sweep(s, cc_sweep);
    std::fprintf(stderr, "ERROR\tcategory=usage\tno subcommand given\n");
    return 2;
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) return app.exit(ex);  // --help and friends
    std::fprintf(stderr, "ERROR\tcategory=usage\t%s\n", ex.what());
    return 2;
  } catch (const std::invalid_argument& ex) {
    std::fprintf(stderr, "ERROR\tcategory=config\t%s\n", ex.what());
    return 3;
  } catch (const fs::filesystem_error& ex) {
    std::fprintf(stderr, "ERROR\tcategory=io\t%s\n", ex.what());
    return 4;
  } catch (const std::runtime_error& ex) {
    std::fprintf(stderr, "ERROR\tcategory=state\t%s\n", ex.what());
    return 5;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "ERROR\tcategory=internal\t%s\n", ex.what());
    return 1;
  }
}
