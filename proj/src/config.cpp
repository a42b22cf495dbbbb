#include "tasif/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tasif {
namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    piece = trim(piece);
    if (!piece.empty()) out.push_back(piece);
  }
  return out;
}

}  // namespace

const std::vector<ConfigEntry>& RunConfig::schema() {
  static const std::vector<ConfigEntry> entries = {
      {"dataset", "data/sample.tsv", "path to the raw interaction TSV"},
      {"user_col", "user_id", "header name of the user column"},
      {"item_col", "item_id", "header name of the item column"},
      {"time_col", "timestamp", "header name of the unix-seconds column"},
      {"attr_cols", "category,brand", "comma list of attribute columns (may be empty)"},
      {"k_core", "5", "minimum interactions per surviving user and item"},
      {"span_days", "30", "days per time-span token"},
      {"span_grid", "7,30,90,180,365", "span_days values tried by sweep"},
      {"min_timestamp", "0", "drop interactions before this unix time (0 = keep all)"},
      {"cache_path", "", "dataset cache file; empty derives <out_dir>/dataset.cache"},

      {"d", "64", "embedding width, divisible by heads"},
      {"n", "64", "padded sequence length, power of two"},
      {"blocks", "2", "encoder blocks"},
      {"heads", "2", "attention heads"},
      {"dropout", "0.2", "dropout rate used in training"},
      {"init_std", "0.02", "truncated-normal init scale"},
      {"fusion", "gate", "side-information fusion: sum | concat_linear | gate"},
      {"filter", "adaptive", "frequency filter: adaptive | learnable | low_pass | high_suppress | none"},
      {"filter_cutoff", "-1", "highest kept bin for fixed filters; -1 picks n/8"},
      {"causal", "true", "mask future positions in attention"},
      {"use_tsp", "true", "add time-span tokens to the item stream"},
      {"use_aff", "true", "apply the frequency filters"},
      {"use_asif", "true", "fused-guidance attention (false: plain self-attention)"},
      {"use_nap", "true", "next-attribute prediction loss term"},
      {"use_ura", "true", "user-representation alignment loss term"},
      {"use_i2a", "true", "item-to-attribute auxiliary loss term"},

      {"lr", "1e-4", "Adam learning rate"},
      {"adam_beta1", "0.9", "Adam first-moment decay"},
      {"adam_beta2", "0.999", "Adam second-moment decay"},
      {"adam_eps", "1e-8", "Adam epsilon (added after the square root)"},
      {"weight_decay", "0", "decoupled weight decay (embedding padding rows exempt)"},

      {"batch_size", "256", "training batch size"},
      {"eval_batch_size", "256", "evaluation batch size"},
      {"epochs", "200", "maximum training epochs"},
      {"patience", "10", "early-stop epochs past the best validation ndcg@20 (0 disables)"},
      {"lambda1", "1.0", "next-attribute loss weight"},
      {"lambda2", "0.1", "alignment loss weight"},
      {"lambda3", "10.0", "item-to-attribute loss weight"},
      {"temperature", "0.07", "InfoNCE temperature"},

      {"beta", "0.3", "attribute share of the composite ranking score"},
      {"beta_grid", "0.1,0.2,0.3,0.4,0.5", "beta values tried by sweep"},
      {"cutoffs", "10,20", "ranking cutoffs reported"},
      {"mask_seen", "false", "exclude already-seen items from ranking (never the target)"},
      {"seed", "42", "master seed"},
      {"seeds", "42,43,44,45,46", "seed list for sweep/ablate/eval averaging"},
      {"out_dir", "runs/run", "run directory for configs, logs, checkpoints, tables"},
  };
  return entries;
}

RunConfig::RunConfig() {
  values_.reserve(schema().size());
  for (const auto& e : schema()) values_.push_back(e.value);
}

size_t RunConfig::index_of(const std::string& key) const {
  const auto& s = schema();
  for (size_t i = 0; i < s.size(); ++i)
    if (s[i].key == key) return i;
  fail("unknown config key '" + key + "'");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  values_[index_of(key)] = trim(value);
}

const std::string& RunConfig::get(const std::string& key) const { return values_[index_of(key)]; }

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  TASIF_CHECK(in.good(), "cannot open config file '" << path << "'");
  std::string line;
  i64 lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    TASIF_CHECK(eq != std::string::npos, path << ":" << lineno << ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::apply_env() {
  for (const auto& e : schema()) {
    std::string name = "TASIF_";
    for (char c : e.key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* v = std::getenv(name.c_str())) set(e.key, v);
  }
}

void RunConfig::apply_override(const std::string& kv) {
  const size_t eq = kv.find('=');
  TASIF_CHECK(eq != std::string::npos, "override '" << kv << "' is not key=value");
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

i64 RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    const i64 r = std::stoll(v, &pos);
    TASIF_CHECK(pos == v.size(), "trailing characters");
    return r;
  } catch (const std::exception&) {
    fail("config key '" + key + "': '" + v + "' is not an integer");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    TASIF_CHECK(pos == v.size(), "trailing characters");
    return r;
  } catch (const std::exception&) {
    fail("config key '" + key + "': '" + v + "' is not a number");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail("config key '" + key + "': '" + v + "' is not a boolean");
}

u64 RunConfig::get_seed(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    const u64 r = std::stoull(v, &pos);
    TASIF_CHECK(pos == v.size(), "trailing characters");
    return r;
  } catch (const std::exception&) {
    fail("config key '" + key + "': '" + v + "' is not an unsigned integer");
  }
}

std::vector<i64> RunConfig::get_int_list(const std::string& key) const {
  std::vector<i64> out;
  for (const auto& p : split_commas(get(key))) {
    try {
      out.push_back(std::stoll(p));
    } catch (const std::exception&) {
      fail("config key '" + key + "': '" + p + "' is not an integer");
    }
  }
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& p : split_commas(get(key))) {
    try {
      out.push_back(std::stod(p));
    } catch (const std::exception&) {
      fail("config key '" + key + "': '" + p + "' is not a number");
    }
  }
  return out;
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  return split_commas(get(key));
}

std::string RunConfig::resolved() const {
  std::ostringstream out;
  const auto& s = schema();
  for (size_t i = 0; i < s.size(); ++i) {
    out << "# " << s[i].help << "\n";
    out << s[i].key << " = " << values_[i] << "\n";
  }
  return out.str();
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.d = get_int("d");
  m.n = get_int("n");
  m.blocks = get_int("blocks");
  m.heads = get_int("heads");
  m.dropout = get_double("dropout");
  m.init_std = get_double("init_std");
  m.fusion = parse_fusion_mode(get("fusion"));
  m.filter = parse_filter_kind(get("filter"));
  m.filter_cutoff = get_int("filter_cutoff");
  m.causal = get_bool("causal");
  m.use_tsp = get_bool("use_tsp");
  m.use_aff = get_bool("use_aff");
  m.use_asif = get_bool("use_asif");
  m.use_nap = get_bool("use_nap");
  m.use_ura = get_bool("use_ura");
  m.use_i2a = get_bool("use_i2a");
  return m;
}

AdamConfig RunConfig::adam_config() const {
  AdamConfig a;
  a.lr = get_double("lr");
  a.beta1 = get_double("adam_beta1");
  a.beta2 = get_double("adam_beta2");
  a.eps = get_double("adam_eps");
  a.weight_decay = get_double("weight_decay");
  return a;
}

LossConfig RunConfig::loss_config() const {
  LossConfig l;
  l.lambda1 = get_double("lambda1");
  l.lambda2 = get_double("lambda2");
  l.lambda3 = get_double("lambda3");
  l.temperature = get_double("temperature");
  return l;
}

ColumnSchema RunConfig::column_schema() const {
  ColumnSchema s;
  s.user_col = get("user_col");
  s.item_col = get("item_col");
  s.time_col = get("time_col");
  s.attribute_cols = get_list("attr_cols");
  return s;
}

}  // namespace tasif
