#include "tasif/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tasif {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

std::vector<std::string> split_spaces_dedup(const std::string& cell) {
  std::vector<std::string> values;
  std::istringstream iss(cell);
  std::string tok;
  while (iss >> tok)
    if (std::find(values.begin(), values.end(), tok) == values.end()) values.push_back(tok);
  return values;
}

bool parse_i64(const std::string& s, i64& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (errno != 0 || end != s.c_str() + s.size()) return false;
  out = static_cast<i64>(v);
  return true;
}

void write_u64(std::ostream& os, u64 v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_i64(std::ostream& os, i64 v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

u64 read_u64(std::istream& is) {
  u64 v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

i64 read_i64(std::istream& is) {
  i64 v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& is) {
  u64 len = read_u64(is);
  TASIF_CHECK(len < (1ull << 32), "dataset cache: implausible string length");
  std::string s(len, '\0');
  is.read(s.data(), static_cast<std::streamsize>(len));
  return s;
}

constexpr u64 kCacheMagic = 0x4154414446495354ull;  // "TSIFDATA" little-endian
constexpr u64 kCacheVersion = 1;

}  // namespace

LoadReport load_interactions(const std::string& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  TASIF_CHECK(in.good(), "cannot read interaction file: " << path);
  std::string line;
  TASIF_CHECK(std::getline(in, line), "interaction file has no header: " << path);
  std::vector<std::string> header = split_tabs(line);

  auto col_of = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    TASIF_CHECK(it != header.end(), "column '" << name << "' missing from " << path);
    return static_cast<size_t>(it - header.begin());
  };
  size_t user_ix = col_of(schema.user_col);
  size_t item_ix = col_of(schema.item_col);
  size_t time_ix = col_of(schema.time_col);
  std::vector<size_t> attr_ix;
  for (const std::string& c : schema.attribute_cols) attr_ix.push_back(col_of(c));

  LoadReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells = split_tabs(line);
    if (cells.size() != header.size()) {
      ++report.skipped_rows;
      continue;
    }
    RawInteraction rec;
    rec.user = cells[user_ix];
    rec.item = cells[item_ix];
    if (rec.user.empty() || rec.item.empty() || !parse_i64(cells[time_ix], rec.timestamp) ||
        rec.timestamp < 0) {
      ++report.skipped_rows;
      continue;
    }
    for (size_t ix : attr_ix) rec.attributes.push_back(split_spaces_dedup(cells[ix]));
    report.records.push_back(std::move(rec));
  }
  if (report.skipped_rows > 0)
    std::cerr << "warning: skipped " << report.skipped_rows << " malformed rows in " << path << "\n";
  return report;
}

std::vector<RawInteraction> k_core_filter(const std::vector<RawInteraction>& records, i64 k) {
  TASIF_CHECK(k >= 1, "k-core threshold must be >= 1, got " << k);
  std::vector<char> alive(records.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string, i64> user_deg, item_deg;
    for (size_t i = 0; i < records.size(); ++i) {
      if (!alive[i]) continue;
      ++user_deg[records[i].user];
      ++item_deg[records[i].item];
    }
    for (size_t i = 0; i < records.size(); ++i) {
      if (!alive[i]) continue;
      if (user_deg[records[i].user] < k || item_deg[records[i].item] < k) {
        alive[i] = 0;
        changed = true;
      }
    }
  }
  std::vector<RawInteraction> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (alive[i]) out.push_back(records[i]);
  if (out.empty()) {
    std::unordered_map<std::string, i64> user_deg, item_deg;
    for (const auto& r : records) {
      ++user_deg[r.user];
      ++item_deg[r.item];
    }
    TASIF_CHECK(false, "k-core(" << k << ") removed everything: " << records.size()
                                 << " interactions, " << user_deg.size() << " users, "
                                 << item_deg.size() << " items");
  }
  return out;
}

TimeTokenization assign_time_tokens(const std::vector<i64>& timestamps, i64 span_days,
                                    i64 epoch_anchor) {
  TASIF_CHECK(span_days >= 1, "span_days must be >= 1, got " << span_days);
  TimeTokenization out;
  i64 span_seconds = span_days * 86400;
  for (i64 t : timestamps) {
    TASIF_CHECK(t >= epoch_anchor, "timestamp " << t << " precedes the anchor " << epoch_anchor);
    i64 token = 1 + (t - epoch_anchor) / span_seconds;
    out.tokens.push_back(token);
    out.token_count = std::max(out.token_count, token);
  }
  return out;
}

InteractionDataset build_dataset(const std::vector<RawInteraction>& records,
                                 const ColumnSchema& schema, i64 k, i64 span_days,
                                 i64 min_timestamp) {
  std::vector<RawInteraction> kept;
  for (const auto& r : records) {
    TASIF_CHECK(r.attributes.size() == schema.attribute_cols.size(),
                "record has " << r.attributes.size() << " attribute lists, schema names "
                              << schema.attribute_cols.size());
    if (min_timestamp > 0 && r.timestamp < min_timestamp) continue;
    kept.push_back(r);
  }
  TASIF_CHECK(!kept.empty(), "no interactions remain after the min-timestamp filter");
  kept = k_core_filter(kept, k);

  InteractionDataset ds;
  ds.span_days = span_days;
  ds.attr_type_names = schema.attribute_cols;
  ds.item_names.push_back("<pad>");
  for (size_t j = 0; j < schema.attribute_cols.size(); ++j)
    ds.attr_value_names.push_back({"<pad>"});
  ds.item_attrs.push_back(std::vector<std::vector<i64>>(schema.attribute_cols.size()));

  std::unordered_map<std::string, i64> user_ids, item_ids;
  std::vector<std::unordered_map<std::string, i64>> value_ids(schema.attribute_cols.size());
  struct Arrival {
    i64 user, item, timestamp;
  };
  std::vector<Arrival> arrivals;
  i64 min_ts = kept.front().timestamp;

  for (const auto& r : kept) {
    auto [uit, unew] = user_ids.try_emplace(r.user, static_cast<i64>(ds.user_names.size()));
    if (unew) {
      ds.user_names.push_back(r.user);
      ds.user_sequences.emplace_back();
    }
    auto [iit, inew] = item_ids.try_emplace(r.item, static_cast<i64>(ds.item_names.size()));
    if (inew) {
      ds.item_names.push_back(r.item);
      ds.item_attrs.push_back(std::vector<std::vector<i64>>(schema.attribute_cols.size()));
    }
    i64 item = iit->second;
    for (size_t j = 0; j < r.attributes.size(); ++j) {
      for (const std::string& v : r.attributes[j]) {
        auto [vit, vnew] =
            value_ids[j].try_emplace(v, static_cast<i64>(ds.attr_value_names[j].size()));
        if (vnew) ds.attr_value_names[j].push_back(v);
        auto& vals = ds.item_attrs[static_cast<size_t>(item)][j];
        if (std::find(vals.begin(), vals.end(), vit->second) == vals.end())
          vals.push_back(vit->second);
      }
    }
    arrivals.push_back({uit->second, item, r.timestamp});
    min_ts = std::min(min_ts, r.timestamp);
  }

  ds.epoch_anchor = min_ts;
  for (const Arrival& a : arrivals)
    ds.user_sequences[static_cast<size_t>(a.user)].push_back({a.item, a.timestamp, 0});
  for (auto& seq : ds.user_sequences)
    std::stable_sort(seq.begin(), seq.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });

  std::vector<i64> all_ts;
  for (const auto& seq : ds.user_sequences)
    for (const Event& e : seq) all_ts.push_back(e.timestamp);
  TimeTokenization tt = assign_time_tokens(all_ts, span_days, ds.epoch_anchor);
  ds.time_token_count = tt.token_count;
  size_t cursor = 0;
  for (auto& seq : ds.user_sequences)
    for (Event& e : seq) e.time_token = tt.tokens[cursor++];

  ds.attr_multiplicity.assign(schema.attribute_cols.size(), 1);
  for (const auto& per_item : ds.item_attrs)
    for (size_t j = 0; j < per_item.size(); ++j)
      ds.attr_multiplicity[j] = std::max(ds.attr_multiplicity[j], static_cast<i64>(per_item[j].size()));
  return ds;
}

SplitIndex leave_one_out_split(const InteractionDataset& ds) {
  SplitIndex split;
  for (i64 u = 0; u < ds.user_count(); ++u) {
    i64 len = static_cast<i64>(ds.user_sequences[static_cast<size_t>(u)].size());
    if (len < 3) {
      ++split.dropped_users;
      continue;
    }
    for (i64 p = 1; p <= len - 2; ++p) split.train.push_back({u, p});
    split.valid.push_back({u, len - 2});
    split.test.push_back({u, len - 1});
  }
  if (split.dropped_users > 0)
    std::cerr << "warning: dropped " << split.dropped_users << " users with fewer than 3 events\n";
  return split;
}

SequenceBatch make_batch(const InteractionDataset& ds,
                         const std::vector<SplitIndex::Example>& examples, i64 begin, i64 end,
                         i64 n) {
  TASIF_CHECK(0 <= begin && begin < end && end <= static_cast<i64>(examples.size()),
              "make_batch: bad example range [" << begin << ", " << end << ")");
  i64 B = end - begin;
  i64 types = ds.attr_type_count();

  SequenceBatch batch;
  batch.batch_size = B;
  batch.n = n;
  batch.items.assign(static_cast<size_t>(B * n), 0);
  batch.time_tokens.assign(static_cast<size_t>(B * n), 0);
  batch.padding_mask.assign(static_cast<size_t>(B * n), 0.0);
  for (i64 j = 0; j < types; ++j) {
    i64 m = ds.attr_multiplicity[static_cast<size_t>(j)];
    batch.attributes.push_back({m, std::vector<i64>(static_cast<size_t>(B * n * m), 0),
                                std::vector<double>(static_cast<size_t>(B * n * m), 0.0)});
    batch.target_attributes.push_back({m, std::vector<i64>(static_cast<size_t>(B * m), 0),
                                       std::vector<double>(static_cast<size_t>(B * m), 0.0)});
    batch.target_multi_hot.emplace_back(
        static_cast<size_t>(B * (ds.attr_value_count(j) - 1)), 0.0);
  }
  batch.target_item.assign(static_cast<size_t>(B), 0);

  for (i64 b = 0; b < B; ++b) {
    const auto& ex = examples[static_cast<size_t>(begin + b)];
    const auto& seq = ds.user_sequences[static_cast<size_t>(ex.user)];
    TASIF_CHECK(ex.target_pos >= 1 && ex.target_pos < static_cast<i64>(seq.size()),
                "make_batch: target position " << ex.target_pos << " outside user sequence");
    i64 ctx_len = std::min(ex.target_pos, n);
    i64 src_start = ex.target_pos - ctx_len;  // most recent ctx_len events
    i64 dst_start = n - ctx_len;              // right-aligned
    for (i64 t = 0; t < ctx_len; ++t) {
      const Event& e = seq[static_cast<size_t>(src_start + t)];
      size_t slot = static_cast<size_t>(b * n + dst_start + t);
      batch.items[slot] = e.item;
      batch.time_tokens[slot] = e.time_token;
      batch.padding_mask[slot] = 1.0;
      for (i64 j = 0; j < types; ++j) {
        auto& blk = batch.attributes[static_cast<size_t>(j)];
        const auto& vals = ds.item_attrs[static_cast<size_t>(e.item)][static_cast<size_t>(j)];
        for (size_t s = 0; s < vals.size(); ++s) {
          blk.values[slot * static_cast<size_t>(blk.m) + s] = vals[s];
          blk.mask[slot * static_cast<size_t>(blk.m) + s] = 1.0;
        }
      }
    }
    const Event& target = seq[static_cast<size_t>(ex.target_pos)];
    batch.target_item[static_cast<size_t>(b)] = target.item;
    for (i64 j = 0; j < types; ++j) {
      auto& blk = batch.target_attributes[static_cast<size_t>(j)];
      const auto& vals = ds.item_attrs[static_cast<size_t>(target.item)][static_cast<size_t>(j)];
      for (size_t s = 0; s < vals.size(); ++s) {
        blk.values[static_cast<size_t>(b * blk.m) + s] = vals[s];
        blk.mask[static_cast<size_t>(b * blk.m) + s] = 1.0;
      }
      auto& mh = batch.target_multi_hot[static_cast<size_t>(j)];
      i64 width = ds.attr_value_count(j) - 1;
      for (i64 v : vals) mh[static_cast<size_t>(b * width + (v - 1))] = 1.0;
    }
  }
  return batch;
}

BatchIterator::BatchIterator(const InteractionDataset& ds,
                             const std::vector<SplitIndex::Example>& examples, i64 n,
                             i64 batch_size, u64 seed, bool shuffle)
    : ds_(ds), examples_(examples), n_(n), batch_size_(batch_size), shuffle_(shuffle) {
  TASIF_CHECK(batch_size_ >= 1, "batch size must be >= 1, got " << batch_size_);
  reset(seed);
}

void BatchIterator::reset(u64 seed) {
  order_ = examples_;
  if (shuffle_) {
    Rng rng(seed);
    rng.shuffle(order_);
  }
  cursor_ = 0;
}

i64 BatchIterator::batch_count() const {
  return (static_cast<i64>(order_.size()) + batch_size_ - 1) / batch_size_;
}

bool BatchIterator::next(SequenceBatch& out) {
  i64 total = static_cast<i64>(order_.size());
  if (cursor_ >= total) return false;
  i64 end = std::min(cursor_ + batch_size_, total);
  out = make_batch(ds_, order_, cursor_, end, n_);
  cursor_ = end;
  return true;
}

u64 dataset_cache_key(const std::string& tsv_path, const ColumnSchema& schema, i64 k,
                      i64 span_days, i64 n, i64 min_timestamp) {
  std::ifstream in(tsv_path, std::ios::binary);
  TASIF_CHECK(in.good(), "cannot read interaction file: " << tsv_path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();
  u64 h = fnv1a64(bytes);
  h = fnv1a64(schema.user_col, h);
  h = fnv1a64(schema.item_col, h);
  h = fnv1a64(schema.time_col, h);
  for (const auto& c : schema.attribute_cols) h = fnv1a64(c, h);
  i64 params[4] = {k, span_days, n, min_timestamp};
  return fnv1a64(params, sizeof params, h);
}

void save_dataset_cache(const std::string& path, const InteractionDataset& ds, u64 key) {
  std::ofstream os(path, std::ios::binary);
  TASIF_CHECK(os.good(), "cannot write dataset cache: " << path);
  write_u64(os, kCacheMagic);
  write_u64(os, kCacheVersion);
  write_u64(os, key);
  write_i64(os, ds.span_days);
  write_i64(os, ds.epoch_anchor);
  write_i64(os, ds.time_token_count);
  write_u64(os, ds.user_names.size());
  for (const auto& s : ds.user_names) write_str(os, s);
  write_u64(os, ds.item_names.size());
  for (const auto& s : ds.item_names) write_str(os, s);
  write_u64(os, ds.attr_type_names.size());
  for (size_t j = 0; j < ds.attr_type_names.size(); ++j) {
    write_str(os, ds.attr_type_names[j]);
    write_u64(os, ds.attr_value_names[j].size());
    for (const auto& s : ds.attr_value_names[j]) write_str(os, s);
    write_i64(os, ds.attr_multiplicity[j]);
  }
  for (const auto& per_item : ds.item_attrs)
    for (const auto& vals : per_item) {
      write_u64(os, vals.size());
      for (i64 v : vals) write_i64(os, v);
    }
  for (const auto& seq : ds.user_sequences) {
    write_u64(os, seq.size());
    for (const Event& e : seq) {
      write_i64(os, e.item);
      write_i64(os, e.timestamp);
      write_i64(os, e.time_token);
    }
  }
  TASIF_CHECK(os.good(), "failed writing dataset cache: " << path);
}

std::optional<InteractionDataset> load_dataset_cache(const std::string& path, u64 key) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) return std::nullopt;
  if (read_u64(is) != kCacheMagic || read_u64(is) != kCacheVersion || read_u64(is) != key ||
      !is.good())
    return std::nullopt;
  InteractionDataset ds;
  ds.span_days = read_i64(is);
  ds.epoch_anchor = read_i64(is);
  ds.time_token_count = read_i64(is);
  u64 users = read_u64(is);
  for (u64 i = 0; i < users; ++i) ds.user_names.push_back(read_str(is));
  u64 items = read_u64(is);
  for (u64 i = 0; i < items; ++i) ds.item_names.push_back(read_str(is));
  u64 types = read_u64(is);
  for (u64 j = 0; j < types; ++j) {
    ds.attr_type_names.push_back(read_str(is));
    u64 vals = read_u64(is);
    std::vector<std::string> names;
    for (u64 v = 0; v < vals; ++v) names.push_back(read_str(is));
    ds.attr_value_names.push_back(std::move(names));
    ds.attr_multiplicity.push_back(read_i64(is));
  }
  for (u64 i = 0; i < items; ++i) {
    std::vector<std::vector<i64>> per_item;
    for (u64 j = 0; j < types; ++j) {
      u64 cnt = read_u64(is);
      std::vector<i64> vals;
      for (u64 v = 0; v < cnt; ++v) vals.push_back(read_i64(is));
      per_item.push_back(std::move(vals));
    }
    ds.item_attrs.push_back(std::move(per_item));
  }
  for (u64 u = 0; u < users; ++u) {
    u64 cnt = read_u64(is);
    std::vector<Event> seq;
    for (u64 e = 0; e < cnt; ++e) {
      Event ev;
      ev.item = read_i64(is);
      ev.timestamp = read_i64(is);
      ev.time_token = read_i64(is);
      seq.push_back(ev);
    }
    ds.user_sequences.push_back(std::move(seq));
  }
  if (!is.good()) return std::nullopt;
  return ds;
}

}  // namespace tasif
