// Interaction log ingestion: TSV parsing, k-core filtering, time token
// assignment, leave-one-out splitting, and padded batch construction.
#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tasif/common.hpp"

namespace tasif {

struct RawInteraction {
  std::string user;
  std::string item;
  i64 timestamp = 0;
  std::vector<std::vector<std::string>> attributes;  // one list per attribute type
};

struct ColumnSchema {
  std::string user_col = "user_id";
  std::string item_col = "item_id";
  std::string time_col = "timestamp";
  std::vector<std::string> attribute_cols;
};

struct LoadReport {
  std::vector<RawInteraction> records;
  i64 skipped_rows = 0;
};

// Tab-separated file with a header row; multi-valued attribute cells are
// space-separated and deduplicated. Malformed rows are skipped and counted.
LoadReport load_interactions(const std::string& path, const ColumnSchema& schema);

// Iterates removal until every surviving user and item appears >= k times.
// Order-independent; an empty survivor set is an error.
std::vector<RawInteraction> k_core_filter(const std::vector<RawInteraction>& records, i64 k);

struct TimeTokenization {
  std::vector<i64> tokens;  // 1-based; 0 is reserved for padding
  i64 token_count = 0;
};

// token = 1 + floor((t - epoch_anchor) / (span_days * 86400)); one shared
// timeline for all users.
TimeTokenization assign_time_tokens(const std::vector<i64>& timestamps, i64 span_days,
                                    i64 epoch_anchor);

struct Event {
  i64 item = 0;
  i64 timestamp = 0;
  i64 time_token = 0;
};

struct InteractionDataset {
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;  // [0] is the padding id
  std::vector<std::string> attr_type_names;
  std::vector<std::vector<std::string>> attr_value_names;  // per type; [0] is padding
  // per item, per type: that item's attribute value ids (union over its rows)
  std::vector<std::vector<std::vector<i64>>> item_attrs;
  std::vector<i64> attr_multiplicity;  // per type: max values on any item
  std::vector<std::vector<Event>> user_sequences;  // sorted by (timestamp, arrival)
  i64 span_days = 0;
  i64 epoch_anchor = 0;
  i64 time_token_count = 0;

  i64 user_count() const { return static_cast<i64>(user_names.size()); }
  i64 item_count() const { return static_cast<i64>(item_names.size()); }  // incl. padding
  i64 attr_type_count() const { return static_cast<i64>(attr_type_names.size()); }
  i64 attr_value_count(i64 j) const {  // incl. padding
    return static_cast<i64>(attr_value_names[static_cast<size_t>(j)].size());
  }
  i64 interaction_count() const {
    i64 n = 0;
    for (const auto& s : user_sequences) n += static_cast<i64>(s.size());
    return n;
  }
};

// Filters by min_timestamp (0 disables), applies k-core, builds vocabularies
// in first-occurrence order, sorts each user's events chronologically and
// assigns time tokens anchored at the filtered data's minimum timestamp.
InteractionDataset build_dataset(const std::vector<RawInteraction>& records,
                                 const ColumnSchema& schema, i64 k, i64 span_days,
                                 i64 min_timestamp = 0);

// Leave-one-out: last event is the test target, second-to-last the
// validation target, and every position 1..len-2 a training pair.
struct SplitIndex {
  struct Example {
    i64 user = 0;
    i64 target_pos = 0;  // context = events [0, target_pos), target = event [target_pos]
  };
  std::vector<Example> train, valid, test;
  i64 dropped_users = 0;  // users shorter than 3 events
};

SplitIndex leave_one_out_split(const InteractionDataset& ds);

struct SequenceBatch {
  i64 batch_size = 0;
  i64 n = 0;  // padded length
  std::vector<i64> items;           // B*n, left-padded with 0
  std::vector<i64> time_tokens;     // B*n, padding 0
  std::vector<double> padding_mask; // B*n, 1 = real position
  struct AttrBlock {
    i64 m = 0;                  // values per position
    std::vector<i64> values;    // rows * m value ids (0 where absent)
    std::vector<double> mask;   // rows * m, 1 where a value is present
  };
  std::vector<AttrBlock> attributes;         // per type, rows = B*n
  std::vector<i64> target_item;              // B, never 0
  std::vector<AttrBlock> target_attributes;  // per type, rows = B
  std::vector<std::vector<double>> target_multi_hot;  // per type, B x (vocab_j - 1)
};

// Assembles one batch from split examples [begin, end). Sequences longer
// than n keep the most recent n events.
SequenceBatch make_batch(const InteractionDataset& ds,
                         const std::vector<SplitIndex::Example>& examples, i64 begin, i64 end,
                         i64 n);

// Seeded shuffling batch source; identical seeds yield identical streams.
class BatchIterator {
 public:
  BatchIterator(const InteractionDataset& ds, const std::vector<SplitIndex::Example>& examples,
                i64 n, i64 batch_size, u64 seed, bool shuffle);
  bool next(SequenceBatch& out);
  void reset(u64 seed);
  i64 batch_count() const;
  i64 position() const { return cursor_; }

 private:
  const InteractionDataset& ds_;
  std::vector<SplitIndex::Example> examples_;  // pristine order
  std::vector<SplitIndex::Example> order_;
  i64 n_;
  i64 batch_size_;
  bool shuffle_;
  i64 cursor_ = 0;
};

// Binary cache of a processed dataset, keyed by a content hash so stale
// caches are rebuilt rather than trusted.
u64 dataset_cache_key(const std::string& tsv_path, const ColumnSchema& schema, i64 k,
                      i64 span_days, i64 n, i64 min_timestamp);
void save_dataset_cache(const std::string& path, const InteractionDataset& ds, u64 key);
std::optional<InteractionDataset> load_dataset_cache(const std::string& path, u64 key);

}  // namespace tasif
