#include "tasif/synthetic.hpp"

#include <cstdio>
#include <fstream>

namespace tasif {
namespace {

std::string num2(i64 v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d", static_cast<int>(v));
  return buf;
}

}  // namespace

std::vector<RawInteraction> memorization_records() {
  constexpr i64 kUsers = 50, kItems = 20, kLen = 12;
  constexpr i64 kBase = 1700000000;
  std::vector<RawInteraction> out;
  out.reserve(static_cast<size_t>(kUsers * kLen));
  for (i64 u = 0; u < kUsers; ++u) {
    const i64 start = u % kItems;
    for (i64 i = 0; i < kLen; ++i) {
      const i64 k = (start + i) % kItems;
      RawInteraction r;
      r.user = "u" + num2(u);
      r.item = "i" + num2(k);
      r.timestamp = kBase + u * 1000000 + i * 3600;
      r.attributes = {{k % 2 == 0 ? "even" : "odd"}};
      out.push_back(std::move(r));
    }
  }
  return out;
}

ColumnSchema memorization_schema() { return {"user_id", "item_id", "timestamp", {"parity"}}; }

std::vector<RawInteraction> time_signal_records(u64 seed) {
  constexpr i64 kRegimes = 40, kPerType = 3, kFillers = 20, kLen = 8;
  constexpr i64 kBase = 1600000000, kSpanSeconds = 30 * 86400;
  Rng rng(seed);
  std::vector<RawInteraction> out;
  out.reserve(static_cast<size_t>(kRegimes * 2 * kPerType * kLen));
  for (i64 regime = 1; regime <= kRegimes; ++regime) {
    for (i64 type = 0; type < 2; ++type) {       // 0: marker second-to-last, 1: marker last
      for (i64 rep = 0; rep < kPerType; ++rep) {
        const std::string user =
            "r" + num2(regime) + (type == 0 ? "a" : "b") + std::to_string(rep);
        // second-to-last doubles as a train pair and the validation target, so
        // type-a users both fit the token-marker map and make early stopping
        // track it; type-b users hold the marker out for a leak-free test
        const i64 marker_pos = type == 0 ? kLen - 2 : kLen - 1;
        for (i64 i = 0; i < kLen; ++i) {
          RawInteraction r;
          r.user = user;
          r.item = i == marker_pos ? "m" + num2(regime - 1)
                                   : "f" + num2(rng.randint(0, kFillers - 1));
          r.timestamp = kBase + (regime - 1) * kSpanSeconds + i * 3600;
          out.push_back(std::move(r));
        }
      }
    }
  }
  return out;
}

ColumnSchema time_signal_schema() { return {"user_id", "item_id", "timestamp", {}}; }

void write_interactions_tsv(const std::string& path, const std::vector<RawInteraction>& records,
                            const ColumnSchema& schema) {
  std::ofstream out(path);
  TASIF_CHECK(out.good(), "cannot write '" << path << "'");
  out << schema.user_col << '\t' << schema.item_col << '\t' << schema.time_col;
  for (const auto& c : schema.attribute_cols) out << '\t' << c;
  out << '\n';
  for (const auto& r : records) {
    TASIF_CHECK(r.attributes.size() == schema.attribute_cols.size(),
                "record attribute count does not match the schema");
    out << r.user << '\t' << r.item << '\t' << r.timestamp;
    for (const auto& vals : r.attributes) {
      out << '\t';
      for (size_t i = 0; i < vals.size(); ++i) {
        if (i > 0) out << ' ';
        out << vals[i];
      }
    }
    out << '\n';
  }
  TASIF_CHECK(out.good(), "write to '" << path << "' failed");
}

}  // namespace tasif
