// Deterministic synthetic interaction sets used by the harness tests and the
// directional experiments.
#pragma once

#include <string>
#include <vector>

#include "tasif/data.hpp"

namespace tasif {

// 50 users walking a shared 20-item ring: the next item is always
// ring-successor of the current one, and a parity attribute (even/odd) tags
// each item. Fully memorizable by a small model.
std::vector<RawInteraction> memorization_records();

// Time-signal set: 40 regimes, one per 30-day span, six users each. Context
// items are i.i.d. fillers shared across regimes, so item identity carries no
// regime information; the regime's marker item is recoverable only through
// the time-span token. Half the users (type a) place the marker at the
// second-to-last position, where leave-one-out training and validation see
// it; the other half (type b) place it last, giving a leak-free test target.
std::vector<RawInteraction> time_signal_records(u64 seed = 7);

// Column layouts matching the generators above.
ColumnSchema memorization_schema();
ColumnSchema time_signal_schema();

// Writes records as a TSV with a header row; multi-valued attribute cells are
// space-joined. Reload through load_interactions with the same schema.
void write_interactions_tsv(const std::string& path, const std::vector<RawInteraction>& records,
                            const ColumnSchema& schema);

}  // namespace tasif
