#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "fnfm/common.hpp"

namespace fnfm {

enum class FieldKind : std::uint8_t { Categorical = 0, Numeric = 1 };

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::Categorical;
  // Number of feature slots owned by this field. Categorical fields have
  // cardinality >= 2 (slot 0 reserved for OOV); numeric fields own one slot.
  std::uint64_t cardinality = 0;
  // Offset of this field's slots in the global feature space.
  std::uint64_t index_base = 0;

  std::uint64_t slots() const {
    return kind == FieldKind::Numeric ? 1 : cardinality;
  }

  bool operator==(const FieldSpec&) const = default;
};

// The coordinate system shared by datasets, embeddings and models: an
// ordered list of fields whose slots partition [0, feature_count).
struct FieldSchema {
  std::vector<FieldSpec> fields;
  std::uint64_t feature_count = 0;
  std::uint64_t hash_seed = 0;

  std::size_t field_count() const { return fields.size(); }

  // Field owning a global feature index.
  std::size_t field_of_feature(std::uint64_t feature) const {
    for (std::size_t t = fields.size(); t-- > 0;) {
      if (feature >= fields[t].index_base) return t;
    }
    throw ShapeError("feature index below first field base");
  }

  void validate() const {
    if (fields.size() < 2) throw SchemaError("schema needs at least 2 fields");
    std::uint64_t base = 0;
    std::set<std::string> names;
    for (const auto& f : fields) {
      if (!names.insert(f.name).second)
        throw SchemaError("duplicate field name: " + f.name);
      if (f.kind == FieldKind::Categorical && f.cardinality < 2)
        throw SchemaError("categorical cardinality must be >= 2: " + f.name);
      if (f.index_base != base)
        throw SchemaError("index_base of " + f.name + " is not the prefix sum");
      base += f.slots();
    }
    if (feature_count != base)
      throw SchemaError("feature_count does not match total slots");
  }

  bool operator==(const FieldSchema&) const = default;
};

// Builds a schema from feature field descriptions in declaration order.
// `cardinality` already includes the OOV slot for categorical fields.
inline FieldSchema make_schema(
    const std::vector<std::pair<std::string, std::uint64_t>>& categorical,
    const std::vector<std::string>& numeric = {}, std::uint64_t hash_seed = 0) {
  FieldSchema s;
  s.hash_seed = hash_seed;
  std::uint64_t base = 0;
  for (const auto& [name, card] : categorical) {
    s.fields.push_back({name, FieldKind::Categorical, card, base});
    base += card;
  }
  for (const auto& name : numeric) {
    s.fields.push_back({name, FieldKind::Numeric, 1, base});
    base += 1;
  }
  s.feature_count = base;
  s.validate();
  return s;
}

// Derives a schema from a CSV header. Every column except the label and the
// ignored ones becomes a field, in header order. Categorical fields get
// hash_buckets(column) + 1 slots (slot 0 is OOV).
inline FieldSchema infer_schema(const std::vector<std::string>& header,
                                const std::string& label_col,
                                const std::set<std::string>& ignore_cols,
                                const std::set<std::string>& numeric_cols,
                                const std::map<std::string, std::uint64_t>& hash_buckets,
                                std::uint64_t default_buckets,
                                std::uint64_t hash_seed = 0) {
  std::set<std::string> seen;
  for (const auto& col : header) {
    if (!seen.insert(col).second) throw SchemaError("duplicate column name: " + col);
  }
  FieldSchema s;
  s.hash_seed = hash_seed;
  std::uint64_t base = 0;
  for (const auto& col : header) {
    if (col == label_col || ignore_cols.count(col)) continue;
    FieldSpec f;
    f.name = col;
    f.index_base = base;
    if (numeric_cols.count(col)) {
      f.kind = FieldKind::Numeric;
      f.cardinality = 1;
    } else {
      auto it = hash_buckets.find(col);
      std::uint64_t buckets = it != hash_buckets.end() ? it->second : default_buckets;
      if (buckets == 0) throw SchemaError("hash bucket count must be positive: " + col);
      f.kind = FieldKind::Categorical;
      f.cardinality = buckets + 1;
    }
    base += f.slots();
    s.fields.push_back(std::move(f));
  }
  s.feature_count = base;
  if (s.fields.size() < 2)
    throw SchemaError("need at least 2 feature columns, got " +
                      std::to_string(s.fields.size()));
  s.validate();
  return s;
}

}  // namespace fnfm
