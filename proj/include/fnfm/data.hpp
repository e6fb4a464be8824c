#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/hash.hpp"
#include "fnfm/io.hpp"
#include "fnfm/schema.hpp"

namespace fnfm {

struct Slot {
  std::uint32_t index = 0;  // global feature index
  Real value = 0.0;

  bool operator==(const Slot&) const = default;
};

// One labeled sample: exactly one active slot per field, in field order.
struct EncodedExample {
  std::uint8_t label = 0;
  std::vector<Slot> slots;

  bool operator==(const EncodedExample&) const = default;
};

// Column-compressed example store. Slot position within an example equals
// the field index, so per-example field lookup is positional.
class Dataset {
 public:
  Dataset() = default;
  Dataset(FieldSchema schema, std::string source, std::string split)
      : schema_(std::move(schema)), source_(std::move(source)), split_(std::move(split)) {}

  void push_back(const EncodedExample& ex) {
    if (ex.slots.size() != schema_.field_count())
      throw ShapeError("example has " + std::to_string(ex.slots.size()) +
                       " slots, schema has " + std::to_string(schema_.field_count()) +
                       " fields");
    for (std::size_t t = 0; t < ex.slots.size(); ++t) {
      const auto& f = schema_.fields[t];
      if (ex.slots[t].index < f.index_base ||
          ex.slots[t].index >= f.index_base + f.slots())
        throw ShapeError("slot index out of field range: " + f.name);
    }
    if (ex.label > 1) throw ParseError("label must be 0 or 1");
    labels_.push_back(ex.label);
    slots_.insert(slots_.end(), ex.slots.begin(), ex.slots.end());
    positives_ += ex.label;
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t num_fields() const { return schema_.field_count(); }

  std::uint8_t label(std::size_t i) const { return labels_[i]; }
  std::span<const Slot> slots(std::size_t i) const {
    return {slots_.data() + i * num_fields(), num_fields()};
  }

  std::size_t positives() const { return positives_; }
  std::size_t negatives() const { return size() - positives_; }

  const FieldSchema& schema() const { return schema_; }
  const std::string& source() const { return source_; }
  const std::string& split() const { return split_; }

  const std::vector<std::uint8_t>& labels() const { return labels_; }

 private:
  FieldSchema schema_;
  std::vector<std::uint8_t> labels_;
  std::vector<Slot> slots_;
  std::string source_;
  std::string split_;
  std::size_t positives_ = 0;

  friend Dataset load_dataset_cache(const std::string&);
};

// ---------------------------------------------------------------------------
// CSV

using RawRow = std::vector<std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Minimal RFC-4180 field splitting: quoted fields, doubled quotes.
inline RawRow split_csv_line(const std::string& line) {
  RawRow out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // swallow CR of CRLF line endings
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

class CsvReader {
 public:
  explicit CsvReader(const std::string& path) : in_(path), path_(path) {
    if (!in_) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in_, line)) throw ParseError("empty csv: " + path);
    header_ = detail::split_csv_line(line);
  }

  const std::vector<std::string>& header() const { return header_; }

  bool next(RawRow& out) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_number_;
      if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
      out = detail::split_csv_line(line);
      return true;
    }
    return false;
  }

  std::vector<RawRow> read_all() {
    std::vector<RawRow> rows;
    RawRow r;
    while (next(r)) rows.push_back(std::move(r));
    return rows;
  }

  std::size_t line_number() const { return line_number_; }

 private:
  std::ifstream in_;
  std::string path_;
  std::vector<std::string> header_;
  std::size_t line_number_ = 0;
};

// ---------------------------------------------------------------------------
// Encoding

namespace detail {

inline Slot encode_cell(const FieldSpec& field, const std::string& raw_cell,
                        std::uint64_t hash_seed) {
  std::string cell = trim(raw_cell);
  if (field.kind == FieldKind::Categorical) {
    if (cell.empty())
      return {static_cast<std::uint32_t>(field.index_base), 1.0};  // OOV
    std::uint32_t bucket = hash_bucket(cell, field.cardinality, hash_seed);
    return {static_cast<std::uint32_t>(field.index_base + bucket), 1.0};
  }
  // numeric: full-string parse required
  std::size_t pos = 0;
  Real v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    throw ParseError("unparseable numeric for field " + field.name + ": '" + cell + "'");
  }
  if (pos != cell.size() || !std::isfinite(v))
    throw ParseError("unparseable numeric for field " + field.name + ": '" + cell + "'");
  return {static_cast<std::uint32_t>(field.index_base), v};
}

inline std::uint8_t parse_label(const std::string& raw) {
  std::string cell = trim(raw);
  if (cell == "0") return 0;
  if (cell == "1") return 1;
  throw ParseError("non-binary label: '" + cell + "'");
}

}  // namespace detail

// Encodes one row given as a column -> value map. Requires the label column
// and every schema field to be present.
inline EncodedExample encode_row(const FieldSchema& schema,
                                 const std::map<std::string, std::string>& raw,
                                 const std::string& label_col = "click") {
  auto lit = raw.find(label_col);
  if (lit == raw.end()) throw ParseError("missing label column: " + label_col);
  EncodedExample ex;
  ex.label = detail::parse_label(lit->second);
  ex.slots.reserve(schema.field_count());
  for (const auto& field : schema.fields) {
    auto it = raw.find(field.name);
    if (it == raw.end()) throw ParseError("missing column: " + field.name);
    ex.slots.push_back(detail::encode_cell(field, it->second, schema.hash_seed));
  }
  return ex;
}

// Positional encoder bound to one CSV header. Safe for concurrent use from
// multiple threads against a shared schema.
class RowEncoder {
 public:
  RowEncoder(const FieldSchema& schema, const std::vector<std::string>& header,
             const std::string& label_col)
      : schema_(&schema), expected_cols_(header.size()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == label_col) label_pos_ = static_cast<std::ptrdiff_t>(c);
    }
    field_pos_.reserve(schema.field_count());
    for (const auto& field : schema.fields) {
      auto it = std::find(header.begin(), header.end(), field.name);
      if (it == header.end())
        throw SchemaError("schema field not in header: " + field.name);
      field_pos_.push_back(static_cast<std::size_t>(it - header.begin()));
    }
  }

  bool has_label() const { return label_pos_ >= 0; }

  EncodedExample encode(const RawRow& row) const {
    if (label_pos_ < 0) throw ParseError("header has no label column");
    EncodedExample ex = encode_unlabeled(row);
    ex.label = detail::parse_label(row[static_cast<std::size_t>(label_pos_)]);
    return ex;
  }

  EncodedExample encode_unlabeled(const RawRow& row) const {
    if (row.size() != expected_cols_)
      throw ParseError("row has " + std::to_string(row.size()) + " columns, expected " +
                       std::to_string(expected_cols_));
    EncodedExample ex;
    ex.slots.reserve(schema_->field_count());
    for (std::size_t t = 0; t < schema_->field_count(); ++t)
      ex.slots.push_back(
          detail::encode_cell(schema_->fields[t], row[field_pos_[t]], schema_->hash_seed));
    return ex;
  }

 private:
  const FieldSchema* schema_;
  std::vector<std::size_t> field_pos_;
  std::ptrdiff_t label_pos_ = -1;
  std::size_t expected_cols_;
};

// ---------------------------------------------------------------------------
// Sampling and day-based splitting

namespace detail {
// Uniform double in [0,1) from the top 53 bits; pinned so sampling is
// reproducible independent of the standard library.
inline double unit_real(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}
}  // namespace detail

// Keeps each row independently with probability `rate`.
inline std::vector<RawRow> subsample(const std::vector<RawRow>& rows, double rate,
                                     std::uint64_t seed) {
  if (!(rate > 0.0) || rate > 1.0)
    throw ConfigError("subsample rate must be in (0,1], got " + std::to_string(rate));
  if (rate == 1.0) return rows;
  std::vector<RawRow> kept;
  Rng rng(seed);
  for (const auto& r : rows)
    if (detail::unit_real(rng) < rate) kept.push_back(r);
  return kept;
}

struct DaySplitConfig {
  std::string day_column = "hour";
  // Day key = first `day_prefix_len` characters of the day column
  // (YYMMDDHH -> YYMMDD). 0 means the whole cell is the day key.
  std::size_t day_prefix_len = 6;
  double last_day_val_fraction = 0.5;
  std::uint64_t seed = 0;
};

struct RowSplit {
  std::vector<std::size_t> train, validation, test;
};

// All rows of non-final days go to train; the final day is split into
// validation/test by a seeded draw at the configured fraction.
inline RowSplit split_rows_by_day(const std::vector<RawRow>& rows,
                                  std::size_t day_col_idx, const DaySplitConfig& cfg) {
  auto day_key = [&](const RawRow& r) -> std::string {
    if (day_col_idx >= r.size()) throw ParseError("row missing day column");
    std::string cell = detail::trim(r[day_col_idx]);
    if (cfg.day_prefix_len == 0 || cell.size() <= cfg.day_prefix_len) return cell;
    return cell.substr(0, cfg.day_prefix_len);
  };
  std::set<std::string> days;
  std::vector<std::string> keys;
  keys.reserve(rows.size());
  for (const auto& r : rows) {
    keys.push_back(day_key(r));
    days.insert(keys.back());
  }
  if (days.size() < 2)
    throw SplitError("need at least 2 distinct days, got " + std::to_string(days.size()));
  const std::string& last = *days.rbegin();
  RowSplit split;
  Rng rng(cfg.seed);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (keys[i] != last) {
      split.train.push_back(i);
    } else if (detail::unit_real(rng) < cfg.last_day_val_fraction) {
      split.validation.push_back(i);
    } else {
      split.test.push_back(i);
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// Ingest pipeline

struct IngestConfig {
  std::string label_col = "click";
  std::set<std::string> ignore_cols = {"id"};
  std::set<std::string> numeric_cols;
  std::map<std::string, std::uint64_t> hash_buckets;
  std::uint64_t default_buckets = 100000;
  std::uint64_t hash_seed = 0;
  double subsample_rate = 1.0;
  std::uint64_t subsample_seed = 0;
  DaySplitConfig split;
};

struct SplitDatasets {
  Dataset train, validation, test;
  std::size_t rejected = 0;
  std::size_t total_rows = 0;
};

namespace detail {
inline void encode_subset(const std::vector<RawRow>& rows,
                          const std::vector<std::size_t>& idx, const RowEncoder& enc,
                          Dataset& out, std::size_t& rejected) {
  for (std::size_t i : idx) {
    try {
      out.push_back(enc.encode(rows[i]));
    } catch (const ParseError&) {
      ++rejected;  // malformed rows are dropped and counted, never imputed
    }
  }
}
}  // namespace detail

inline SplitDatasets load_csv_datasets(const std::string& path, const IngestConfig& cfg) {
  CsvReader reader(path);
  FieldSchema schema =
      infer_schema(reader.header(), cfg.label_col, cfg.ignore_cols, cfg.numeric_cols,
                   cfg.hash_buckets, cfg.default_buckets, cfg.hash_seed);
  std::vector<RawRow> rows = reader.read_all();
  rows = subsample(rows, cfg.subsample_rate, cfg.subsample_seed);

  auto it = std::find(reader.header().begin(), reader.header().end(), cfg.split.day_column);
  if (it == reader.header().end())
    throw SchemaError("day column not in header: " + cfg.split.day_column);
  RowSplit split = split_rows_by_day(
      rows, static_cast<std::size_t>(it - reader.header().begin()), cfg.split);

  RowEncoder enc(schema, reader.header(), cfg.label_col);
  SplitDatasets out{Dataset(schema, path, "train"), Dataset(schema, path, "validation"),
                    Dataset(schema, path, "test")};
  out.total_rows = rows.size();
  detail::encode_subset(rows, split.train, enc, out.train, out.rejected);
  detail::encode_subset(rows, split.validation, enc, out.validation, out.rejected);
  detail::encode_subset(rows, split.test, enc, out.test, out.rejected);
  return out;
}

// Encodes a whole CSV against an existing schema without splitting. Any
// malformed row is an error here: callers of this path (eval, predict) need
// one output per input row.
inline Dataset encode_csv(const std::string& path, const FieldSchema& schema,
                          const std::string& label_col, const std::string& split_tag) {
  CsvReader reader(path);
  RowEncoder enc(schema, reader.header(), label_col);
  Dataset out(schema, path, split_tag);
  RawRow row;
  while (reader.next(row)) {
    out.push_back(enc.has_label() ? enc.encode(row) : enc.encode_unlabeled(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoded-dataset cache (versioned binary)

inline constexpr char kDatasetMagic[8] = {'F', 'N', 'F', 'M', 'D', 'A', 'T', 'A'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void write_schema(ByteWriter& w, const FieldSchema& s) {
  w.u32(static_cast<std::uint32_t>(s.fields.size()));
  for (const auto& f : s.fields) {
    w.str(f.name);
    w.u8(static_cast<std::uint8_t>(f.kind));
    w.u64(f.cardinality);
    w.u64(f.index_base);
  }
  w.u64(s.feature_count);
  w.u64(s.hash_seed);
}

inline FieldSchema read_schema(ByteReader& r) {
  FieldSchema s;
  std::uint32_t nf = r.u32();
  s.fields.reserve(nf);
  for (std::uint32_t i = 0; i < nf; ++i) {
    FieldSpec f;
    f.name = r.str();
    f.kind = static_cast<FieldKind>(r.u8());
    f.cardinality = r.u64();
    f.index_base = r.u64();
    s.fields.push_back(std::move(f));
  }
  s.feature_count = r.u64();
  s.hash_seed = r.u64();
  s.validate();
  return s;
}

inline void save_dataset_cache(const Dataset& ds, const std::string& path) {
  ByteWriter w;
  w.bytes(kDatasetMagic, 8);
  w.u32(kDatasetVersion);
  write_schema(w, ds.schema());
  w.str(ds.source());
  w.str(ds.split());
  w.u64(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.u8(ds.label(i));
    for (const Slot& s : ds.slots(i)) {
      w.u32(s.index);
      w.f64(s.value);
    }
  }
  write_file_atomic(path, w);
}

inline Dataset load_dataset_cache(const std::string& path) {
  std::vector<char> buf = read_file_checked(path);
  ByteReader r(buf);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kDatasetMagic, 8) != 0)
    throw FormatError("not a dataset cache file: " + path);
  std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw VersionError("unsupported dataset cache version " + std::to_string(version));
  FieldSchema schema = read_schema(r);
  std::string source = r.str();
  std::string split = r.str();
  Dataset ds(schema, source, split);
  std::uint64_t n = r.u64();
  EncodedExample ex;
  ex.slots.resize(schema.field_count());
  for (std::uint64_t i = 0; i < n; ++i) {
    ex.label = r.u8();
    for (auto& s : ex.slots) {
      s.index = r.u32();
      s.value = r.f64();
    }
    ds.push_back(ex);
  }
  return ds;
}

}  // namespace fnfm
