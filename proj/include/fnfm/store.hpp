#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "fnfm/common.hpp"
#include "fnfm/data.hpp"
#include "fnfm/interactions.hpp"
#include "fnfm/io.hpp"
#include "fnfm/model.hpp"

namespace fnfm {

inline constexpr char kModelMagic[8] = {'F', 'N', 'F', 'M', 'M', 'O', 'D', 'L'};
inline constexpr std::uint32_t kModelVersion = 1;

struct LoadedModel {
  ModelParams params;
  ModelSpec spec;
  FieldSchema schema;
};

// Cross-checks parameter shapes against what the ModelSpec and schema imply.
inline void validate_params(const ModelParams& p, const ModelSpec& spec,
                            const FieldSchema& schema) {
  spec.validate(schema);
  std::size_t n = schema.feature_count;
  std::size_t f = schema.field_count();
  if (p.linear.w.size() != n) throw ShapeError("linear weight count != feature count");
  if (spec.uses_plain_embeddings()) {
    if (!p.plain || p.plain->feature_count != n || p.plain->dim != spec.embedding_dim ||
        p.plain->table.size() != n * spec.embedding_dim)
      throw ShapeError("plain embedding table shape mismatch");
  } else if (p.plain) {
    throw ShapeError("unexpected plain embedding table");
  }
  if (spec.uses_field_embeddings()) {
    if (!p.field || p.field->feature_count != n || p.field->num_fields != f ||
        p.field->dim != spec.embedding_dim ||
        p.field->table.size() != n * f * spec.embedding_dim)
      throw ShapeError("field-aware embedding table shape mismatch");
  } else if (p.field) {
    throw ShapeError("unexpected field-aware embedding table");
  }
  if (spec.has_mlp()) {
    if (p.mlp.size() != spec.hidden.size() + 1) throw ShapeError("mlp layer count mismatch");
    std::size_t in = spec.mlp_input_width(schema);
    for (std::size_t k = 0; k < spec.hidden.size(); ++k) {
      if (p.mlp[k].W.rows() != spec.hidden[k] || p.mlp[k].W.cols() != in ||
          p.mlp[k].b.size() != spec.hidden[k])
        throw ShapeError("mlp layer " + std::to_string(k) + " shape mismatch");
      in = spec.hidden[k];
    }
    const DenseLayer& head = p.mlp.back();
    if (head.W.rows() != 1 || head.W.cols() != in || head.b.size() != 1)
      throw ShapeError("mlp head shape mismatch");
    if (spec.use_batchnorm) {
      if (!p.bn || p.bn->width() != spec.mlp_input_width(schema))
        throw ShapeError("batchnorm width mismatch");
    } else if (p.bn) {
      throw ShapeError("unexpected batchnorm block");
    }
  } else if (!p.mlp.empty() || p.bn) {
    throw ShapeError("unexpected mlp block");
  }
}

namespace detail {

inline void write_block(ByteWriter& w, const std::string& tag,
                        std::span<const std::uint64_t> dims,
                        std::span<const Real> payload) {
  w.str(tag);
  w.u32(static_cast<std::uint32_t>(dims.size()));
  std::uint64_t expect = 1;
  for (std::uint64_t d : dims) {
    w.u64(d);
    expect *= d;
  }
  if (expect != payload.size()) throw ShapeError("block payload does not match dims: " + tag);
  for (Real v : payload) w.f64(v);
}

inline std::vector<Real> read_block(ByteReader& r, const std::string& want_tag,
                                    std::span<const std::uint64_t> want_dims) {
  std::string tag = r.str();
  if (tag != want_tag)
    throw FormatError("unexpected parameter block '" + tag + "', wanted '" + want_tag + "'");
  std::uint32_t ndim = r.u32();
  if (ndim != want_dims.size()) throw ShapeError("block rank mismatch: " + tag);
  std::uint64_t count = 1;
  for (std::uint64_t want : want_dims) {
    std::uint64_t d = r.u64();
    if (d != want) throw ShapeError("block dim mismatch: " + tag);
    count *= d;
  }
  std::vector<Real> payload(count);
  for (auto& v : payload) v = r.f64();
  return payload;
}

}  // namespace detail

// Atomic, checksummed, little-endian model file. Layout: magic, version,
// schema, spec, the canonical pair enumeration, then tagged parameter
// blocks (BN running statistics included, so the load is inference-ready).
inline void save_model(const ModelParams& params, const ModelSpec& spec,
                       const FieldSchema& schema, const std::string& path) {
  validate_params(params, spec, schema);
  ByteWriter w;
  w.bytes(kModelMagic, 8);
  w.u32(kModelVersion);
  write_schema(w, schema);

  w.u8(static_cast<std::uint8_t>(spec.kind));
  w.u64(spec.embedding_dim);
  w.u32(static_cast<std::uint32_t>(spec.hidden.size()));
  for (std::size_t h : spec.hidden) w.u64(h);
  w.u8(spec.use_batchnorm ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(spec.interaction));

  auto pairs = canonical_pairs(schema.field_count());
  w.u32(static_cast<std::uint32_t>(pairs.size()));
  for (auto [i, j] : pairs) {
    w.u32(i);
    w.u32(j);
  }

  std::uint32_t n_blocks = 2;  // w0, w
  if (params.plain) ++n_blocks;
  if (params.field) ++n_blocks;
  n_blocks += static_cast<std::uint32_t>(2 * params.mlp.size());
  if (params.bn) n_blocks += 6;
  w.u32(n_blocks);

  std::uint64_t n = schema.feature_count;
  std::uint64_t f = schema.field_count();
  std::uint64_t d = spec.embedding_dim;
  detail::write_block(w, "w0", std::vector<std::uint64_t>{1},
                      std::span<const Real>{&params.linear.w0, 1});
  detail::write_block(w, "w", std::vector<std::uint64_t>{n}, params.linear.w);
  if (params.plain)
    detail::write_block(w, "plain_emb", std::vector<std::uint64_t>{n, d},
                        params.plain->table);
  if (params.field)
    detail::write_block(w, "field_emb", std::vector<std::uint64_t>{n, f, d},
                        params.field->table);
  for (std::size_t k = 0; k < params.mlp.size(); ++k) {
    bool head = k + 1 == params.mlp.size();
    std::string base = head ? "head" : "mlp" + std::to_string(k);
    const DenseLayer& layer = params.mlp[k];
    detail::write_block(w, base + ".W",
                        std::vector<std::uint64_t>{layer.W.rows(), layer.W.cols()},
                        layer.W.data());
    detail::write_block(w, base + ".b", std::vector<std::uint64_t>{layer.b.size()},
                        layer.b);
  }
  if (params.bn) {
    std::uint64_t width = params.bn->width();
    detail::write_block(w, "bn.gamma", std::vector<std::uint64_t>{width}, params.bn->gamma);
    detail::write_block(w, "bn.beta", std::vector<std::uint64_t>{width}, params.bn->beta);
    detail::write_block(w, "bn.running_mean", std::vector<std::uint64_t>{width},
                        params.bn->running_mean);
    detail::write_block(w, "bn.running_var", std::vector<std::uint64_t>{width},
                        params.bn->running_var);
    detail::write_block(w, "bn.momentum", std::vector<std::uint64_t>{1},
                        std::span<const Real>{&params.bn->momentum, 1});
    detail::write_block(w, "bn.epsilon", std::vector<std::uint64_t>{1},
                        std::span<const Real>{&params.bn->epsilon, 1});
  }
  write_file_atomic(path, w);
}

inline LoadedModel load_model(const std::string& path) {
  std::vector<char> buf = read_file_checked(path);
  ByteReader r(buf);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kModelMagic, 8) != 0)
    throw FormatError("not a model file: " + path);
  std::uint32_t version = r.u32();
  if (version != kModelVersion)
    throw VersionError("unsupported model format version " + std::to_string(version));

  LoadedModel m;
  m.schema = read_schema(r);
  m.spec.kind = static_cast<ModelKind>(r.u8());
  m.spec.embedding_dim = r.u64();
  std::uint32_t n_hidden = r.u32();
  m.spec.hidden.resize(n_hidden);
  for (auto& h : m.spec.hidden) h = r.u64();
  m.spec.use_batchnorm = r.u8() != 0;
  m.spec.interaction = static_cast<InteractionMode>(r.u8());
  m.spec.validate(m.schema);

  auto pairs = canonical_pairs(m.schema.field_count());
  std::uint32_t n_pairs_stored = r.u32();
  if (n_pairs_stored != pairs.size()) throw FormatError("pair enumeration count mismatch");
  for (auto [i, j] : pairs)
    if (r.u32() != i || r.u32() != j) throw FormatError("non-canonical pair order in file");

  std::uint32_t n_blocks = r.u32();
  std::uint64_t n = m.schema.feature_count;
  std::uint64_t f = m.schema.field_count();
  std::uint64_t d = m.spec.embedding_dim;
  std::uint32_t expect_blocks =
      2 + (m.spec.uses_plain_embeddings() ? 1 : 0) + (m.spec.uses_field_embeddings() ? 1 : 0);
  std::size_t n_layers = m.spec.has_mlp() ? m.spec.hidden.size() + 1 : 0;
  expect_blocks += static_cast<std::uint32_t>(2 * n_layers);
  bool has_bn = m.spec.has_mlp() && m.spec.use_batchnorm;
  if (has_bn) expect_blocks += 6;
  if (n_blocks != expect_blocks) throw FormatError("parameter block count mismatch");

  m.params.linear.w0 = detail::read_block(r, "w0", std::vector<std::uint64_t>{1})[0];
  m.params.linear.w = detail::read_block(r, "w", std::vector<std::uint64_t>{n});
  if (m.spec.uses_plain_embeddings()) {
    m.params.plain = make_plain_embeddings(n, d);
    m.params.plain->table = detail::read_block(r, "plain_emb", std::vector<std::uint64_t>{n, d});
  }
  if (m.spec.uses_field_embeddings()) {
    m.params.field = make_field_aware_embeddings(n, f, d);
    m.params.field->table =
        detail::read_block(r, "field_emb", std::vector<std::uint64_t>{n, f, d});
  }
  std::uint64_t in = m.spec.has_mlp() ? m.spec.mlp_input_width(m.schema) : 0;
  for (std::size_t k = 0; k < n_layers; ++k) {
    bool head = k + 1 == n_layers;
    std::string base = head ? "head" : "mlp" + std::to_string(k);
    std::uint64_t out = head ? 1 : m.spec.hidden[k];
    DenseLayer layer;
    layer.W = Matrix(out, in);
    layer.W.data() = detail::read_block(r, base + ".W", std::vector<std::uint64_t>{out, in});
    layer.b = detail::read_block(r, base + ".b", std::vector<std::uint64_t>{out});
    m.params.mlp.push_back(std::move(layer));
    in = out;
  }
  if (has_bn) {
    std::uint64_t width = m.spec.mlp_input_width(m.schema);
    BatchNormLayer bn;
    bn.gamma = detail::read_block(r, "bn.gamma", std::vector<std::uint64_t>{width});
    bn.beta = detail::read_block(r, "bn.beta", std::vector<std::uint64_t>{width});
    bn.running_mean =
        detail::read_block(r, "bn.running_mean", std::vector<std::uint64_t>{width});
    bn.running_var =
        detail::read_block(r, "bn.running_var", std::vector<std::uint64_t>{width});
    bn.momentum = detail::read_block(r, "bn.momentum", std::vector<std::uint64_t>{1})[0];
    bn.epsilon = detail::read_block(r, "bn.epsilon", std::vector<std::uint64_t>{1})[0];
    m.params.bn = std::move(bn);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after parameter blocks");
  validate_params(m.params, m.spec, m.schema);
  return m;
}

}  // namespace fnfm
