#pragma once

// Experiment profiles: built-in defaults, overlaid by a JSON profile file,
// overlaid by dotted-key command-line overrides. Only this header (and the
// CLI) depends on the vendored JSON library; the numeric core does not.

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fnfm/common.hpp"
#include "fnfm/data.hpp"
#include "fnfm/model.hpp"
#include "fnfm/synth.hpp"
#include "fnfm/train.hpp"

namespace fnfm {

using Json = nlohmann::json;

inline Json default_config() {
  return Json{
      {"data",
       {{"train", ""},
        {"val", ""},
        {"test", ""},
        {"cache", ""},
        {"label_col", "click"},
        {"ignore_cols", {"id"}},
        {"numeric_cols", Json::array()},
        {"hash_buckets", Json::object()},
        {"default_buckets", 100000},
        {"hash_seed", 0},
        {"subsample_rate", 1.0},
        {"subsample_seed", 0},
        {"day_column", "hour"},
        {"day_prefix_len", 6},
        {"last_day_val_fraction", 0.5},
        {"split_seed", 0}}},
      {"synth",
       {{"enabled", false},
        {"num_fields", 6},
        {"cardinality", 50},
        {"d_true", 4},
        {"noise", 1.0},
        {"embed_scale", 0.5},
        {"field_scale_spread", 0.6},
        {"linear_scale", 0.3},
        {"seed", 1},
        {"n_train", 50000},
        {"n_val", 10000},
        {"n_test", 10000}}},
      {"model",
       {{"kind", "fnfm"},
        {"embedding_dim", 4},
        {"hidden", {256, 256, 256}},
        {"batchnorm", true},
        {"interaction", "concat"}}},
      {"optimizer",
       {{"kind", "adam"}, {"lr", 0.001}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
      {"train",
       {{"epochs", 20},
        {"patience", 3},
        {"batch_size", 4096},
        {"eval_every", 1},
        {"l2", 1e-5},
        {"l2_linear", 0.0},
        {"seed", 1},
        {"probe_size", 1024}}},
      {"grid",
       {{"kinds", {"lr", "fm", "ffm", "nfm", "deepfm", "fnfm"}},
        {"plain_dims", {4, 8, 16, 32, 64}},
        {"field_dims", {4}},
        {"hidden_layouts", {{128, 128}, {128, 128, 128}, {256, 256}, {256, 256, 256}}},
        {"batchnorm", true},
        {"fm_ffm_optimizer", {{"kind", "adagrad"}, {"lr", 0.1}}},
        {"default_optimizer", {{"kind", "adam"}, {"lr", 0.0001}}}}},
      {"profile", ""}};
}

namespace detail {

inline void merge_json(Json& base, const Json& over) {
  if (!over.is_object() || !base.is_object()) {
    base = over;
    return;
  }
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
      merge_json(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

// "optimizer.lr=0.01" — the value parses as JSON when it can, otherwise it
// is taken as a string.
inline void apply_override(Json& cfg, const std::string& kv) {
  std::size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + kv);
  std::string path = kv.substr(0, eq);
  std::string raw = kv.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  Json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    std::size_t dotpos = path.find('.', start);
    std::string key = path.substr(start, dotpos - start);
    if (key.empty()) throw ConfigError("empty key segment in override: " + kv);
    if (dotpos == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dotpos + 1;
  }
}

}  // namespace detail

inline Json load_config(const std::string& profile_path,
                        const std::vector<std::string>& overrides) {
  Json cfg = default_config();
  if (!profile_path.empty()) {
    std::ifstream in(profile_path);
    if (!in) throw ConfigError("cannot open profile: " + profile_path);
    Json profile = Json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (profile.is_discarded())
      throw ConfigError("profile is not valid JSON: " + profile_path);
    detail::merge_json(cfg, profile);
  }
  for (const std::string& kv : overrides) detail::apply_override(cfg, kv);
  return cfg;
}

struct ResolvedConfig {
  Json raw;
  std::string train_csv, val_csv, test_csv, cache_path;
  IngestConfig ingest;
  bool synth_enabled = false;
  SyntheticSpec synth;
  TrainConfig train;
  GridConfig grid;
};

inline ResolvedConfig parse_config(const Json& j) {
  try {
    ResolvedConfig r;
    r.raw = j;
    const Json& data = j.at("data");
    r.train_csv = data.at("train").get<std::string>();
    r.val_csv = data.at("val").get<std::string>();
    r.test_csv = data.at("test").get<std::string>();
    r.cache_path = data.at("cache").get<std::string>();
    r.ingest.label_col = data.at("label_col").get<std::string>();
    r.ingest.ignore_cols.clear();
    for (const auto& c : data.at("ignore_cols")) r.ingest.ignore_cols.insert(c.get<std::string>());
    r.ingest.numeric_cols.clear();
    for (const auto& c : data.at("numeric_cols"))
      r.ingest.numeric_cols.insert(c.get<std::string>());
    r.ingest.hash_buckets.clear();
    for (auto it = data.at("hash_buckets").begin(); it != data.at("hash_buckets").end(); ++it)
      r.ingest.hash_buckets[it.key()] = it.value().get<std::uint64_t>();
    r.ingest.default_buckets = data.at("default_buckets").get<std::uint64_t>();
    r.ingest.hash_seed = data.at("hash_seed").get<std::uint64_t>();
    r.ingest.subsample_rate = data.at("subsample_rate").get<double>();
    r.ingest.subsample_seed = data.at("subsample_seed").get<std::uint64_t>();
    r.ingest.split.day_column = data.at("day_column").get<std::string>();
    r.ingest.split.day_prefix_len = data.at("day_prefix_len").get<std::size_t>();
    r.ingest.split.last_day_val_fraction = data.at("last_day_val_fraction").get<double>();
    r.ingest.split.seed = data.at("split_seed").get<std::uint64_t>();

    const Json& synth = j.at("synth");
    r.synth_enabled = synth.at("enabled").get<bool>();
    r.synth.num_fields = synth.at("num_fields").get<std::size_t>();
    r.synth.cardinality = synth.at("cardinality").get<std::uint64_t>();
    r.synth.d_true = synth.at("d_true").get<std::size_t>();
    r.synth.noise = synth.at("noise").get<Real>();
    r.synth.embed_scale = synth.at("embed_scale").get<Real>();
    r.synth.field_scale_spread = synth.at("field_scale_spread").get<Real>();
    r.synth.linear_scale = synth.at("linear_scale").get<Real>();
    r.synth.seed = synth.at("seed").get<std::uint64_t>();
    r.synth.n_train = synth.at("n_train").get<std::size_t>();
    r.synth.n_val = synth.at("n_val").get<std::size_t>();
    r.synth.n_test = synth.at("n_test").get<std::size_t>();

    const Json& model = j.at("model");
    r.train.model.kind = parse_model_kind(model.at("kind").get<std::string>());
    r.train.model.embedding_dim = model.at("embedding_dim").get<std::size_t>();
    r.train.model.hidden = model.at("hidden").get<std::vector<std::size_t>>();
    r.train.model.use_batchnorm = model.at("batchnorm").get<bool>();
    std::string inter = model.at("interaction").get<std::string>();
    if (inter == "concat")
      r.train.model.interaction = InteractionMode::Concat;
    else if (inter == "pool")
      r.train.model.interaction = InteractionMode::Pool;
    else
      throw ConfigError("model.interaction must be concat or pool");

    const Json& opt = j.at("optimizer");
    r.train.optimizer.kind = parse_optimizer_kind(opt.at("kind").get<std::string>());
    r.train.optimizer.lr = opt.at("lr").get<Real>();
    r.train.optimizer.beta1 = opt.at("beta1").get<Real>();
    r.train.optimizer.beta2 = opt.at("beta2").get<Real>();
    r.train.optimizer.eps = opt.at("eps").get<Real>();

    const Json& train = j.at("train");
    r.train.epochs = train.at("epochs").get<std::size_t>();
    r.train.patience = train.at("patience").get<std::size_t>();
    r.train.batch_size = train.at("batch_size").get<std::size_t>();
    r.train.eval_every = train.at("eval_every").get<std::size_t>();
    r.train.l2_embedding = train.at("l2").get<Real>();
    r.train.l2_linear = train.at("l2_linear").get<Real>();
    r.train.seed = train.at("seed").get<std::uint64_t>();
    r.train.probe_size = train.at("probe_size").get<std::size_t>();
    r.train.profile = j.at("profile").get<std::string>();

    const Json& grid = j.at("grid");
    r.grid.kinds.clear();
    for (const auto& k : grid.at("kinds"))
      r.grid.kinds.push_back(parse_model_kind(k.get<std::string>()));
    r.grid.plain_dims = grid.at("plain_dims").get<std::vector<std::size_t>>();
    r.grid.field_dims = grid.at("field_dims").get<std::vector<std::size_t>>();
    r.grid.hidden_layouts =
        grid.at("hidden_layouts").get<std::vector<std::vector<std::size_t>>>();
    r.grid.use_batchnorm = grid.at("batchnorm").get<bool>();
    r.grid.fm_ffm_optimizer.kind =
        parse_optimizer_kind(grid.at("fm_ffm_optimizer").at("kind").get<std::string>());
    r.grid.fm_ffm_optimizer.lr = grid.at("fm_ffm_optimizer").at("lr").get<Real>();
    r.grid.default_optimizer.kind =
        parse_optimizer_kind(grid.at("default_optimizer").at("kind").get<std::string>());
    r.grid.default_optimizer.lr = grid.at("default_optimizer").at("lr").get<Real>();
    return r;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
}

inline ResolvedConfig resolve_config(const std::string& profile_path,
                                     const std::vector<std::string>& overrides) {
  return parse_config(load_config(profile_path, overrides));
}

}  // namespace fnfm
