// Layered experiment configuration: defaults, JSON profiles, dotted-key
// overrides, and the mapping into the typed config structs.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fnfm/config.hpp"

namespace {

using namespace fnfm;

std::string tmp_profile(const std::string& name, const std::string& text) {
  std::string path =
      (std::filesystem::path(testing::TempDir()) / ("fnfm_cfg_" + name)).string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  return path;
}

TEST(Defaults, ResolveToTheStockExperiment) {
  ResolvedConfig r = parse_config(default_config());
  EXPECT_EQ(r.train.model.kind, ModelKind::FNFM);
  EXPECT_EQ(r.train.model.embedding_dim, 4u);
  EXPECT_EQ(r.train.model.hidden, (std::vector<std::size_t>{256, 256, 256}));
  EXPECT_TRUE(r.train.model.use_batchnorm);
  EXPECT_EQ(r.train.model.interaction, InteractionMode::Concat);
  EXPECT_EQ(r.train.optimizer.kind, OptimizerKind::Adam);
  EXPECT_DOUBLE_EQ(r.train.optimizer.lr, 0.001);
  EXPECT_EQ(r.train.batch_size, 4096u);
  EXPECT_DOUBLE_EQ(r.train.l2_embedding, 1e-5);
  EXPECT_DOUBLE_EQ(r.train.l2_linear, 0.0);
  EXPECT_EQ(r.ingest.label_col, "click");
  EXPECT_EQ(r.ingest.split.day_column, "hour");
  EXPECT_EQ(r.ingest.split.day_prefix_len, 6u);
  EXPECT_EQ(r.ingest.default_buckets, 100000u);
  EXPECT_FALSE(r.synth_enabled);
  EXPECT_EQ(r.grid.kinds.size(), 6u);
  EXPECT_EQ(r.grid.fm_ffm_optimizer.kind, OptimizerKind::AdaGrad);
  EXPECT_DOUBLE_EQ(r.grid.fm_ffm_optimizer.lr, 0.1);
  EXPECT_EQ(r.grid.default_optimizer.kind, OptimizerKind::Adam);
}

TEST(Merge, OverlaysNestedObjectsAndReplacesLeaves) {
  Json base = {{"a", {{"x", 1}, {"y", 2}}}, {"b", 3}, {"c", {{"deep", {{"k", "v"}}}}}};
  Json over = {{"a", {{"y", 20}}}, {"b", 30}, {"c", {{"deep", 7}}}};
  detail::merge_json(base, over);
  EXPECT_EQ(base["a"]["x"], 1);       // untouched sibling survives
  EXPECT_EQ(base["a"]["y"], 20);      // leaf replaced
  EXPECT_EQ(base["b"], 30);
  EXPECT_EQ(base["c"]["deep"], 7);    // non-object replaces an object wholesale
}

TEST(Overrides, DottedPathsParseValuesAsJsonWhenPossible) {
  Json cfg = default_config();
  detail::apply_override(cfg, "optimizer.lr=0.01");
  detail::apply_override(cfg, "model.hidden=[64,32]");
  detail::apply_override(cfg, "model.kind=fm");
  detail::apply_override(cfg, "train.epochs=3");
  detail::apply_override(cfg, "synth.enabled=true");
  EXPECT_DOUBLE_EQ(cfg["optimizer"]["lr"].get<double>(), 0.01);
  EXPECT_EQ(cfg["model"]["hidden"], Json({64, 32}));
  EXPECT_EQ(cfg["model"]["kind"], "fm");  // bare word falls back to a string
  EXPECT_EQ(cfg["train"]["epochs"], 3);
  EXPECT_EQ(cfg["synth"]["enabled"], true);

  ResolvedConfig r = parse_config(cfg);
  EXPECT_EQ(r.train.model.kind, ModelKind::FM);
  EXPECT_EQ(r.train.model.hidden, (std::vector<std::size_t>{64, 32}));
  EXPECT_EQ(r.train.epochs, 3u);
  EXPECT_TRUE(r.synth_enabled);
}

TEST(Overrides, MalformedKeysAreRejected) {
  Json cfg = default_config();
  EXPECT_THROW(detail::apply_override(cfg, "no_equals_sign"), ConfigError);
  EXPECT_THROW(detail::apply_override(cfg, "=5"), ConfigError);
  EXPECT_THROW(detail::apply_override(cfg, "a..b=1"), ConfigError);
}

TEST(Load, ProfileBeatsDefaultsAndOverridesBeatProfile) {
  std::string path = tmp_profile(
      "layered.json",
      R"({"optimizer": {"lr": 0.5}, "model": {"kind": "ffm", "embedding_dim": 8}})");
  Json cfg = load_config(path, {"optimizer.lr=0.25"});
  EXPECT_DOUBLE_EQ(cfg["optimizer"]["lr"].get<double>(), 0.25);  // override wins
  EXPECT_EQ(cfg["model"]["kind"], "ffm");                        // profile wins
  EXPECT_EQ(cfg["model"]["embedding_dim"], 8);
  EXPECT_DOUBLE_EQ(cfg["optimizer"]["beta1"].get<double>(), 0.9);  // default survives
  std::remove(path.c_str());
}

TEST(Load, MissingOrInvalidProfileIsAConfigError) {
  EXPECT_THROW(load_config("/definitely/not/here.json", {}), ConfigError);
  std::string path = tmp_profile("broken.json", "{ this is not json");
  EXPECT_THROW(load_config(path, {}), ConfigError);
  std::remove(path.c_str());
}

TEST(Parse, InteractionModeAndErrorPaths) {
  Json cfg = default_config();
  cfg["model"]["interaction"] = "pool";
  EXPECT_EQ(parse_config(cfg).train.model.interaction, InteractionMode::Pool);
  cfg["model"]["interaction"] = "sideways";
  EXPECT_THROW(parse_config(cfg), ConfigError);

  cfg = default_config();
  cfg["model"].erase("kind");
  EXPECT_THROW(parse_config(cfg), ConfigError);  // missing key surfaces as ConfigError

  cfg = default_config();
  cfg["train"]["epochs"] = "twenty";
  EXPECT_THROW(parse_config(cfg), ConfigError);  // wrong type too
}

TEST(Parse, DataSectionMapsIntoIngestConfig) {
  Json cfg = default_config();
  cfg["data"]["train"] = "train.csv";
  cfg["data"]["numeric_cols"] = {"price"};
  cfg["data"]["hash_buckets"] = {{"site_id", 4096}};
  cfg["data"]["subsample_rate"] = 0.25;
  cfg["data"]["last_day_val_fraction"] = 1.0;
  ResolvedConfig r = parse_config(cfg);
  EXPECT_EQ(r.train_csv, "train.csv");
  EXPECT_EQ(r.ingest.numeric_cols.count("price"), 1u);
  EXPECT_EQ(r.ingest.hash_buckets.at("site_id"), 4096u);
  EXPECT_DOUBLE_EQ(r.ingest.subsample_rate, 0.25);
  EXPECT_DOUBLE_EQ(r.ingest.split.last_day_val_fraction, 1.0);
  EXPECT_EQ(r.ingest.ignore_cols.count("id"), 1u);
}

TEST(Profiles, CommittedProfilesAllResolve) {
  namespace fs = std::filesystem;
  fs::path dir = FNFM_PROFILE_DIR;
  ASSERT_TRUE(fs::exists(dir)) << dir;
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    ++seen;
    EXPECT_NO_THROW(resolve_config(entry.path().string(), {})) << entry.path();
  }
  EXPECT_GE(seen, 3u);
}

TEST(Profiles, StockTrainingProfilePinsTheStudySettings) {
  namespace fs = std::filesystem;
  std::string path = (fs::path(FNFM_PROFILE_DIR) / "avazu_fnfm.json").string();
  ResolvedConfig r = resolve_config(path, {});
  EXPECT_EQ(r.train.model.kind, ModelKind::FNFM);
  EXPECT_EQ(r.train.model.embedding_dim, 4u);
  EXPECT_EQ(r.train.model.hidden, (std::vector<std::size_t>{256, 256, 256}));
  EXPECT_TRUE(r.train.model.use_batchnorm);
  EXPECT_EQ(r.train.optimizer.kind, OptimizerKind::Adam);
  EXPECT_DOUBLE_EQ(r.train.optimizer.lr, 0.001);
  EXPECT_EQ(r.train.batch_size, 4096u);
  EXPECT_DOUBLE_EQ(r.train.l2_embedding, 1e-5);
}

}  // namespace
