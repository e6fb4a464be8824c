// Command-line driver: data prep, training, evaluation, prediction,
// gradient checking, and the three studies (interaction ablation, BN
// ablation, model comparison). Every run writes its fully resolved config
// to the output directory so results can be reproduced from the artifacts
// alone.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fnfm/config.hpp"
#include "fnfm/data.hpp"
#include "fnfm/metrics.hpp"
#include "fnfm/model.hpp"
#include "fnfm/model_check.hpp"
#include "fnfm/store.hpp"
#include "fnfm/synth.hpp"
#include "fnfm/train.hpp"

namespace fs = std::filesystem;
using namespace fnfm;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path, "JSON experiment profile");
  cmd->add_option("-s,--set", opts.overrides,
                  "override a config key, e.g. --set optimizer.lr=0.01");
  cmd->add_option("-o,--out", opts.out_dir,
                  "output directory (default $FNFM_OUT or ./fnfm_out)");
}

std::string out_dir(const CommonOpts& opts) {
  if (!opts.out_dir.empty()) return opts.out_dir;
  if (const char* env = std::getenv("FNFM_OUT")) return env;
  return "fnfm_out";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// Resolve the config, create the output directory, and log the resolved
// config there.
ResolvedConfig setup(const CommonOpts& opts) {
  ResolvedConfig cfg = resolve_config(opts.config_path, opts.overrides);
  fs::create_directories(out_dir(opts));
  write_text(fs::path(out_dir(opts)) / "resolved_config.json", cfg.raw.dump(2) + "\n");
  return cfg;
}

struct DataBundle {
  Dataset train, val, test;
};

bool is_cache(const std::string& path) { return path.ends_with(".fnfmdata"); }

DataBundle load_data(const ResolvedConfig& cfg) {
  if (cfg.synth_enabled) {
    SyntheticData d = gen_synthetic(cfg.synth);
    return {std::move(d.train), std::move(d.val), std::move(d.test)};
  }
  if (!cfg.cache_path.empty()) {
    fs::path dir(cfg.cache_path);
    DataBundle b;
    b.train = load_dataset_cache((dir / "train.fnfmdata").string());
    b.val = load_dataset_cache((dir / "val.fnfmdata").string());
    if (fs::exists(dir / "test.fnfmdata"))
      b.test = load_dataset_cache((dir / "test.fnfmdata").string());
    return b;
  }
  if (!cfg.train_csv.empty() && !cfg.val_csv.empty()) {
    CsvReader reader(cfg.train_csv);
    FieldSchema schema = infer_schema(reader.header(), cfg.ingest.label_col,
                                      cfg.ingest.ignore_cols, cfg.ingest.numeric_cols,
                                      cfg.ingest.hash_buckets, cfg.ingest.default_buckets,
                                      cfg.ingest.hash_seed);
    DataBundle b;
    b.train = encode_csv(cfg.train_csv, schema, cfg.ingest.label_col, "train");
    b.val = encode_csv(cfg.val_csv, schema, cfg.ingest.label_col, "validation");
    if (!cfg.test_csv.empty())
      b.test = encode_csv(cfg.test_csv, schema, cfg.ingest.label_col, "test");
    return b;
  }
  if (!cfg.train_csv.empty()) {
    SplitDatasets sp = load_csv_datasets(cfg.train_csv, cfg.ingest);
    return {std::move(sp.train), std::move(sp.validation), std::move(sp.test)};
  }
  throw ConfigError(
      "no data source: set synth.enabled, data.cache, or data.train in the config");
}

Dataset load_eval_data(const std::string& path, const FieldSchema& schema,
                       const std::string& label_col, const std::string& split) {
  if (is_cache(path)) {
    Dataset ds = load_dataset_cache(path);
    if (!(ds.schema() == schema))
      throw SchemaError("dataset cache schema does not match the model schema");
    return ds;
  }
  return encode_csv(path, schema, label_col, split);
}

void save_bundle(const DataBundle& b, const fs::path& dir) {
  save_dataset_cache(b.train, (dir / "train.fnfmdata").string());
  save_dataset_cache(b.val, (dir / "val.fnfmdata").string());
  if (!b.test.empty()) save_dataset_cache(b.test, (dir / "test.fnfmdata").string());
}

// ---------------------------------------------------------------------------
// Subcommand bodies

int cmd_prep(const CommonOpts& opts) {
  ResolvedConfig cfg = setup(opts);
  if (cfg.train_csv.empty()) throw ConfigError("prep needs data.train (a CSV path)");
  SplitDatasets sp = load_csv_datasets(cfg.train_csv, cfg.ingest);
  fs::path dir(out_dir(opts));
  save_dataset_cache(sp.train, (dir / "train.fnfmdata").string());
  save_dataset_cache(sp.validation, (dir / "val.fnfmdata").string());
  save_dataset_cache(sp.test, (dir / "test.fnfmdata").string());
  std::string summary = fmt::format(
      R"({{"total_rows":{},"rejected":{},"train":{},"val":{},"test":{},"train_pos":{},"val_pos":{},"test_pos":{}}})",
      sp.total_rows, sp.rejected, sp.train.size(), sp.validation.size(), sp.test.size(),
      sp.train.positives(), sp.validation.positives(), sp.test.positives());
  write_text(dir / "prep.json", summary + "\n");
  std::cout << summary << "\n";
  return 0;
}

int cmd_synth(const CommonOpts& opts) {
  ResolvedConfig cfg = setup(opts);
  SyntheticData d = gen_synthetic(cfg.synth);
  fs::path dir(out_dir(opts));
  DataBundle b{std::move(d.train), std::move(d.val), std::move(d.test)};
  save_bundle(b, dir);
  std::string info = fmt::format(
      R"({{"train":{},"val":{},"test":{},"train_pos":{},"bayes_train":{},"bayes_val":{},"bayes_test":{}}})",
      b.train.size(), b.val.size(), b.test.size(), b.train.positives(),
      detail::json_real(d.bayes_train), detail::json_real(d.bayes_val),
      detail::json_real(d.bayes_test));
  write_text(dir / "synth.json", info + "\n");
  std::cout << info << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  ResolvedConfig cfg = setup(opts);
  DataBundle b = load_data(cfg);
  TrainResult r = train(cfg.train, b.train, b.val, b.test.empty() ? nullptr : &b.test);
  fs::path dir(out_dir(opts));
  write_text(dir / "report.jsonl", train_report_jsonl(r.report));
  save_model(r.params, r.spec, b.train.schema(), (dir / "model.fnfm").string());
  std::cout << fmt::format("model={} best_epoch={} best_val_logloss={}\n",
                           r.report.model_name, r.report.best_epoch,
                           detail::json_real(r.report.best_val_logloss));
  if (r.report.has_test)
    std::cout << fmt::format("test_logloss={} test_auc={}\n",
                             detail::json_real(r.report.test_logloss),
                             r.report.test_auc_defined
                                 ? detail::json_real(r.report.test_auc)
                                 : "null");
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& model_path,
             const std::string& data_path, const std::string& split) {
  ResolvedConfig cfg = setup(opts);
  LoadedModel m = load_model(model_path);
  Dataset ds = load_eval_data(data_path, m.schema, cfg.ingest.label_col, split);
  auto probs = predict_probabilities(m.params, m.spec, ds, all_indices(ds.size()));
  MetricsReport rep = evaluate(probs, ds.labels(), model_kind_name(m.spec.kind), split);
  std::string js = metrics_json(rep);
  write_text(fs::path(out_dir(opts)) / ("eval_" + split + ".json"), js + "\n");
  std::cout << js << "\n";
  return 0;
}

int cmd_predict(const CommonOpts& opts, const std::string& model_path,
                const std::string& data_path, std::string output) {
  ResolvedConfig cfg = setup(opts);
  LoadedModel m = load_model(model_path);
  Dataset ds = load_eval_data(data_path, m.schema, cfg.ingest.label_col, "predict");
  auto probs = predict_probabilities(m.params, m.spec, ds, all_indices(ds.size()));
  std::string out;
  for (Real p : probs) out += detail::json_real(p) + "\n";
  if (output.empty()) output = (fs::path(out_dir(opts)) / "predictions.txt").string();
  write_text(output, out);
  std::cout << fmt::format("wrote {} predictions to {}\n", probs.size(), output);
  return 0;
}

// One gradient check per model kind (BN on and off for MLP kinds) on a
// small three-field problem; nonzero exit if any block misses tolerance.
int cmd_gradcheck(const CommonOpts& opts, const std::string& kind_arg, Real tolerance) {
  ResolvedConfig cfg = setup(opts);
  SyntheticSpec sspec;
  sspec.num_fields = 3;
  sspec.cardinality = 5;
  sspec.d_true = 2;
  sspec.n_train = 64;
  sspec.n_val = 8;
  sspec.n_test = 0;
  sspec.seed = cfg.train.seed;
  SyntheticData data = gen_synthetic(sspec);
  std::vector<std::size_t> batch;
  for (std::size_t i = 0; i < 8; ++i) batch.push_back(i);

  std::vector<ModelKind> kinds;
  if (kind_arg == "all")
    kinds = {ModelKind::LR,  ModelKind::FM,     ModelKind::FFM,
             ModelKind::NFM, ModelKind::DeepFM, ModelKind::FNFM};
  else
    kinds = {parse_model_kind(kind_arg)};

  bool ok = true;
  for (ModelKind kind : kinds) {
    ModelSpec spec;
    spec.kind = kind;
    spec.embedding_dim = 2;
    if (spec.has_mlp()) spec.hidden = {4};
    for (bool bn : {false, true}) {
      if (bn && !spec.has_mlp()) continue;
      spec.use_batchnorm = bn;
      ModelParams params = init_params(spec, data.train.schema(), cfg.train.seed);
      Regularization reg{cfg.train.l2_linear, cfg.train.l2_embedding, false};
      GradCheckReport rep = model_grad_check(params, spec, data.train, batch, reg);
      bool pass = rep.passed(tolerance);
      ok = ok && pass;
      std::cout << fmt::format("{:7} bn={} max_rel_error={} {}\n", model_kind_name(kind),
                               bn ? "on " : "off",
                               detail::json_real(rep.max_rel_error()),
                               pass ? "ok" : "FAIL");
    }
  }
  return ok ? 0 : 4;
}

int cmd_ablate_concat(const CommonOpts& opts) {
  ResolvedConfig cfg = setup(opts);
  DataBundle b = load_data(cfg);
  TrainConfig base = cfg.train;
  base.model.kind = ModelKind::FNFM;
  ConcatPoolAblation ab =
      ablate_interaction_layer(base, b.train, b.val, b.test.empty() ? nullptr : &b.test);
  fs::path dir(out_dir(opts));
  write_text(dir / "concat_report.jsonl", train_report_jsonl(ab.concat.report));
  write_text(dir / "pool_report.jsonl", train_report_jsonl(ab.pool.report));
  std::string summary = fmt::format(
      R"({{"concat_best_val_logloss":{},"pool_best_val_logloss":{},"concat_width":{},"pool_width":{}}})",
      detail::json_real(ab.concat.report.best_val_logloss),
      detail::json_real(ab.pool.report.best_val_logloss),
      ab.concat.spec.mlp_input_width(b.train.schema()),
      ab.pool.spec.mlp_input_width(b.train.schema()));
  write_text(dir / "ablate_concat.json", summary + "\n");
  std::cout << summary << "\n";
  return 0;
}

void write_spread_csv(const fs::path& path, const TrainReport& r) {
  std::string csv = "epoch,dim,pre_bn_std,post_bn_std\n";
  for (const EpochStats& e : r.epochs)
    for (std::size_t d = 0; d < e.pre_bn_std.size(); ++d)
      csv += fmt::format("{},{},{},{}\n", e.epoch, d, detail::json_real(e.pre_bn_std[d]),
                         detail::json_real(e.post_bn_std[d]));
  write_text(path, csv);
}

int cmd_ablate_bn(const CommonOpts& opts) {
  ResolvedConfig cfg = setup(opts);
  DataBundle b = load_data(cfg);
  TrainConfig base = cfg.train;
  base.model.kind = ModelKind::FNFM;
  BatchNormAblation ab =
      ablate_batchnorm(base, b.train, b.val, b.test.empty() ? nullptr : &b.test);
  fs::path dir(out_dir(opts));
  write_text(dir / "bn_report_with.jsonl", train_report_jsonl(ab.with_bn.report));
  write_text(dir / "bn_report_without.jsonl", train_report_jsonl(ab.without_bn.report));
  write_spread_csv(dir / "bn_spread_with.csv", ab.with_bn.report);
  write_spread_csv(dir / "bn_spread_without.csv", ab.without_bn.report);

  auto epoch_loss = [](const TrainReport& r, std::size_t epoch) {
    for (const EpochStats& e : r.epochs)
      if (e.epoch == epoch) return e.train_loss;
    return r.final_train_loss;
  };
  Real with_ratio = mlp_input_spread_ratio(ab.with_bn.report.epochs.back());
  Real without_ratio = mlp_input_spread_ratio(ab.without_bn.report.epochs.back());
  std::string summary = fmt::format(
      R"({{"with_bn_epoch5_train_loss":{},"without_bn_epoch5_train_loss":{},"with_bn_spread_ratio":{},"without_bn_spread_ratio":{}}})",
      detail::json_real(epoch_loss(ab.with_bn.report, 5)),
      detail::json_real(epoch_loss(ab.without_bn.report, 5)),
      detail::json_real(with_ratio), detail::json_real(without_ratio));
  write_text(dir / "ablate_bn.json", summary + "\n");
  std::cout << summary << "\n";
  return 0;
}

int cmd_compare(const CommonOpts& opts) {
  ResolvedConfig cfg = setup(opts);
  DataBundle b = load_data(cfg);
  auto board = compare_models(cfg.grid, cfg.train, b.train, b.val,
                              b.test.empty() ? nullptr : &b.test);
  std::string js = leaderboard_json(board);
  write_text(fs::path(out_dir(opts)) / "leaderboard.json", js + "\n");
  for (const LeaderboardRow& row : board)
    std::cout << fmt::format("{:7} val_logloss={}\n", model_kind_name(row.kind),
                             detail::json_real(row.val_logloss));
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"field-aware neural factorization machines"};
  app.require_subcommand(1);

  CommonOpts prep_o, synth_o, train_o, eval_o, pred_o, grad_o, abc_o, abn_o, cmp_o;
  std::string eval_model, eval_data, eval_split = "test";
  std::string pred_model, pred_data, pred_out;
  std::string grad_kind = "all";
  Real grad_tol = 1e-4;

  add_common(app.add_subcommand("prep", "encode a CSV and split it by day"), prep_o);
  add_common(app.add_subcommand("synth", "generate synthetic datasets"), synth_o);
  add_common(app.add_subcommand("train", "train one model"), train_o);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a saved model on labeled data");
  add_common(ev, eval_o);
  ev->add_option("-m,--model", eval_model, "model file")->required();
  ev->add_option("-d,--data", eval_data, "CSV or .fnfmdata cache")->required();
  ev->add_option("--split", eval_split, "split tag for the report");

  CLI::App* pr = app.add_subcommand("predict", "score a CSV, one probability per row");
  add_common(pr, pred_o);
  pr->add_option("-m,--model", pred_model, "model file")->required();
  pr->add_option("-d,--data", pred_data, "CSV (label column optional) or cache")->required();
  pr->add_option("--output", pred_out, "output file (default <out>/predictions.txt)");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gc, grad_o);
  gc->add_option("-k,--kind", grad_kind, "model kind or 'all'");
  gc->add_option("--tolerance", grad_tol, "max relative error allowed");

  add_common(app.add_subcommand("ablate-concat", "concat vs pooled interaction study"),
             abc_o);
  add_common(app.add_subcommand("ablate-bn", "batch normalization study"), abn_o);
  add_common(app.add_subcommand("compare", "grid search over all model kinds"), cmp_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (app.got_subcommand("prep")) return cmd_prep(prep_o);
  if (app.got_subcommand("synth")) return cmd_synth(synth_o);
  if (app.got_subcommand("train")) return cmd_train(train_o);
  if (app.got_subcommand("eval")) return cmd_eval(eval_o, eval_model, eval_data, eval_split);
  if (app.got_subcommand("predict"))
    return cmd_predict(pred_o, pred_model, pred_data, pred_out);
  if (app.got_subcommand("gradcheck")) return cmd_gradcheck(grad_o, grad_kind, grad_tol);
  if (app.got_subcommand("ablate-concat")) return cmd_ablate_concat(abc_o);
  if (app.got_subcommand("ablate-bn")) return cmd_ablate_bn(abn_o);
  if (app.got_subcommand("compare")) return cmd_compare(cmp_o);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const SplitError& e) {
    std::cerr << "split error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const FormatError& e) {  // includes version and checksum errors
    std::cerr << "format error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return 4;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
