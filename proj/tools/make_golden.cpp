// Regenerates the committed golden fixtures: a small hashed-CSV dataset, a
// trained model file, and the probabilities that model assigns to the
// fixture rows. Run from the repo root:
//
//   make_golden [fixtures_dir]
//
// The outputs are committed; tests compare against them bit-for-bit (values
// within 1e-12) to pin the file format and the frozen inference path.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "fnfm/data.hpp"
#include "fnfm/metrics.hpp"
#include "fnfm/model.hpp"
#include "fnfm/store.hpp"
#include "fnfm/train.hpp"

using namespace fnfm;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  fs::path dir = argc > 1 ? argv[1] : "fixtures";
  fs::create_directories(dir);

  // 12 rows over three hashed categorical fields
  std::string csv = "click,f0,f1,f2\n";
  const char* rows[12] = {
      "1,red,circle,alpha",   "0,blue,square,beta",   "1,red,square,gamma",
      "0,green,circle,alpha", "1,blue,circle,delta",  "0,red,triangle,beta",
      "1,green,square,alpha", "0,blue,triangle,beta", "1,red,circle,delta",
      "0,green,triangle,gamma", "1,blue,square,alpha", "0,red,circle,beta"};
  for (const char* r : rows) csv += std::string(r) + "\n";
  {
    std::ofstream out(dir / "golden_rows.csv", std::ios::binary);
    out << csv;
  }

  CsvReader reader((dir / "golden_rows.csv").string());
  FieldSchema schema = infer_schema(reader.header(), "click", {}, {},
                                    {{"f0", 4}, {"f1", 4}, {"f2", 4}},
                                    /*default_buckets=*/4, /*hash_seed=*/42);
  Dataset data = encode_csv((dir / "golden_rows.csv").string(), schema, "click", "golden");

  TrainConfig cfg;
  cfg.model.kind = ModelKind::FNFM;
  cfg.model.embedding_dim = 2;
  cfg.model.hidden = {4};
  cfg.model.use_batchnorm = true;
  cfg.optimizer.lr = 0.05;
  cfg.epochs = 5;
  cfg.patience = 10;
  cfg.batch_size = 4;
  cfg.seed = 2024;
  cfg.probe_size = 8;
  TrainResult r = train(cfg, data, data);

  save_model(r.params, r.spec, schema, (dir / "golden_model.fnfm").string());

  auto probs = predict_probabilities(r.params, r.spec, data, all_indices(data.size()));
  std::string lines;
  for (Real p : probs) lines += fmt::format("{}\n", p);
  {
    std::ofstream out(dir / "golden_probs.txt", std::ios::binary);
    out << lines;
  }
  std::cout << "wrote " << (dir / "golden_model.fnfm").string() << " and "
            << probs.size() << " probabilities\n";
  return 0;
}
