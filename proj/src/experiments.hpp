#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataio.hpp"
#include "model.hpp"

namespace stpt {

// Knobs shared by the multi-seed experiment drivers. Defaults keep runs at
// desk scale; every value is overridable from the CLI.
struct ExperimentOptions {
  std::size_t n_seeds = 5;
  std::uint64_t base_seed = 1;
  std::size_t pretrain_epochs = 40;
  std::size_t tune_epochs = 25;
  std::size_t patience = 5;
  double pretrain_lr = 0.003;
  double tune_lr = 0.001;
  std::size_t batch_size = 32;
  std::size_t n_st = 2;
  std::size_t n_ti = 2;
  std::size_t threads = 2;
  std::size_t transfer_split = 0;  // 0 = first ceil(C/2) attributes
  std::vector<std::size_t> sweep_counts = {0, 1, 2, 3, 4};
  int sweep_attribute = -1;  // -1 = average over all attributes
};

struct ExperimentResult {
  nlohmann::ordered_json summary;
  std::string table_text;
};

// Strategy comparison: single-train, full-train, fine-tune, prompt-tune.
ExperimentResult exp_overall(const GridSeries& series, ModelConfig base,
                             const ExperimentOptions& opts);
// Pretrain on one attribute subset, tune on the other, both directions.
ExperimentResult exp_transfer(const GridSeries& series, ModelConfig base,
                              const ExperimentOptions& opts);
// Five prompt variants from a shared pretrained backbone.
ExperimentResult exp_ablation(const GridSeries& series, ModelConfig base,
                              const ExperimentOptions& opts);
// Prompt token count sweep; the zero-token row must match head-only tuning.
ExperimentResult exp_sweep(const GridSeries& series, ModelConfig base,
                           const ExperimentOptions& opts);

// Writes <out_dir>/<name>.json and <out_dir>/<name>.txt.
void write_experiment(const ExperimentResult& result,
                      const std::string& out_dir, const std::string& name);

}  // namespace stpt
