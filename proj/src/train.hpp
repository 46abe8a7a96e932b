#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "model.hpp"
#include "prompt.hpp"

namespace stpt {

enum class Strategy { kSingle, kFull, kFineTune, kPromptTune };

const char* strategy_name(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view name);

struct TrainConfig {
  Strategy strategy = Strategy::kFull;
  double learning_rate = 0.003;  // 0.001 for fine-tune / prompt-tune
  std::size_t batch_size = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;  // epochs without validation improvement
  std::uint64_t seed = 1;
  PromptSpec prompt;           // prompt-tune only
  int target_attribute = -1;   // single / fine-tune / prompt-tune
  std::size_t max_steps = 0;   // 0 = bounded by epochs only
  bool warm_head = false;      // keep the pretrained head instead of fresh init

  void validate() const;
};

// RMSE(pred, target) + MAE(pred, target) over every element.
Tensor loss_rmse_mae(const Tensor& pred, const Tensor& target);

// Bias-corrected Adam over a named trainable subset. Frozen parameters are
// never registered and never touched.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);

  void register_params(std::vector<std::pair<std::string, Tensor>> trainables);
  // One update from the gradients currently on the registered tensors.
  // Throws if any registered tensor is missing its gradient.
  void step();
  void zero_grads();

  std::vector<std::string> state_keys() const;
  std::size_t step_count() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  struct Slot {
    Tensor param;
    std::vector<double> m, v;
  };
  std::map<std::string, Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch;
  double train_loss;
  double val_loss;
  double seconds;
};

struct TrainResult {
  ModelConfig config;
  ModelParameters params;
  PromptSet prompts;  // empty unless prompt-tuned
  Normalizer normalizer;
  std::vector<EpochRecord> history;
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  double best_val_loss = 0.0;
  std::size_t trainable_count = 0;
  std::vector<std::string> optimizer_keys;
};

// Observer invoked after every optimizer step (trajectory inspection).
using StepObserver =
    std::function<void(std::size_t step, ModelParameters& params, PromptSet& prompts)>;

// Core mini-batch loop shared by every strategy. Mutates params/prompts in
// place; the trainable subset is derived from cfg.strategy. Windows must be
// normalized; train-side values are validated to lie in [0, 1].
struct LoopResult {
  std::vector<EpochRecord> history;
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  double best_val_loss = 0.0;
  std::vector<std::string> optimizer_keys;
};
LoopResult run_training_loop(const std::vector<WindowSample>& train_windows,
                             const std::vector<WindowSample>& val_windows,
                             const ModelConfig& cfg, const TrainConfig& tc,
                             ModelParameters& params, PromptSet& prompts,
                             const StepObserver* observer = nullptr);

// Phase I: parameter-sharing pretrain over all C attributes. Also the
// Single-Train path when the series holds one attribute.
TrainResult pretrain(const GridSeries& series, ModelConfig cfg,
                     const TrainConfig& tc, const StepObserver* observer = nullptr);

// Phase II: freeze the backbone, train prompt tokens plus a fresh head on
// one attribute. `series` must already be restricted to that attribute.
TrainResult prompt_tune(const ModelParameters& pretrained, ModelConfig cfg,
                        const GridSeries& series, const TrainConfig& tc,
                        const StepObserver* observer = nullptr);

// Tune every parameter starting from the pretrained weights.
TrainResult fine_tune(const ModelParameters& pretrained, ModelConfig cfg,
                      const GridSeries& series, const TrainConfig& tc,
                      const StepObserver* observer = nullptr);

// Exact RMSE+MAE of the model over a window list (no training).
double dataset_loss(const std::vector<WindowSample>& windows_list,
                    const ModelConfig& cfg, const ModelParameters& params,
                    const PromptSet* prompts, std::size_t batch_size = 64);

}  // namespace stpt
