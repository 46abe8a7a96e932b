#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "dataio.hpp"

namespace stpt {

enum class SplitKind { kTrain, kVal, kTest };
const char* split_name(SplitKind s);
std::optional<SplitKind> parse_split(std::string_view name);

struct AttributeMetrics {
  std::string name;
  double rmse_denorm = 0.0, mae_denorm = 0.0;
  double rmse_norm = 0.0, mae_norm = 0.0;
  double loss_norm = 0.0;  // rmse_norm + mae_norm, the training objective
};

struct MetricsReport {
  std::vector<AttributeMetrics> per_attribute;
  double avg_rmse_denorm = 0.0, avg_mae_denorm = 0.0;
  double avg_rmse_norm = 0.0, avg_mae_norm = 0.0;
  double avg_loss_norm = 0.0;
  std::uint64_t trainable_params = 0;
  std::uint64_t epochs = 0;
  std::uint64_t seed = 0;
  std::string strategy;
  std::string split;
  std::string config_hash;
  std::uint64_t window_count = 0;

  nlohmann::ordered_json to_json() const;
};

// Windowed RMSE/MAE per attribute on the requested split, on normalized and
// denormalized scales. Tuned checkpoints (target attribute recorded) are
// evaluated on that attribute, located by name in the given series.
MetricsReport evaluate(const Checkpoint& ckpt, const GridSeries& series,
                       SplitKind split);

// Short stable fingerprint of a model config, embedded in reports.
std::string config_fingerprint(const ModelConfig& cfg);

}  // namespace stpt
