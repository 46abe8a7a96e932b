#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "model.hpp"
#include "prompt.hpp"
#include "train.hpp"

namespace stpt {

// Versioned binary container: 8-byte magic "STPTCKPT", little-endian u32
// version, length-prefixed JSON header (config, provenance, array
// directory), then raw little-endian f64 arrays. save -> load -> save is
// byte-identical.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  ModelParameters params;
  PromptSet prompts;  // empty unless the checkpoint came from prompt tuning
  Normalizer normalizer;
  std::vector<std::string> attribute_names;

  std::string strategy;
  std::uint64_t seed = 0;
  std::uint64_t epochs_run = 0;
  double final_val_loss = -1.0;
  std::int64_t target_attribute = -1;
  std::string target_attribute_name;
  std::uint64_t trainable_count = 0;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  static Checkpoint from_result(const TrainResult& result,
                                const GridSeries& trained_on,
                                Strategy strategy, std::uint64_t seed,
                                std::int64_t target_attribute = -1);
};

}  // namespace stpt
