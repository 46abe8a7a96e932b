#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "model.hpp"
#include "tensor.hpp"

namespace stpt {

// Insertion variants. ST_FULL prepends per-region tokens to every temporal
// layer; SHALLOW only to the first; ADD sums the tokens into every position;
// TINY shares tokens across regions and also prompts the spatial encoder;
// NONE carries no prompt parameters (head-only tuning).
enum class PromptVariant { kNone, kStFull, kTiny, kShallow, kAdd };

const char* variant_name(PromptVariant v);
std::optional<PromptVariant> parse_variant(std::string_view name);

struct PromptSpec {
  PromptVariant kind = PromptVariant::kNone;
  std::size_t n_st = 0;  // tokens per temporal layer (st/shallow/add)
  std::size_t n_ti = 0;  // tokens per layer (tiny)
};

struct PromptSet {
  PromptSpec spec;
  std::vector<Tensor> st_tokens;      // [N, n_st, D] per temporal layer
  std::vector<Tensor> tiny_temporal;  // [n_ti, D] per temporal layer
  std::vector<Tensor> tiny_spatial;   // [n_ti, D] per spatial layer

  using Visitor = std::function<void(const std::string&, Tensor&)>;
  void for_each(const Visitor& fn);
  std::vector<std::pair<std::string, Tensor>> named();
  std::size_t param_count() const;
  bool empty() const {
    return st_tokens.empty() && tiny_temporal.empty() && tiny_spatial.empty();
  }
  PromptSet clone() const;
};

// Xavier-uniform tokens (fan_in = fan_out = D), deterministic per seed.
// Zero token counts yield an empty set so the n_st = 0 case collapses to
// head-only tuning exactly.
PromptSet init_prompts(const PromptSpec& spec, const ModelConfig& cfg,
                       std::uint64_t seed);

// Closed-form prompt parameter count for a variant.
std::size_t prompt_param_count(const PromptSpec& spec, const ModelConfig& cfg);
// Prompt parameters plus the head (D*H + H); the backbone is excluded.
std::size_t trainable_param_count(const PromptSpec& spec,
                                  const ModelConfig& cfg);

// Result of prompt injection: the (possibly augmented) layer input and how
// many leading positions to truncate after the layer.
struct Injection {
  Tensor input;
  std::size_t lead = 0;
};

// z: [.., T', D] with region axis further out; layer is 1-based.
Injection inject_temporal(const Tensor& z, std::size_t layer,
                          const PromptSet* prompts, const ModelConfig& cfg);
// z: [.., N', D]; only TINY touches the spatial encoder.
Injection inject_spatial(const Tensor& z, std::size_t layer,
                         const PromptSet* prompts, const ModelConfig& cfg);

}  // namespace stpt
