#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace stpt {

struct PromptSet;

// Backbone dimensions. N and C are taken from the dataset; the rest are
// architecture choices persisted in checkpoints.
struct ModelConfig {
  std::size_t T = 12;    // input horizon
  std::size_t H = 12;    // output horizon
  std::size_t N = 1;     // regions
  std::size_t C = 1;     // attributes
  std::size_t D = 32;    // embedding size
  std::size_t l_t = 2;   // temporal layers
  std::size_t l_s = 2;   // spatial layers
  std::size_t heads = 4;
  std::size_t d_ff = 128;

  std::size_t head_dim() const { return D / heads; }
  void validate() const;
};

struct EncoderLayerParams {
  Tensor w_q, w_k, w_v, w_o;      // fused projections, all D x D
  Tensor ln1_gain, ln1_bias;      // after attention residual
  Tensor w_1, b_1, w_2, b_2;      // position-wise feed-forward
  Tensor ln2_gain, ln2_bias;      // after feed-forward residual
};

// Full parameter set, partitioned into backbone (everything except the head)
// and head so freezing is explicit.
struct ModelParameters {
  Tensor input_w, input_b;        // scalar-to-embedding map
  Tensor p_temp, p_spa;           // trainable positional embeddings
  std::vector<EncoderLayerParams> temporal, spatial;
  Tensor head_w, head_b;

  using Visitor = std::function<void(const std::string&, Tensor&)>;
  void for_each_backbone(const Visitor& fn);
  void for_each_head(const Visitor& fn);
  void for_each(const Visitor& fn);

  std::vector<std::pair<std::string, Tensor>> named_backbone();
  std::vector<std::pair<std::string, Tensor>> named_head();
  std::vector<std::pair<std::string, Tensor>> named_all();

  std::size_t backbone_param_count();
  std::size_t head_param_count();

  ModelParameters clone() const;
};

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases, unit layer
// norm gains; deterministic per seed.
ModelParameters init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// Records sequence lengths around every encoder layer (before injection,
// augmented, after truncation).
struct ShapeTrace {
  struct Entry {
    char encoder;  // 't' or 's'
    std::size_t layer;
    std::size_t len_in, len_aug, len_out;
  };
  std::vector<Entry> entries;
};

// x: [.., T, N] -> [.., N, T, D]
Tensor input_map(const Tensor& x, const ModelConfig& cfg,
                 const ModelParameters& params);
// x: [.., L, D] -> [.., L, D]
Tensor multi_head_attention(const Tensor& x, const EncoderLayerParams& layer,
                            const ModelConfig& cfg);
Tensor attention_block(const Tensor& x, const EncoderLayerParams& layer,
                       const ModelConfig& cfg);
Tensor feed_forward_block(const Tensor& x, const EncoderLayerParams& layer);
// x: [.., T, N] -> [.., N, D]
Tensor temporal_encode(const Tensor& x, const ModelConfig& cfg,
                       const ModelParameters& params,
                       const PromptSet* prompts = nullptr,
                       ShapeTrace* trace = nullptr);
// z: [.., N, D] -> [.., N, D]
Tensor spatial_encode(const Tensor& z, const ModelConfig& cfg,
                      const ModelParameters& params,
                      const PromptSet* prompts = nullptr,
                      ShapeTrace* trace = nullptr);
// z: [.., N, D] -> [.., N, H], strictly inside (0, 1)
Tensor head_map(const Tensor& z, const ModelParameters& params);

// X: [.., T, N, C] -> [.., H, N, C]; attributes share parameters and never
// mix. prompts, when given, holds one entry per attribute (nullptr allowed).
Tensor forward(const Tensor& X, const ModelConfig& cfg,
               const ModelParameters& params,
               std::span<const PromptSet* const> prompts = {},
               ShapeTrace* trace = nullptr);

}  // namespace stpt
