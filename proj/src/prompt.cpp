#include "prompt.hpp"

#include <cmath>

#include "rng.hpp"

namespace stpt {

const char* variant_name(PromptVariant v) {
  switch (v) {
    case PromptVariant::kNone: return "none";
    case PromptVariant::kStFull: return "st";
    case PromptVariant::kTiny: return "tiny";
    case PromptVariant::kShallow: return "shallow";
    case PromptVariant::kAdd: return "add";
  }
  return "?";
}

std::optional<PromptVariant> parse_variant(std::string_view name) {
  if (name == "none") return PromptVariant::kNone;
  if (name == "st") return PromptVariant::kStFull;
  if (name == "tiny") return PromptVariant::kTiny;
  if (name == "shallow") return PromptVariant::kShallow;
  if (name == "add") return PromptVariant::kAdd;
  return std::nullopt;
}

void PromptSet::for_each(const Visitor& fn) {
  for (std::size_t l = 0; l < st_tokens.size(); ++l)
    fn("prompt.st." + std::to_string(l), st_tokens[l]);
  for (std::size_t l = 0; l < tiny_temporal.size(); ++l)
    fn("prompt.tiny_t." + std::to_string(l), tiny_temporal[l]);
  for (std::size_t l = 0; l < tiny_spatial.size(); ++l)
    fn("prompt.tiny_s." + std::to_string(l), tiny_spatial[l]);
}

std::vector<std::pair<std::string, Tensor>> PromptSet::named() {
  std::vector<std::pair<std::string, Tensor>> out;
  for_each([&](const std::string& n, Tensor& t) { out.emplace_back(n, t); });
  return out;
}

std::size_t PromptSet::param_count() const {
  std::size_t n = 0;
  const_cast<PromptSet*>(this)->for_each(
      [&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

PromptSet PromptSet::clone() const {
  PromptSet copy = *this;
  copy.for_each([](const std::string&, Tensor& t) {
    t = Tensor(t.shape(), t.values(), t.requires_grad());
  });
  return copy;
}

PromptSet init_prompts(const PromptSpec& spec, const ModelConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  PromptSet set;
  set.spec = spec;
  // Only the counts the variant actually uses are kept.
  if (spec.kind == PromptVariant::kNone) set.spec.n_st = set.spec.n_ti = 0;
  if (spec.kind == PromptVariant::kTiny) set.spec.n_st = 0;
  if (spec.kind == PromptVariant::kStFull ||
      spec.kind == PromptVariant::kShallow ||
      spec.kind == PromptVariant::kAdd)
    set.spec.n_ti = 0;
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / (2.0 * static_cast<double>(cfg.D)));
  auto xavier = [&](Shape shape) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v));
  };
  switch (spec.kind) {
    case PromptVariant::kNone:
      break;
    case PromptVariant::kStFull:
    case PromptVariant::kAdd:
      if (spec.n_st > 0)
        for (std::size_t l = 0; l < cfg.l_t; ++l)
          set.st_tokens.push_back(xavier({cfg.N, spec.n_st, cfg.D}));
      break;
    case PromptVariant::kShallow:
      if (spec.n_st > 0)
        set.st_tokens.push_back(xavier({cfg.N, spec.n_st, cfg.D}));
      break;
    case PromptVariant::kTiny:
      if (spec.n_ti > 0) {
        for (std::size_t l = 0; l < cfg.l_t; ++l)
          set.tiny_temporal.push_back(xavier({spec.n_ti, cfg.D}));
        for (std::size_t l = 0; l < cfg.l_s; ++l)
          set.tiny_spatial.push_back(xavier({spec.n_ti, cfg.D}));
      }
      break;
  }
  return set;
}

std::size_t prompt_param_count(const PromptSpec& spec,
                               const ModelConfig& cfg) {
  switch (spec.kind) {
    case PromptVariant::kNone: return 0;
    case PromptVariant::kStFull:
    case PromptVariant::kAdd: return cfg.l_t * cfg.N * spec.n_st * cfg.D;
    case PromptVariant::kShallow: return cfg.N * spec.n_st * cfg.D;
    case PromptVariant::kTiny:
      return (cfg.l_t + cfg.l_s) * spec.n_ti * cfg.D;
  }
  return 0;
}

std::size_t trainable_param_count(const PromptSpec& spec,
                                  const ModelConfig& cfg) {
  return prompt_param_count(spec, cfg) + cfg.D * cfg.H + cfg.H;
}

namespace {

// Replicate tokens across any leading batch axes of z beyond the token rank
// plus one (the region or batch axis the tokens already lack).
Tensor lift_to(const Tensor& tokens, const Tensor& z) {
  Tensor t = tokens;
  while (t.rank() < z.rank()) {
    const std::size_t lead = z.shape()[z.rank() - t.rank() - 1];
    t = tile_leading(t, lead);
  }
  return t;
}

}  // namespace

Injection inject_temporal(const Tensor& z, std::size_t layer,
                          const PromptSet* prompts, const ModelConfig& cfg) {
  if (layer < 1 || layer > cfg.l_t)
    throw ShapeError("inject_temporal: layer " + std::to_string(layer) +
                     " outside [1, " + std::to_string(cfg.l_t) + "]");
  if (!prompts || prompts->empty()) return {z, 0};
  const PromptSpec& spec = prompts->spec;
  switch (spec.kind) {
    case PromptVariant::kNone:
      return {z, 0};
    case PromptVariant::kStFull: {
      if (prompts->st_tokens.size() != cfg.l_t)
        throw ShapeError("inject_temporal: st variant has " +
                         std::to_string(prompts->st_tokens.size()) +
                         " token groups, config expects " +
                         std::to_string(cfg.l_t));
      Tensor tok = lift_to(prompts->st_tokens[layer - 1], z);
      return {concat_axis({tok, z}, -2), spec.n_st};
    }
    case PromptVariant::kShallow: {
      if (layer != 1) return {z, 0};
      Tensor tok = lift_to(prompts->st_tokens[0], z);
      return {concat_axis({tok, z}, -2), spec.n_st};
    }
    case PromptVariant::kTiny: {
      if (prompts->tiny_temporal.size() != cfg.l_t)
        throw ShapeError("inject_temporal: tiny variant has " +
                         std::to_string(prompts->tiny_temporal.size()) +
                         " token groups, config expects " +
                         std::to_string(cfg.l_t));
      // Same token values for every region.
      Tensor tok = lift_to(prompts->tiny_temporal[layer - 1], z);
      return {concat_axis({tok, z}, -2), spec.n_ti};
    }
    case PromptVariant::kAdd: {
      if (prompts->st_tokens.size() != cfg.l_t)
        throw ShapeError("inject_temporal: add variant has " +
                         std::to_string(prompts->st_tokens.size()) +
                         " token groups, config expects " +
                         std::to_string(cfg.l_t));
      // Reduce the n_st axis by summation, broadcast-add to every position.
      Tensor tok = prompts->st_tokens[layer - 1];  // [N, n_st, D]
      Tensor summed = slice_axis(tok, -2, 0, 1);
      for (std::size_t i = 1; i < spec.n_st; ++i)
        summed = add(summed, slice_axis(tok, -2, i, i + 1));
      return {add(z, summed), 0};  // [N,1,D] aligns against [.., N, T', D]
    }
  }
  return {z, 0};
}

Injection inject_spatial(const Tensor& z, std::size_t layer,
                         const PromptSet* prompts, const ModelConfig& cfg) {
  if (layer < 1 || layer > cfg.l_s)
    throw ShapeError("inject_spatial: layer " + std::to_string(layer) +
                     " outside [1, " + std::to_string(cfg.l_s) + "]");
  if (!prompts || prompts->spec.kind != PromptVariant::kTiny ||
      prompts->tiny_spatial.empty())
    return {z, 0};
  Tensor tok = lift_to(prompts->tiny_spatial[layer - 1], z);
  return {concat_axis({tok, z}, -2), prompts->spec.n_ti};
}

}  // namespace stpt
