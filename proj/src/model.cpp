#include "model.hpp"

#include <cmath>

#include "prompt.hpp"
#include "rng.hpp"

namespace stpt {

void ModelConfig::validate() const {
  const std::pair<std::size_t, const char*> fields[] = {
      {T, "T"},     {H, "H"},     {N, "N"},         {C, "C"},   {D, "D"},
      {l_t, "l_t"}, {l_s, "l_s"}, {heads, "heads"}, {d_ff, "d_ff"}};
  for (const auto& [v, name] : fields)
    if (v == 0)
      throw ShapeError(std::string("model config: ") + name + " must be >= 1");
  if (D % heads != 0)
    throw ShapeError("model config: D=" + std::to_string(D) +
                     " not divisible by heads=" + std::to_string(heads));
}

namespace {

void visit_layer(const std::string& prefix, EncoderLayerParams& lp,
                 const ModelParameters::Visitor& fn) {
  fn(prefix + ".w_q", lp.w_q);
  fn(prefix + ".w_k", lp.w_k);
  fn(prefix + ".w_v", lp.w_v);
  fn(prefix + ".w_o", lp.w_o);
  fn(prefix + ".ln1_gain", lp.ln1_gain);
  fn(prefix + ".ln1_bias", lp.ln1_bias);
  fn(prefix + ".w_1", lp.w_1);
  fn(prefix + ".b_1", lp.b_1);
  fn(prefix + ".w_2", lp.w_2);
  fn(prefix + ".b_2", lp.b_2);
  fn(prefix + ".ln2_gain", lp.ln2_gain);
  fn(prefix + ".ln2_bias", lp.ln2_bias);
}

}  // namespace

void ModelParameters::for_each_backbone(const Visitor& fn) {
  fn("input.w", input_w);
  fn("input.b", input_b);
  fn("p_temp", p_temp);
  fn("p_spa", p_spa);
  for (std::size_t l = 0; l < temporal.size(); ++l)
    visit_layer("temporal." + std::to_string(l), temporal[l], fn);
  for (std::size_t l = 0; l < spatial.size(); ++l)
    visit_layer("spatial." + std::to_string(l), spatial[l], fn);
}

void ModelParameters::for_each_head(const Visitor& fn) {
  fn("head.w", head_w);
  fn("head.b", head_b);
}

void ModelParameters::for_each(const Visitor& fn) {
  for_each_backbone(fn);
  for_each_head(fn);
}

std::vector<std::pair<std::string, Tensor>> ModelParameters::named_backbone() {
  std::vector<std::pair<std::string, Tensor>> out;
  for_each_backbone([&](const std::string& n, Tensor& t) {
    out.emplace_back(n, t);
  });
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParameters::named_head() {
  std::vector<std::pair<std::string, Tensor>> out;
  for_each_head([&](const std::string& n, Tensor& t) {
    out.emplace_back(n, t);
  });
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParameters::named_all() {
  auto out = named_backbone();
  for (auto& [n, t] : named_head()) out.emplace_back(n, t);
  return out;
}

std::size_t ModelParameters::backbone_param_count() {
  std::size_t n = 0;
  for_each_backbone([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

std::size_t ModelParameters::head_param_count() {
  std::size_t n = 0;
  for_each_head([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

ModelParameters ModelParameters::clone() const {
  ModelParameters copy = *this;  // shallow; replace every tensor below
  auto deep = [](Tensor& t) {
    t = Tensor(t.shape(), t.values(), t.requires_grad());
  };
  copy.for_each([&](const std::string&, Tensor& t) { deep(t); });
  return copy;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

EncoderLayerParams init_layer(const ModelConfig& cfg, Rng& rng) {
  const double wb = 1.0 / std::sqrt(static_cast<double>(cfg.D));
  EncoderLayerParams lp;
  lp.w_q = uniform_tensor({cfg.D, cfg.D}, wb, rng);
  lp.w_k = uniform_tensor({cfg.D, cfg.D}, wb, rng);
  lp.w_v = uniform_tensor({cfg.D, cfg.D}, wb, rng);
  lp.w_o = uniform_tensor({cfg.D, cfg.D}, wb, rng);
  lp.ln1_gain = Tensor::full({cfg.D}, 1.0);
  lp.ln1_bias = Tensor::zeros({cfg.D});
  lp.w_1 = uniform_tensor({cfg.D, cfg.d_ff}, wb, rng);
  lp.b_1 = Tensor::zeros({cfg.d_ff});
  lp.w_2 = uniform_tensor({cfg.d_ff, cfg.D},
                          1.0 / std::sqrt(static_cast<double>(cfg.d_ff)), rng);
  lp.b_2 = Tensor::zeros({cfg.D});
  lp.ln2_gain = Tensor::full({cfg.D}, 1.0);
  lp.ln2_bias = Tensor::zeros({cfg.D});
  return lp;
}

}  // namespace

ModelParameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const double db = 1.0 / std::sqrt(static_cast<double>(cfg.D));
  ModelParameters p;
  p.input_w = uniform_tensor({1, cfg.D}, 1.0, rng);  // fan_in = 1
  p.input_b = Tensor::zeros({cfg.D});
  p.p_temp = uniform_tensor({cfg.T, cfg.D}, db, rng);
  p.p_spa = uniform_tensor({cfg.N, cfg.D}, db, rng);
  for (std::size_t l = 0; l < cfg.l_t; ++l)
    p.temporal.push_back(init_layer(cfg, rng));
  for (std::size_t l = 0; l < cfg.l_s; ++l)
    p.spatial.push_back(init_layer(cfg, rng));
  p.head_w = uniform_tensor({cfg.D, cfg.H}, db, rng);
  p.head_b = Tensor::zeros({cfg.H});
  return p;
}

Tensor input_map(const Tensor& x, const ModelConfig& cfg,
                 const ModelParameters& params) {
  if (x.rank() < 2 || x.dim(-2) != cfg.T || x.dim(-1) != cfg.N)
    throw ShapeError("input_map: window " + shape_str(x.shape()) +
                     " does not end in [T=" + std::to_string(cfg.T) +
                     ", N=" + std::to_string(cfg.N) + "]");
  Tensor xt = transpose_last2(x);  // [.., N, T]
  Shape col_shape = xt.shape();
  col_shape.push_back(1);
  Tensor col = reshape(xt, std::move(col_shape));  // [.., N, T, 1]
  return sigmoid(add(matmul(col, params.input_w), params.input_b));
}

Tensor multi_head_attention(const Tensor& x, const EncoderLayerParams& layer,
                            const ModelConfig& cfg) {
  if (x.rank() < 2 || x.dim(-1) != cfg.D)
    throw ShapeError("multi_head_attention: input " + shape_str(x.shape()) +
                     " does not end in D=" + std::to_string(cfg.D));
  const std::size_t dk = cfg.head_dim();
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor q = matmul(x, layer.w_q);
  Tensor k = matmul(x, layer.w_k);
  Tensor v = matmul(x, layer.w_v);
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::size_t lo = h * dk, hi = (h + 1) * dk;
    Tensor qi = slice_axis(q, -1, lo, hi);
    Tensor ki = slice_axis(k, -1, lo, hi);
    Tensor vi = slice_axis(v, -1, lo, hi);
    Tensor scores = scale(matmul(qi, transpose_last2(ki)), inv_sqrt_dk);
    heads.push_back(matmul(softmax_lastaxis(scores), vi));
  }
  return matmul(concat_axis(heads, -1), layer.w_o);
}

Tensor attention_block(const Tensor& x, const EncoderLayerParams& layer,
                       const ModelConfig& cfg) {
  return layer_norm(add(x, multi_head_attention(x, layer, cfg)),
                    layer.ln1_gain, layer.ln1_bias);
}

Tensor feed_forward_block(const Tensor& x, const EncoderLayerParams& layer) {
  Tensor hidden = relu(add(matmul(x, layer.w_1), layer.b_1));
  Tensor ff = add(matmul(hidden, layer.w_2), layer.b_2);
  return layer_norm(add(x, ff), layer.ln2_gain, layer.ln2_bias);
}

namespace {

Tensor drop_axis(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + r : axis;
  Shape s;
  for (int i = 0; i < r; ++i)
    if (i != ax) s.push_back(x.shape()[i]);
  return reshape(x, std::move(s));
}

}  // namespace

Tensor temporal_encode(const Tensor& x, const ModelConfig& cfg,
                       const ModelParameters& params, const PromptSet* prompts,
                       ShapeTrace* trace) {
  Tensor z = add(input_map(x, cfg, params), params.p_temp);
  for (std::size_t l = 1; l <= cfg.l_t; ++l) {
    const std::size_t len_in = z.dim(-2);
    Injection inj = inject_temporal(z, l, prompts, cfg);
    Tensor y = feed_forward_block(attention_block(inj.input, params.temporal[l - 1], cfg),
                                  params.temporal[l - 1]);
    const std::size_t len_aug = inj.input.dim(-2);
    if (inj.lead > 0) y = slice_axis(y, -2, inj.lead, y.dim(-2));
    if (trace)
      trace->entries.push_back({'t', l, len_in, len_aug, y.dim(-2)});
    z = y;
  }
  return drop_axis(slice_axis(z, -2, cfg.T - 1, cfg.T), -2);
}

Tensor spatial_encode(const Tensor& z, const ModelConfig& cfg,
                      const ModelParameters& params, const PromptSet* prompts,
                      ShapeTrace* trace) {
  if (z.rank() < 2 || z.dim(-2) != cfg.N || z.dim(-1) != cfg.D)
    throw ShapeError("spatial_encode: input " + shape_str(z.shape()) +
                     " does not end in [N=" + std::to_string(cfg.N) +
                     ", D=" + std::to_string(cfg.D) + "]");
  Tensor s = add(z, params.p_spa);
  for (std::size_t l = 1; l <= cfg.l_s; ++l) {
    const std::size_t len_in = s.dim(-2);
    Injection inj = inject_spatial(s, l, prompts, cfg);
    Tensor y = feed_forward_block(attention_block(inj.input, params.spatial[l - 1], cfg),
                                  params.spatial[l - 1]);
    const std::size_t len_aug = inj.input.dim(-2);
    if (inj.lead > 0) y = slice_axis(y, -2, inj.lead, y.dim(-2));
    if (trace)
      trace->entries.push_back({'s', l, len_in, len_aug, y.dim(-2)});
    s = y;
  }
  return s;
}

Tensor head_map(const Tensor& z, const ModelParameters& params) {
  return sigmoid(add(matmul(z, params.head_w), params.head_b));
}

Tensor forward(const Tensor& X, const ModelConfig& cfg,
               const ModelParameters& params,
               std::span<const PromptSet* const> prompts, ShapeTrace* trace) {
  if (X.rank() < 3 || X.dim(-1) != cfg.C || X.dim(-2) != cfg.N ||
      X.dim(-3) != cfg.T)
    throw ShapeError("forward: input " + shape_str(X.shape()) +
                     " does not end in [T,N,C]=[" + std::to_string(cfg.T) +
                     "," + std::to_string(cfg.N) + "," + std::to_string(cfg.C) +
                     "]");
  if (!prompts.empty() && prompts.size() != cfg.C)
    throw ShapeError("forward: got " + std::to_string(prompts.size()) +
                     " prompt sets for C=" + std::to_string(cfg.C) +
                     " attributes");
  std::vector<Tensor> outputs;
  outputs.reserve(cfg.C);
  for (std::size_t c = 0; c < cfg.C; ++c) {
    Tensor xc = drop_axis(slice_axis(X, -1, c, c + 1), -1);  // [.., T, N]
    const PromptSet* p = prompts.empty() ? nullptr : prompts[c];
    Tensor zt = temporal_encode(xc, cfg, params, p, trace);
    Tensor zs = spatial_encode(zt, cfg, params, p, trace);
    Tensor yc = transpose_last2(head_map(zs, params));  // [.., H, N]
    Shape s = yc.shape();
    s.push_back(1);
    outputs.push_back(reshape(yc, std::move(s)));
  }
  return concat_axis(outputs, -1);
}

}  // namespace stpt
