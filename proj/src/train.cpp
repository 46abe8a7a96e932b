#include "train.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "rng.hpp"

namespace stpt {

namespace {

// Independent seed streams so optional draws (prompts) never shift the rest.
constexpr std::uint64_t kStreamParams = 0;
constexpr std::uint64_t kStreamHead = 1;
constexpr std::uint64_t kStreamPrompts = 2;
constexpr std::uint64_t kStreamShuffle = 3;

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kSingle: return "single";
    case Strategy::kFull: return "full";
    case Strategy::kFineTune: return "fine-tune";
    case Strategy::kPromptTune: return "prompt-tune";
  }
  return "?";
}

std::optional<Strategy> parse_strategy(std::string_view name) {
  if (name == "single") return Strategy::kSingle;
  if (name == "full") return Strategy::kFull;
  if (name == "fine-tune") return Strategy::kFineTune;
  if (name == "prompt-tune") return Strategy::kPromptTune;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (learning_rate <= 0.0)
    throw std::invalid_argument("train config: learning_rate must be > 0");
  if (batch_size == 0)
    throw std::invalid_argument("train config: batch_size must be >= 1");
  if (patience == 0)
    throw std::invalid_argument("train config: patience must be >= 1");
}

Tensor loss_rmse_mae(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("loss: prediction " + shape_str(pred.shape()) +
                     " vs target " + shape_str(target.shape()));
  Tensor diff = sub(pred, target);
  Tensor rmse = sqrt_elem(mean_all(mul(diff, diff)));
  Tensor mae = mean_all(abs_elem(diff));
  return add(rmse, mae);
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::register_params(
    std::vector<std::pair<std::string, Tensor>> trainables) {
  for (auto& [name, t] : trainables) {
    if (slots_.count(name))
      throw std::invalid_argument("adam: duplicate parameter '" + name + "'");
    Slot slot;
    slot.param = t;
    slot.m.assign(t.size(), 0.0);
    slot.v.assign(t.size(), 0.0);
    slots_.emplace(name, std::move(slot));
  }
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, slot] : slots_) {
    if (!slot.param.has_grad())
      throw std::invalid_argument("adam: missing gradient for trainable '" +
                                  name + "'");
    const auto& g = slot.param.grad();
    auto& p = slot.param.values_mut();
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grads() {
  for (auto& [name, slot] : slots_) slot.param.zero_grad();
}

std::vector<std::string> AdamOptimizer::state_keys() const {
  std::vector<std::string> keys;
  for (const auto& [name, slot] : slots_) keys.push_back(name);
  return keys;
}

namespace {

Tensor gather_batch(const std::vector<WindowSample>& ws,
                    const std::vector<std::size_t>& order, std::size_t begin,
                    std::size_t end, bool targets) {
  const Tensor& probe = targets ? ws[order[begin]].Y : ws[order[begin]].X;
  Shape shape;
  shape.push_back(end - begin);
  for (std::size_t d : probe.shape()) shape.push_back(d);
  std::vector<double> data;
  data.reserve(numel(shape));
  for (std::size_t i = begin; i < end; ++i) {
    const Tensor& t = targets ? ws[order[i]].Y : ws[order[i]].X;
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<const PromptSet*> prompt_span(const ModelConfig& cfg,
                                          const PromptSet& prompts) {
  std::vector<const PromptSet*> span;
  if (!prompts.empty())
    span.assign(cfg.C, &prompts);  // tuning runs on a single attribute
  return span;
}

std::vector<std::pair<std::string, Tensor>> trainable_set(
    Strategy strategy, ModelParameters& params, PromptSet& prompts) {
  std::vector<std::pair<std::string, Tensor>> out;
  if (strategy == Strategy::kPromptTune) {
    out = prompts.named();
    for (auto& [n, t] : params.named_head()) out.emplace_back(n, t);
  } else {
    out = params.named_all();
  }
  return out;
}

}  // namespace

double dataset_loss(const std::vector<WindowSample>& windows_list,
                    const ModelConfig& cfg, const ModelParameters& params,
                    const PromptSet* prompts, std::size_t batch_size) {
  if (windows_list.empty())
    throw std::invalid_argument("dataset_loss: no windows");
  std::vector<std::size_t> order(windows_list.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<const PromptSet*> span;
  if (prompts && !prompts->empty()) span.assign(cfg.C, prompts);

  double sse = 0.0, sae = 0.0;
  std::size_t count = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    Tensor x = gather_batch(windows_list, order, begin, end, false);
    Tensor y = gather_batch(windows_list, order, begin, end, true);
    Tensor pred = forward(x, cfg, params, span);
    const auto& pv = pred.values();
    const auto& yv = y.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double e = pv[i] - yv[i];
      sse += e * e;
      sae += std::fabs(e);
    }
    count += pv.size();
  }
  return std::sqrt(sse / static_cast<double>(count)) +
         sae / static_cast<double>(count);
}

LoopResult run_training_loop(const std::vector<WindowSample>& train_windows,
                             const std::vector<WindowSample>& val_windows,
                             const ModelConfig& cfg, const TrainConfig& tc,
                             ModelParameters& params, PromptSet& prompts,
                             const StepObserver* observer) {
  tc.validate();
  cfg.validate();
  if (train_windows.empty())
    throw std::invalid_argument("training: empty train window list");
  if (val_windows.empty())
    throw std::invalid_argument("training: empty validation window list");
  for (const WindowSample& w : train_windows)
    for (const Tensor* t : {&w.X, &w.Y})
      for (double v : t->values())
        if (v < 0.0 || v > 1.0)
          throw std::invalid_argument(
              "training: window values outside [0,1]; normalize first");

  // Freeze everything, then re-enable exactly the trainable subset.
  params.for_each([](const std::string&, Tensor& t) {
    t.set_requires_grad(false);
    t.zero_grad();
  });
  auto trainables = trainable_set(tc.strategy, params, prompts);
  for (auto& [name, t] : trainables) t.set_requires_grad(true);

  AdamOptimizer adam(tc.learning_rate);
  adam.register_params(trainables);

  auto prompts_span = prompt_span(cfg, prompts);

  LoopResult result;
  result.optimizer_keys = adam.state_keys();

  Rng shuffle_rng(Rng::derive(tc.seed, kStreamShuffle));
  std::vector<std::size_t> order(train_windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_values;
  std::size_t epochs_since_best = 0;
  bool out_of_steps = false;

  for (std::size_t epoch = 0; epoch < tc.max_epochs && !out_of_steps; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_weight = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += tc.batch_size) {
      const std::size_t end = std::min(order.size(), begin + tc.batch_size);
      Tensor x = gather_batch(train_windows, order, begin, end, false);
      Tensor y = gather_batch(train_windows, order, begin, end, true);
      Tape tape;
      {
        TapeScope scope(tape);
        Tensor pred = forward(x, cfg, params, prompts_span);
        Tensor loss = loss_rmse_mae(pred, y);
        tape.backward(loss);
        loss_sum += loss.item() * static_cast<double>(end - begin);
        loss_weight += end - begin;
      }
      adam.step();
      adam.zero_grads();
      ++result.steps;
      if (observer && *observer) (*observer)(result.steps, params, prompts);
      if (tc.max_steps > 0 && result.steps >= tc.max_steps) {
        out_of_steps = true;
        break;
      }
    }
    const double train_loss = loss_sum / static_cast<double>(loss_weight);
    const double val_loss =
        dataset_loss(val_windows, cfg, params,
                     prompts.empty() ? nullptr : &prompts, tc.batch_size);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back({epoch, train_loss, val_loss, secs});
    ++result.epochs_run;

    if (val_loss < best_val) {
      best_val = val_loss;
      epochs_since_best = 0;
      best_values.clear();
      for (auto& [name, t] : trainables) best_values.push_back(t.values());
    } else if (++epochs_since_best >= tc.patience) {
      break;
    }
  }

  if (!best_values.empty()) {
    for (std::size_t i = 0; i < trainables.size(); ++i)
      trainables[i].second.values_mut() = best_values[i];
  }
  result.best_val_loss = best_val;

  for (auto& [name, t] : trainables) {
    t.set_requires_grad(false);
    t.zero_grad();
  }
  return result;
}

namespace {

struct PreparedData {
  Normalizer norm;
  std::vector<WindowSample> train, val;
};

PreparedData prepare(const GridSeries& series, const ModelConfig& cfg) {
  Split sp = split_series(series, cfg.T, cfg.H);
  PreparedData out;
  out.norm = Normalizer::fit(sp.train);
  out.train = windows(out.norm.apply(sp.train), cfg.T, cfg.H);
  out.val = windows(out.norm.apply(sp.val), cfg.T, cfg.H);
  return out;
}

TrainResult finish(ModelConfig cfg, ModelParameters params, PromptSet prompts,
                   Normalizer norm, LoopResult loop) {
  TrainResult r;
  r.config = cfg;
  r.params = std::move(params);
  r.prompts = std::move(prompts);
  r.normalizer = std::move(norm);
  r.history = std::move(loop.history);
  r.epochs_run = loop.epochs_run;
  r.steps = loop.steps;
  // -1 marks "never validated" (zero-epoch runs); keeps provenance JSON-safe.
  r.best_val_loss =
      std::isfinite(loop.best_val_loss) ? loop.best_val_loss : -1.0;
  r.optimizer_keys = std::move(loop.optimizer_keys);
  return r;
}

}  // namespace

TrainResult pretrain(const GridSeries& series, ModelConfig cfg,
                     const TrainConfig& tc, const StepObserver* observer) {
  series.validate();
  cfg.N = series.regions();
  cfg.C = series.attributes();
  cfg.validate();
  PreparedData data = prepare(series, cfg);

  ModelParameters params =
      init_parameters(cfg, Rng::derive(tc.seed, kStreamParams));
  PromptSet no_prompts;
  LoopResult loop = run_training_loop(data.train, data.val, cfg, tc, params,
                                      no_prompts, observer);
  TrainResult r = finish(cfg, std::move(params), std::move(no_prompts),
                         std::move(data.norm), std::move(loop));
  r.trainable_count = r.params.backbone_param_count() + r.params.head_param_count();
  return r;
}

TrainResult prompt_tune(const ModelParameters& pretrained, ModelConfig cfg,
                        const GridSeries& series, const TrainConfig& tc,
                        const StepObserver* observer) {
  series.validate();
  if (series.regions() != cfg.N)
    throw ShapeError("prompt_tune: series has N=" +
                     std::to_string(series.regions()) +
                     " regions, checkpoint expects " + std::to_string(cfg.N));
  if (series.attributes() != 1)
    throw ShapeError("prompt_tune: series must be restricted to the target "
                     "attribute, got C=" +
                     std::to_string(series.attributes()));
  cfg.C = 1;
  cfg.validate();
  PreparedData data = prepare(series, cfg);

  ModelParameters params = pretrained.clone();
  if (!tc.warm_head) {
    ModelParameters fresh =
        init_parameters(cfg, Rng::derive(tc.seed, kStreamHead));
    params.head_w = fresh.head_w;
    params.head_b = fresh.head_b;
  }
  PromptSet prompts =
      init_prompts(tc.prompt, cfg, Rng::derive(tc.seed, kStreamPrompts));

  LoopResult loop = run_training_loop(data.train, data.val, cfg, tc, params,
                                      prompts, observer);
  TrainResult r = finish(cfg, std::move(params), std::move(prompts),
                         std::move(data.norm), std::move(loop));
  r.trainable_count = trainable_param_count(tc.prompt, cfg);
  return r;
}

TrainResult fine_tune(const ModelParameters& pretrained, ModelConfig cfg,
                      const GridSeries& series, const TrainConfig& tc,
                      const StepObserver* observer) {
  series.validate();
  if (series.regions() != cfg.N)
    throw ShapeError("fine_tune: series has N=" +
                     std::to_string(series.regions()) +
                     " regions, checkpoint expects " + std::to_string(cfg.N));
  cfg.C = series.attributes();
  cfg.validate();
  PreparedData data = prepare(series, cfg);

  ModelParameters params = pretrained.clone();
  PromptSet no_prompts;
  LoopResult loop = run_training_loop(data.train, data.val, cfg, tc, params,
                                      no_prompts, observer);
  TrainResult r = finish(cfg, std::move(params), std::move(no_prompts),
                         std::move(data.norm), std::move(loop));
  r.trainable_count = r.params.backbone_param_count() + r.params.head_param_count();
  return r;
}

}  // namespace stpt
