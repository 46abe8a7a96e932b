#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "checkpoint.hpp"
#include "dataio.hpp"
#include "model.hpp"
#include "prompt.hpp"
#include "rng.hpp"
#include "train.hpp"

using namespace stpt;

namespace {

std::uint64_t bits_hash(const std::vector<double>& v) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double d : v) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    for (int i = 0; i < 8; ++i) {
      h ^= (u >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

std::uint64_t params_hash(ModelParameters& p, bool backbone_only) {
  std::uint64_t h = 0;
  auto visit = [&](const std::string&, Tensor& t) {
    h ^= bits_hash(t.values()) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  };
  if (backbone_only)
    p.for_each_backbone(visit);
  else
    p.for_each(visit);
  return h;
}

GridSeries small_series(std::uint64_t seed = 3, std::size_t steps = 160,
                        std::size_t attrs = 2) {
  SynthSpec spec;
  spec.rows = 2;
  spec.cols = 2;
  spec.attributes = attrs;
  spec.timesteps = steps;
  spec.seed = seed;
  return synthesize(spec);
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.T = 4;
  cfg.H = 3;
  cfg.D = 8;
  cfg.l_t = 1;
  cfg.l_s = 1;
  cfg.heads = 2;
  cfg.d_ff = 16;
  return cfg;
}

TrainConfig quick_train(Strategy s, std::uint64_t seed, std::size_t epochs) {
  TrainConfig tc;
  tc.strategy = s;
  tc.learning_rate = s == Strategy::kPromptTune || s == Strategy::kFineTune
                         ? 0.001
                         : 0.003;
  tc.batch_size = 16;
  tc.max_epochs = epochs;
  tc.patience = 1000;
  tc.seed = seed;
  return tc;
}

}  // namespace

TEST_CASE("loss fixtures") {
  Tensor y({2, 2}, {0.1, 0.4, 0.7, 0.2});
  CHECK(loss_rmse_mae(y, y).item() == 0.0);

  Tensor shifted({2, 2}, {1.1, 1.4, 1.7, 1.2});
  CHECK(loss_rmse_mae(shifted, y).item() == doctest::Approx(2.0).epsilon(1e-12));

  Tensor pred({2}, {1.0, 3.0});
  Tensor truth({2}, {1.0, 1.0});  // errors {0, 2}
  CHECK(loss_rmse_mae(pred, truth).item() ==
        doctest::Approx(std::sqrt(2.0) + 1.0).epsilon(1e-12));

  CHECK_THROWS_AS(loss_rmse_mae(pred, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("adam: zero gradient leaves parameters, advances step") {
  Tensor p({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(scale(sum_all(p), 0.0));  // allocates all-zero grads
  }
  AdamOptimizer adam(0.01);
  adam.register_params({{"p", p}});
  adam.step();
  CHECK(p.values() == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam first step matches the closed-form bias-corrected update") {
  const double lr = 0.01, eps = 1e-8;
  Tensor p({3}, {1.0, -2.0, 0.5});
  Tensor factor({3}, {0.2, -0.4, 0.8});
  p.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(mul(p, factor)));  // grad = factor
  }
  AdamOptimizer adam(lr);
  adam.register_params({{"p", p}});
  adam.step();
  // t=1: mhat = g, vhat = g^2, so delta = -lr * g / (|g| + eps)
  const std::vector<double> expect = {
      1.0 - lr * 0.2 / (0.2 + eps), -2.0 - lr * (-0.4) / (0.4 + eps),
      0.5 - lr * 0.8 / (0.8 + eps)};
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(p.values()[i] == doctest::Approx(expect[i]).epsilon(1e-14));

  CHECK_THROWS_AS(
      [&]() {
        Tensor q({2}, {1.0, 2.0});
        AdamOptimizer a2(lr);
        a2.register_params({{"q", q}});
        a2.step();  // no gradient present
      }(),
      std::invalid_argument);
}

TEST_CASE("adam second step with moment persistence") {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g = 0.3;
  Tensor p({1}, {2.0});
  AdamOptimizer adam(lr);
  adam.register_params({{"p", p}});
  double expect = 2.0;

  double m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    p.set_requires_grad(true);
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(scale(sum_all(p), g));  // constant gradient g
    }
    adam.step();
    p.zero_grad();
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    expect -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(p.values()[0] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("pretrain is deterministic and strategy-label independent") {
  GridSeries series = small_series();
  ModelConfig cfg = small_model();
  TrainConfig tc = quick_train(Strategy::kFull, 11, 3);

  TrainResult a = pretrain(series, cfg, tc);
  TrainResult b = pretrain(series, cfg, tc);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_loss == b.history[i].val_loss);
  }
  CHECK(params_hash(a.params, false) == params_hash(b.params, false));

  // Single-train on a one-attribute series is the same code path.
  GridSeries sel = select_attributes(series, {0});
  TrainConfig ts = quick_train(Strategy::kSingle, 11, 3);
  TrainConfig tf = quick_train(Strategy::kFull, 11, 3);
  tf.learning_rate = ts.learning_rate;
  TrainResult s1 = pretrain(sel, cfg, ts);
  TrainResult s2 = pretrain(sel, cfg, tf);
  CHECK(params_hash(s1.params, false) == params_hash(s2.params, false));
}

TEST_CASE("training rejects bad inputs") {
  GridSeries series = small_series();
  ModelConfig cfg = small_model();
  TrainConfig tc = quick_train(Strategy::kFull, 1, 1);

  tc.learning_rate = 0.0;
  CHECK_THROWS_AS(pretrain(series, cfg, tc), std::invalid_argument);
  tc.learning_rate = 0.003;

  GridSeries tiny = small_series(3, 20);  // too short to split
  CHECK_THROWS_AS(pretrain(tiny, cfg, tc), DataError);

  // un-normalized windows rejected by the core loop
  auto raw = windows(series, cfg.T, cfg.H);
  ModelParameters params = init_parameters(cfg, 1);
  PromptSet none;
  ModelConfig bad = cfg;
  bad.N = series.regions();
  bad.C = series.attributes();
  CHECK_THROWS_AS(
      run_training_loop(raw, raw, bad, tc, params, none, nullptr),
      std::invalid_argument);
}

TEST_CASE("freeze contract: backbone bit-identical through prompt tuning") {
  GridSeries series = small_series(5);
  ModelConfig cfg = small_model();
  TrainResult pre = pretrain(series, cfg, quick_train(Strategy::kFull, 7, 2));
  const std::uint64_t theta_before = params_hash(pre.params, true);

  GridSeries sel = select_attributes(series, {1});
  for (PromptVariant kind : {PromptVariant::kStFull, PromptVariant::kTiny,
                             PromptVariant::kShallow, PromptVariant::kAdd,
                             PromptVariant::kNone}) {
    CAPTURE(variant_name(kind));
    TrainConfig tc = quick_train(Strategy::kPromptTune, 13, 1000);
    tc.prompt = {kind, 2, 2};
    tc.max_steps = 100;
    tc.target_attribute = 1;
    TrainResult tuned = prompt_tune(pre.params, pre.config, sel, tc);
    CHECK(tuned.steps == 100);

    // source untouched AND the tuned copy's backbone identical to source
    CHECK(params_hash(pre.params, true) == theta_before);
    auto src = pre.params.named_backbone();
    auto dst = tuned.params.named_backbone();
    REQUIRE(src.size() == dst.size());
    for (std::size_t i = 0; i < src.size(); ++i)
      CHECK(src[i].second.values() == dst[i].second.values());

    // optimizer state covers exactly the prompt tokens plus the head
    std::vector<std::string> expect_keys;
    for (auto& [n, t] : tuned.prompts.named()) expect_keys.push_back(n);
    expect_keys.push_back("head.b");
    expect_keys.push_back("head.w");
    std::sort(expect_keys.begin(), expect_keys.end());
    CHECK(tuned.optimizer_keys == expect_keys);
  }
}

TEST_CASE("trainable set under full strategies covers the whole model") {
  GridSeries series = small_series(9);
  ModelConfig cfg = small_model();
  TrainConfig tc = quick_train(Strategy::kFull, 3, 1);
  TrainResult pre = pretrain(series, cfg, tc);

  std::vector<std::string> expect;
  for (auto& [n, t] : pre.params.named_all()) expect.push_back(n);
  std::sort(expect.begin(), expect.end());
  CHECK(pre.optimizer_keys == expect);

  GridSeries sel = select_attributes(series, {0});
  TrainConfig ft = quick_train(Strategy::kFineTune, 3, 1);
  ft.target_attribute = 0;
  TrainResult fine = fine_tune(pre.params, pre.config, sel, ft);
  CHECK(fine.optimizer_keys == expect);
  CHECK(fine.trainable_count ==
        pre.params.backbone_param_count() + pre.params.head_param_count());
}

TEST_CASE("collapse: st with n_st=0 tracks head-only tuning step for step") {
  GridSeries series = small_series(21);
  ModelConfig cfg = small_model();
  TrainResult pre = pretrain(series, cfg, quick_train(Strategy::kFull, 5, 2));
  GridSeries sel = select_attributes(series, {0});

  auto run = [&](PromptVariant kind, std::size_t n_st) {
    TrainConfig tc = quick_train(Strategy::kPromptTune, 17, 1000);
    tc.prompt = {kind, n_st, 0};
    tc.max_steps = 50;
    tc.target_attribute = 0;
    std::vector<std::uint64_t> trajectory;
    StepObserver obs = [&](std::size_t, ModelParameters& p, PromptSet&) {
      trajectory.push_back(bits_hash(p.head_w.values()) ^
                           bits_hash(p.head_b.values()));
    };
    TrainResult r = prompt_tune(pre.params, pre.config, sel, tc, &obs);
    return std::pair{trajectory, params_hash(r.params, false)};
  };

  auto [traj_zero, final_zero] = run(PromptVariant::kStFull, 0);
  auto [traj_none, final_none] = run(PromptVariant::kNone, 0);
  REQUIRE(traj_zero.size() == 50);
  CHECK(traj_zero == traj_none);
  CHECK(final_zero == final_none);
}

TEST_CASE("fine-tune with zero epochs returns the pretrained parameters") {
  GridSeries series = small_series(33);
  ModelConfig cfg = small_model();
  TrainResult pre = pretrain(series, cfg, quick_train(Strategy::kFull, 9, 2));
  GridSeries sel = select_attributes(series, {0});
  TrainConfig tc = quick_train(Strategy::kFineTune, 9, 0);
  tc.target_attribute = 0;
  TrainResult tuned = fine_tune(pre.params, pre.config, sel, tc);
  CHECK(params_hash(tuned.params, false) == params_hash(pre.params, false));
  CHECK(tuned.epochs_run == 0);
}

TEST_CASE("memorization: loss falls and fine-tune fits at least as well") {
  // Fixed 8-window suite; both tuners get the same step budget.
  GridSeries series = small_series(41, 160);
  ModelConfig cfg = small_model();
  cfg.D = 16;
  cfg.d_ff = 32;
  TrainResult pre = pretrain(series, cfg, quick_train(Strategy::kFull, 19, 2));
  GridSeries sel = select_attributes(series, {0});

  Split sp = split_series(sel, cfg.T, cfg.H);
  Normalizer norm = Normalizer::fit(sp.train);
  GridSeries normalized = norm.apply(sp.train);
  auto wins = windows(normalized, cfg.T, cfg.H);
  wins.resize(8);

  auto run = [&](Strategy strategy) {
    ModelConfig c1 = pre.config;
    c1.C = 1;
    ModelParameters params = pre.params.clone();
    PromptSet prompts;
    TrainConfig tc = quick_train(strategy, 23, 400);
    tc.batch_size = 8;
    tc.target_attribute = 0;
    if (strategy == Strategy::kPromptTune) {
      tc.prompt = {PromptVariant::kStFull, 2, 0};
      prompts = init_prompts(tc.prompt, c1, 23);
    }
    LoopResult loop =
        run_training_loop(wins, wins, c1, tc, params, prompts, nullptr);
    return loop;
  };

  LoopResult fine = run(Strategy::kFineTune);
  LoopResult prompt = run(Strategy::kPromptTune);
  CHECK(fine.history.back().train_loss < fine.history.front().train_loss);
  CHECK(prompt.history.back().train_loss < prompt.history.front().train_loss);
  // full capacity fits the fixed suite at least as well
  CHECK(fine.history.back().train_loss <=
        prompt.history.back().train_loss + 1e-9);
}

TEST_CASE("early stopping restores the best-validation parameters") {
  GridSeries series = small_series(55, 200);
  ModelConfig cfg = small_model();
  TrainConfig tc = quick_train(Strategy::kFull, 29, 40);
  tc.patience = 3;
  TrainResult r = pretrain(series, cfg, tc);
  CHECK(r.epochs_run <= 40);
  double best = r.history.front().val_loss;
  for (const auto& e : r.history) best = std::min(best, e.val_loss);
  CHECK(r.best_val_loss == doctest::Approx(best).epsilon(1e-12));
}
