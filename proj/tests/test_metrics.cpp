#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "checkpoint.hpp"
#include "dataio.hpp"
#include "metrics.hpp"
#include "train.hpp"

using namespace stpt;

namespace {

GridSeries fixture_series(std::uint64_t seed, std::size_t attrs = 2) {
  SynthSpec spec;
  spec.rows = 2;
  spec.cols = 2;
  spec.attributes = attrs;
  spec.timesteps = 180;
  spec.seed = seed;
  return synthesize(spec);
}

ModelConfig fixture_config() {
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

Checkpoint fixture_checkpoint(const GridSeries& series, std::uint64_t seed) {
  ModelConfig cfg = fixture_config();
  TrainConfig tc;
  tc.strategy = Strategy::kFull;
  tc.max_epochs = 1;
  tc.batch_size = 16;
  tc.patience = 3;
  tc.seed = seed;
  TrainResult pre = pretrain(series, cfg, tc);
  return Checkpoint::from_result(pre, series, Strategy::kFull, seed);
}

// Independent metric computation: rebuild the split/windows by hand, run the
// model for predictions, then accumulate RMSE/MAE with plain loops on
// denormalized values.
struct OracleMetrics {
  std::vector<double> rmse_denorm, mae_denorm, rmse_norm, mae_norm;
};

OracleMetrics hand_loop_metrics(const Checkpoint& ckpt,
                                const GridSeries& series) {
  const ModelConfig& cfg = ckpt.config;
  const std::size_t total = series.timesteps;
  const std::size_t i2 = static_cast<std::size_t>(0.8 * total);
  GridSeries test;
  test.grid_rows = series.grid_rows;
  test.grid_cols = series.grid_cols;
  test.interval_minutes = series.interval_minutes;
  test.attribute_names = series.attribute_names;
  test.timesteps = total - i2;
  const std::size_t block = series.regions() * series.attributes();
  test.values.assign(series.values.begin() + i2 * block, series.values.end());

  const std::size_t n = test.regions(), c = test.attributes();
  std::vector<double> sse(c, 0.0), sae(c, 0.0);
  std::vector<double> sse_n(c, 0.0), sae_n(c, 0.0);
  std::vector<std::size_t> cnt(c, 0);
  for (std::size_t origin = 0; origin + cfg.T + cfg.H <= test.timesteps;
       ++origin) {
    // normalized input window
    std::vector<double> x(cfg.T * n * c);
    for (std::size_t t = 0; t < cfg.T; ++t)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t a = 0; a < c; ++a)
          x[(t * n + r) * c + a] =
              ckpt.normalizer.transform(test.at(origin + t, r, a), a);
    std::vector<const PromptSet*> span;
    if (!ckpt.prompts.empty()) span.assign(cfg.C, &ckpt.prompts);
    Tensor pred = forward(Tensor({cfg.T, n, c}, x), cfg, ckpt.params, span);
    for (std::size_t h = 0; h < cfg.H; ++h)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t a = 0; a < c; ++a) {
          const double p_norm = pred.values()[(h * n + r) * c + a];
          const double y_raw = test.at(origin + cfg.T + h, r, a);
          const double y_norm = ckpt.normalizer.transform(y_raw, a);
          const double p_raw = ckpt.normalizer.invert(p_norm, a);
          sse[a] += (p_raw - y_raw) * (p_raw - y_raw);
          sae[a] += std::fabs(p_raw - y_raw);
          sse_n[a] += (p_norm - y_norm) * (p_norm - y_norm);
          sae_n[a] += std::fabs(p_norm - y_norm);
          ++cnt[a];
        }
  }
  OracleMetrics out;
  for (std::size_t a = 0; a < c; ++a) {
    out.rmse_denorm.push_back(std::sqrt(sse[a] / cnt[a]));
    out.mae_denorm.push_back(sae[a] / cnt[a]);
    out.rmse_norm.push_back(std::sqrt(sse_n[a] / cnt[a]));
    out.mae_norm.push_back(sae_n[a] / cnt[a]);
  }
  return out;
}

}  // namespace

TEST_CASE("evaluate matches the hand-loop oracle on random fixtures") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    CAPTURE(seed);
    GridSeries series = fixture_series(seed);
    Checkpoint ckpt = fixture_checkpoint(series, seed);
    MetricsReport report = evaluate(ckpt, series, SplitKind::kTest);
    OracleMetrics oracle = hand_loop_metrics(ckpt, series);
    REQUIRE(report.per_attribute.size() == oracle.rmse_denorm.size());
    for (std::size_t a = 0; a < report.per_attribute.size(); ++a) {
      CHECK(std::fabs(report.per_attribute[a].rmse_denorm -
                      oracle.rmse_denorm[a]) < 1e-10);
      CHECK(std::fabs(report.per_attribute[a].mae_denorm -
                      oracle.mae_denorm[a]) < 1e-10);
      CHECK(std::fabs(report.per_attribute[a].rmse_norm -
                      oracle.rmse_norm[a]) < 1e-10);
      CHECK(std::fabs(report.per_attribute[a].mae_norm -
                      oracle.mae_norm[a]) < 1e-10);
    }
  }
}

TEST_CASE("constant-0.5 predictor matches the oracle") {
  GridSeries series = fixture_series(9);
  Checkpoint ckpt = fixture_checkpoint(series, 9);
  // zero head forces sigmoid(0) = 0.5 everywhere
  ckpt.params.head_w = Tensor::zeros(ckpt.params.head_w.shape());
  ckpt.params.head_b = Tensor::zeros(ckpt.params.head_b.shape());

  MetricsReport report = evaluate(ckpt, series, SplitKind::kTest);
  OracleMetrics oracle = hand_loop_metrics(ckpt, series);
  for (std::size_t a = 0; a < report.per_attribute.size(); ++a) {
    CHECK(std::fabs(report.per_attribute[a].rmse_denorm -
                    oracle.rmse_denorm[a]) < 1e-10);
    CHECK(std::fabs(report.per_attribute[a].mae_denorm -
                    oracle.mae_denorm[a]) < 1e-10);
  }
}

TEST_CASE("identical predictions and targets give zero error") {
  // The metric itself: equal arrays produce rmse = mae = 0.
  std::vector<double> y = {0.2, 0.4, 0.8, 0.1};
  CHECK(testsupport::naive_rmse(y, y) == 0.0);
  CHECK(testsupport::naive_mae(y, y) == 0.0);
  Tensor t({4}, y);
  CHECK(loss_rmse_mae(t, t).item() == 0.0);
}

TEST_CASE("averages equal the arithmetic mean of per-attribute rows") {
  GridSeries series = fixture_series(11, 3);
  Checkpoint ckpt = fixture_checkpoint(series, 11);
  MetricsReport report = evaluate(ckpt, series, SplitKind::kVal);
  double rmse = 0.0, mae = 0.0;
  for (const auto& m : report.per_attribute) {
    rmse += m.rmse_denorm;
    mae += m.mae_denorm;
  }
  CHECK(report.avg_rmse_denorm ==
        doctest::Approx(rmse / report.per_attribute.size()).epsilon(1e-14));
  CHECK(report.avg_mae_denorm ==
        doctest::Approx(mae / report.per_attribute.size()).epsilon(1e-14));

  // report carries provenance for self-describing tables
  CHECK(report.config_hash == config_fingerprint(ckpt.config));
  CHECK(report.trainable_params == ckpt.trainable_count);
  nlohmann::ordered_json j = report.to_json();
  CHECK(j.at("per_attribute").size() == 3);
}

TEST_CASE("evaluate rejects mismatched datasets") {
  GridSeries series = fixture_series(13);
  Checkpoint ckpt = fixture_checkpoint(series, 13);

  SynthSpec other;
  other.rows = 3;
  other.cols = 2;
  other.attributes = 2;
  other.timesteps = 180;
  CHECK_THROWS_AS(evaluate(ckpt, synthesize(other), SplitKind::kTest),
                  ShapeError);

  GridSeries wrong_c = select_attributes(series, {0});
  CHECK_THROWS_AS(evaluate(ckpt, wrong_c, SplitKind::kTest), ShapeError);
}
