#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "checkpoint.hpp"
#include "dataio.hpp"
#include "metrics.hpp"
#include "train.hpp"

using namespace stpt;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

Checkpoint make_checkpoint(PromptVariant kind) {
  ModelConfig cfg;
  cfg.T = 4;
  cfg.H = 3;
  cfg.N = 4;
  cfg.C = 2;
  cfg.D = 8;
  cfg.l_t = 2;
  cfg.l_s = 1;
  cfg.heads = 2;
  cfg.d_ff = 16;
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.params = init_parameters(cfg, 42);
  ckpt.prompts = init_prompts({kind, 2, 2}, cfg, 43);
  ckpt.normalizer.min = {0.25, 1.0};
  ckpt.normalizer.max = {7.5, 3.3333333333333335};
  ckpt.attribute_names = {"alpha", "beta"};
  ckpt.strategy = "full";
  ckpt.seed = 12345;
  ckpt.epochs_run = 17;
  ckpt.final_val_loss = 0.1234567890123456789;
  ckpt.trainable_count = 999;
  return ckpt;
}

}  // namespace

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
  for (PromptVariant kind : {PromptVariant::kNone, PromptVariant::kStFull,
                             PromptVariant::kTiny}) {
    CAPTURE(variant_name(kind));
    const std::string p1 = temp_path("ckpt_rt1.stpt");
    const std::string p2 = temp_path("ckpt_rt2.stpt");
    Checkpoint ckpt = make_checkpoint(kind);
    ckpt.save(p1);
    Checkpoint loaded = Checkpoint::load(p1);
    loaded.save(p2);
    CHECK(slurp(p1) == slurp(p2));

    // every array reproduced bit-exactly
    auto a = ckpt.params.named_all();
    auto b = loaded.params.named_all();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      CHECK(a[i].second.values() == b[i].second.values());
    CHECK(loaded.normalizer.min == ckpt.normalizer.min);
    CHECK(loaded.normalizer.max == ckpt.normalizer.max);
    CHECK(loaded.final_val_loss == ckpt.final_val_loss);
    CHECK(loaded.seed == ckpt.seed);
    CHECK(loaded.attribute_names == ckpt.attribute_names);
    CHECK(loaded.prompts.spec.kind == kind);
  }
}

TEST_CASE("checkpoint header magic and version are enforced") {
  const std::string p = temp_path("ckpt_bad.stpt");
  {
    std::ofstream out(p, std::ios::binary);
    out << "NOTACKPT irrelevant";
  }
  CHECK_THROWS_AS(Checkpoint::load(p), DataError);

  Checkpoint ckpt = make_checkpoint(PromptVariant::kNone);
  ckpt.save(p);
  std::string blob = slurp(p);
  blob[8] = 9;  // version byte
  {
    std::ofstream out(p, std::ios::binary);
    out << blob;
  }
  CHECK_THROWS_WITH_AS(Checkpoint::load(p), doctest::Contains("version"),
                       DataError);

  CHECK_THROWS_AS(Checkpoint::load(temp_path("missing.stpt")), DataError);
}

TEST_CASE("loading reports shape mismatches by array name") {
  const std::string p = temp_path("ckpt_mismatch.stpt");
  Checkpoint ckpt = make_checkpoint(PromptVariant::kNone);
  // claim a different embedding size than the stored arrays
  ckpt.config.D = 16;
  ckpt.config.d_ff = 64;
  ckpt.save(p);
  CHECK_THROWS_WITH_AS(Checkpoint::load(p), doctest::Contains("input.w"),
                       ShapeError);
}

TEST_CASE("from_result carries provenance and evaluation uses it") {
  SynthSpec spec;
  spec.rows = 2;
  spec.cols = 2;
  spec.attributes = 2;
  spec.timesteps = 160;
  spec.seed = 5;
  GridSeries series = synthesize(spec);

  ModelConfig cfg;
  cfg.T = 4;
  cfg.H = 3;
  cfg.D = 8;
  cfg.l_t = 1;
  cfg.l_s = 1;
  cfg.heads = 2;
  cfg.d_ff = 16;
  TrainConfig tc;
  tc.strategy = Strategy::kFull;
  tc.max_epochs = 2;
  tc.patience = 5;
  tc.batch_size = 16;
  tc.seed = 7;
  TrainResult pre = pretrain(series, cfg, tc);

  const std::string p = temp_path("ckpt_prov.stpt");
  Checkpoint ckpt =
      Checkpoint::from_result(pre, series, Strategy::kFull, tc.seed);
  ckpt.save(p);
  Checkpoint loaded = Checkpoint::load(p);
  CHECK(loaded.strategy == "full");
  CHECK(loaded.seed == 7);
  CHECK(loaded.epochs_run == 2);
  CHECK(loaded.config.N == 4);
  CHECK(loaded.config.C == 2);

  // deterministic evaluation through the loaded checkpoint
  MetricsReport r1 = evaluate(loaded, series, SplitKind::kTest);
  MetricsReport r2 = evaluate(loaded, series, SplitKind::kTest);
  CHECK(r1.to_json() == r2.to_json());
  CHECK(r1.per_attribute.size() == 2);

  // a tuned checkpoint records its target and is evaluated on it by name
  GridSeries sel = select_attributes(series, {1});
  TrainConfig pt;
  pt.strategy = Strategy::kPromptTune;
  pt.learning_rate = 0.001;
  pt.max_epochs = 1;
  pt.patience = 5;
  pt.batch_size = 16;
  pt.seed = 7;
  pt.prompt = {PromptVariant::kStFull, 2, 0};
  pt.target_attribute = 1;
  TrainResult tuned = prompt_tune(pre.params, pre.config, sel, pt);
  Checkpoint tuned_ckpt =
      Checkpoint::from_result(tuned, sel, Strategy::kPromptTune, pt.seed, 1);
  CHECK(tuned_ckpt.target_attribute_name == series.attribute_names[1]);
  MetricsReport rt = evaluate(tuned_ckpt, series, SplitKind::kTest);
  REQUIRE(rt.per_attribute.size() == 1);
  CHECK(rt.per_attribute[0].name == series.attribute_names[1]);

  GridSeries renamed = series;
  renamed.attribute_names = {"x", "y"};
  CHECK_THROWS_AS(evaluate(tuned_ckpt, renamed, SplitKind::kTest), ShapeError);
}
