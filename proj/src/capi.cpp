#include "stpt/stpt.h"

#include <cstring>
#include <new>
#include <string>

#include <json.hpp>

#include "checkpoint.hpp"
#include "dataio.hpp"
#include "experiments.hpp"
#include "metrics.hpp"
#include "train.hpp"

using nlohmann::ordered_json;

struct stpt_series {
  stpt::GridSeries data;
};

namespace {

thread_local std::string g_last_error = "ok";

stpt_status fail(stpt_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

// Translates C++ exceptions into status codes; body returns STPT_OK.
template <class Fn>
stpt_status guarded(Fn&& body) {
  try {
    return body();
  } catch (const stpt::ShapeError& e) {
    return fail(STPT_ERR_SHAPE, e.what());
  } catch (const stpt::DataError& e) {
    return fail(STPT_ERR_DATA, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(STPT_ERR_USAGE, e.what());
  } catch (const std::bad_alloc&) {
    return fail(STPT_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(STPT_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(STPT_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

stpt_status require(bool cond, const char* message) {
  if (!cond) throw std::invalid_argument(message);
  return STPT_OK;
}

stpt::ModelConfig to_model_config(const stpt_model_config* m) {
  require(m != nullptr, "model config is null");
  stpt::ModelConfig cfg;
  cfg.T = static_cast<std::size_t>(m->T);
  cfg.H = static_cast<std::size_t>(m->H);
  cfg.D = static_cast<std::size_t>(m->D);
  cfg.l_t = static_cast<std::size_t>(m->l_t);
  cfg.l_s = static_cast<std::size_t>(m->l_s);
  cfg.heads = static_cast<std::size_t>(m->heads);
  cfg.d_ff = static_cast<std::size_t>(m->d_ff);
  return cfg;
}

stpt::PromptSpec to_prompt_spec(const stpt_train_config* t) {
  stpt::PromptSpec spec;
  switch (t->variant) {
    case STPT_VARIANT_NONE: spec.kind = stpt::PromptVariant::kNone; break;
    case STPT_VARIANT_ST: spec.kind = stpt::PromptVariant::kStFull; break;
    case STPT_VARIANT_TINY: spec.kind = stpt::PromptVariant::kTiny; break;
    case STPT_VARIANT_SHALLOW: spec.kind = stpt::PromptVariant::kShallow; break;
    case STPT_VARIANT_ADD: spec.kind = stpt::PromptVariant::kAdd; break;
    default: throw std::invalid_argument("unknown prompt variant code");
  }
  spec.n_st = static_cast<std::size_t>(t->n_st < 0 ? 0 : t->n_st);
  spec.n_ti = static_cast<std::size_t>(t->n_ti < 0 ? 0 : t->n_ti);
  return spec;
}

stpt::TrainConfig to_train_config(const stpt_train_config* t) {
  require(t != nullptr, "train config is null");
  stpt::TrainConfig tc;
  switch (t->strategy) {
    case STPT_STRATEGY_SINGLE: tc.strategy = stpt::Strategy::kSingle; break;
    case STPT_STRATEGY_FULL: tc.strategy = stpt::Strategy::kFull; break;
    case STPT_STRATEGY_FINE_TUNE: tc.strategy = stpt::Strategy::kFineTune; break;
    case STPT_STRATEGY_PROMPT_TUNE:
      tc.strategy = stpt::Strategy::kPromptTune;
      break;
    default: throw std::invalid_argument("unknown strategy code");
  }
  tc.learning_rate = t->learning_rate;
  tc.batch_size = static_cast<std::size_t>(t->batch_size);
  tc.max_epochs = static_cast<std::size_t>(t->max_epochs);
  tc.patience = static_cast<std::size_t>(t->patience);
  tc.seed = t->seed;
  tc.prompt = to_prompt_spec(t);
  tc.target_attribute = t->target_attribute;
  tc.max_steps = static_cast<std::size_t>(t->max_steps < 0 ? 0 : t->max_steps);
  tc.warm_head = t->warm_head != 0;
  return tc;
}

std::string history_to_json(const std::vector<stpt::EpochRecord>& history) {
  ordered_json j = ordered_json::array();
  for (const auto& e : history)
    j.push_back({{"epoch", e.epoch},
                 {"train_loss", e.train_loss},
                 {"val_loss", e.val_loss},
                 {"seconds", e.seconds}});
  return j.dump(2);
}

}  // namespace

extern "C" {

const char* stpt_last_error(void) { return g_last_error.c_str(); }

void stpt_string_free(char* s) { delete[] s; }

void stpt_synth_spec_default(stpt_synth_spec* spec) {
  if (!spec) return;
  *spec = {4, 4, 4, 2000, 60, 0.5, 1};
}

stpt_status stpt_series_synthesize(const stpt_synth_spec* spec,
                                   stpt_series** out) {
  return guarded([&]() {
    require(spec && out, "synthesize: null argument");
    require(spec->rows > 0 && spec->cols > 0 && spec->attributes > 0 &&
                spec->timesteps > 0 && spec->interval_minutes > 0,
            "synthesize: dimensions must be positive");
    stpt::SynthSpec s;
    s.rows = static_cast<std::size_t>(spec->rows);
    s.cols = static_cast<std::size_t>(spec->cols);
    s.attributes = static_cast<std::size_t>(spec->attributes);
    s.timesteps = static_cast<std::size_t>(spec->timesteps);
    s.interval_minutes = static_cast<std::size_t>(spec->interval_minutes);
    s.shared_fraction = spec->shared_fraction;
    s.seed = spec->seed;
    *out = new stpt_series{stpt::synthesize(s)};
    return STPT_OK;
  });
}

stpt_status stpt_series_load(const char* path, stpt_series** out) {
  return guarded([&]() {
    require(path && out, "load: null argument");
    *out = new stpt_series{stpt::load_grid_file(path)};
    return STPT_OK;
  });
}

stpt_status stpt_series_save(const stpt_series* series, const char* path) {
  return guarded([&]() {
    require(series && path, "save: null argument");
    stpt::save_grid_file(series->data, path);
    return STPT_OK;
  });
}

stpt_status stpt_series_select(const stpt_series* series,
                               const int32_t* indices, int32_t count,
                               stpt_series** out) {
  return guarded([&]() {
    require(series && indices && out && count > 0, "select: null argument");
    std::vector<std::size_t> idx;
    for (int32_t i = 0; i < count; ++i) {
      require(indices[i] >= 0, "select: negative index");
      idx.push_back(static_cast<std::size_t>(indices[i]));
    }
    *out = new stpt_series{stpt::select_attributes(series->data, idx)};
    return STPT_OK;
  });
}

void stpt_series_free(stpt_series* series) { delete series; }

stpt_status stpt_series_get_info(const stpt_series* series,
                                 stpt_series_info* out) {
  return guarded([&]() {
    require(series && out, "get_info: null argument");
    out->rows = static_cast<int32_t>(series->data.grid_rows);
    out->cols = static_cast<int32_t>(series->data.grid_cols);
    out->attributes = static_cast<int32_t>(series->data.attributes());
    out->timesteps = static_cast<int64_t>(series->data.timesteps);
    out->interval_minutes =
        static_cast<int32_t>(series->data.interval_minutes);
    return STPT_OK;
  });
}

const char* stpt_series_attribute_name(const stpt_series* series,
                                       int32_t index) {
  if (!series || index < 0 ||
      static_cast<std::size_t>(index) >= series->data.attributes())
    return nullptr;
  return series->data.attribute_names[static_cast<std::size_t>(index)].c_str();
}

void stpt_model_config_default(stpt_model_config* cfg) {
  if (!cfg) return;
  *cfg = {12, 12, 32, 2, 2, 4, 128};
}

void stpt_train_config_default(stpt_train_config* cfg,
                               stpt_strategy strategy) {
  if (!cfg) return;
  cfg->strategy = strategy;
  cfg->learning_rate =
      (strategy == STPT_STRATEGY_SINGLE || strategy == STPT_STRATEGY_FULL)
          ? 0.003
          : 0.001;
  cfg->batch_size = 32;
  cfg->max_epochs = 200;
  cfg->patience = 10;
  cfg->seed = 1;
  cfg->variant =
      strategy == STPT_STRATEGY_PROMPT_TUNE ? STPT_VARIANT_ST : STPT_VARIANT_NONE;
  cfg->n_st = 2;
  cfg->n_ti = 2;
  cfg->target_attribute = -1;
  cfg->max_steps = 0;
  cfg->warm_head = 0;
}

stpt_status stpt_pretrain(const stpt_series* series,
                          const stpt_model_config* model,
                          const stpt_train_config* train,
                          const char* checkpoint_out, char** history_json) {
  return guarded([&]() {
    require(series && model && train && checkpoint_out,
            "pretrain: null argument");
    stpt::ModelConfig cfg = to_model_config(model);
    stpt::TrainConfig tc = to_train_config(train);
    require(tc.strategy == stpt::Strategy::kFull ||
                tc.strategy == stpt::Strategy::kSingle,
            "pretrain: strategy must be 'full' or 'single'");
    stpt::GridSeries data = series->data;
    std::int64_t target = -1;
    if (tc.target_attribute >= 0) {
      target = tc.target_attribute;
      data = stpt::select_attributes(
          data, {static_cast<std::size_t>(tc.target_attribute)});
    }
    stpt::TrainResult result = stpt::pretrain(data, cfg, tc);
    stpt::Checkpoint ckpt = stpt::Checkpoint::from_result(
        result, data, tc.strategy, tc.seed, target);
    ckpt.save(checkpoint_out);
    if (history_json) *history_json = dup_string(history_to_json(result.history));
    return STPT_OK;
  });
}

stpt_status stpt_tune(const char* checkpoint_in, const stpt_series* series,
                      const stpt_train_config* train,
                      const char* checkpoint_out, char** history_json) {
  return guarded([&]() {
    require(checkpoint_in && series && train && checkpoint_out,
            "tune: null argument");
    stpt::TrainConfig tc = to_train_config(train);
    require(tc.strategy == stpt::Strategy::kFineTune ||
                tc.strategy == stpt::Strategy::kPromptTune,
            "tune: strategy must be 'fine-tune' or 'prompt-tune'");
    require(tc.target_attribute >= 0, "tune: target attribute required");
    stpt::Checkpoint source = stpt::Checkpoint::load(checkpoint_in);
    stpt::GridSeries sel = stpt::select_attributes(
        series->data, {static_cast<std::size_t>(tc.target_attribute)});
    stpt::TrainResult result =
        tc.strategy == stpt::Strategy::kPromptTune
            ? stpt::prompt_tune(source.params, source.config, sel, tc)
            : stpt::fine_tune(source.params, source.config, sel, tc);
    stpt::Checkpoint ckpt = stpt::Checkpoint::from_result(
        result, sel, tc.strategy, tc.seed, tc.target_attribute);
    ckpt.save(checkpoint_out);
    if (history_json) *history_json = dup_string(history_to_json(result.history));
    return STPT_OK;
  });
}

stpt_status stpt_evaluate(const char* checkpoint_in, const stpt_series* series,
                          int32_t split, char** report_json) {
  return guarded([&]() {
    require(checkpoint_in && series && report_json, "evaluate: null argument");
    require(split >= 0 && split <= 2, "evaluate: split must be 0, 1 or 2");
    stpt::Checkpoint ckpt = stpt::Checkpoint::load(checkpoint_in);
    stpt::MetricsReport report =
        stpt::evaluate(ckpt, series->data, static_cast<stpt::SplitKind>(split));
    *report_json = dup_string(report.to_json().dump(2));
    return STPT_OK;
  });
}

stpt_status stpt_checkpoint_inspect(const char* path, char** info_json) {
  return guarded([&]() {
    require(path && info_json, "inspect: null argument");
    stpt::Checkpoint ckpt = stpt::Checkpoint::load(path);
    ordered_json j{
        {"config",
         {{"T", ckpt.config.T},
          {"H", ckpt.config.H},
          {"N", ckpt.config.N},
          {"C", ckpt.config.C},
          {"D", ckpt.config.D},
          {"l_t", ckpt.config.l_t},
          {"l_s", ckpt.config.l_s},
          {"heads", ckpt.config.heads},
          {"d_ff", ckpt.config.d_ff}}},
        {"strategy", ckpt.strategy},
        {"prompt_variant", stpt::variant_name(ckpt.prompts.spec.kind)},
        {"n_st", ckpt.prompts.spec.n_st},
        {"n_ti", ckpt.prompts.spec.n_ti},
        {"seed", ckpt.seed},
        {"epochs_run", ckpt.epochs_run},
        {"final_val_loss", ckpt.final_val_loss},
        {"target_attribute", ckpt.target_attribute},
        {"target_attribute_name", ckpt.target_attribute_name},
        {"trainable_count", ckpt.trainable_count},
        {"attribute_names", ckpt.attribute_names}};
    *info_json = dup_string(j.dump(2));
    return STPT_OK;
  });
}

stpt_status stpt_count_params(const stpt_model_config* model, int32_t rows,
                              int32_t cols, stpt_variant variant, int32_t n_st,
                              int32_t n_ti, int64_t* out_count) {
  return guarded([&]() {
    require(model && out_count, "count_params: null argument");
    require(rows > 0 && cols > 0, "count_params: rows/cols must be positive");
    stpt::ModelConfig cfg = to_model_config(model);
    cfg.N = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    stpt_train_config probe{};
    probe.variant = variant;
    probe.n_st = n_st;
    probe.n_ti = n_ti;
    stpt::PromptSpec spec = to_prompt_spec(&probe);
    *out_count = static_cast<int64_t>(stpt::trainable_param_count(spec, cfg));
    return STPT_OK;
  });
}

void stpt_exp_options_default(stpt_exp_options* opts) {
  if (!opts) return;
  *opts = {5, 1, 40, 25, 5, 0.003, 0.001, 32, 2, 2, 2, 0, -1};
}

stpt_status stpt_experiment(const char* kind, const stpt_series* series,
                            const stpt_model_config* model,
                            const stpt_exp_options* options,
                            const char* out_dir, char** table_text) {
  return guarded([&]() {
    require(kind && series && model && options && out_dir,
            "experiment: null argument");
    stpt::ModelConfig cfg = to_model_config(model);
    stpt::ExperimentOptions opts;
    opts.n_seeds = static_cast<std::size_t>(options->n_seeds);
    opts.base_seed = options->base_seed;
    opts.pretrain_epochs = static_cast<std::size_t>(options->pretrain_epochs);
    opts.tune_epochs = static_cast<std::size_t>(options->tune_epochs);
    opts.patience = static_cast<std::size_t>(options->patience);
    opts.pretrain_lr = options->pretrain_lr;
    opts.tune_lr = options->tune_lr;
    opts.batch_size = static_cast<std::size_t>(options->batch_size);
    opts.n_st = static_cast<std::size_t>(options->n_st < 0 ? 0 : options->n_st);
    opts.n_ti = static_cast<std::size_t>(options->n_ti < 0 ? 0 : options->n_ti);
    opts.threads = static_cast<std::size_t>(
        options->threads < 1 ? 1 : options->threads);
    opts.transfer_split = static_cast<std::size_t>(
        options->transfer_split < 0 ? 0 : options->transfer_split);
    opts.sweep_attribute = options->sweep_attribute;
    require(opts.n_seeds >= 1, "experiment: n_seeds must be >= 1");

    const std::string name = kind;
    stpt::ExperimentResult result;
    if (name == "overall")
      result = stpt::exp_overall(series->data, cfg, opts);
    else if (name == "transfer")
      result = stpt::exp_transfer(series->data, cfg, opts);
    else if (name == "ablation")
      result = stpt::exp_ablation(series->data, cfg, opts);
    else if (name == "sweep")
      result = stpt::exp_sweep(series->data, cfg, opts);
    else
      throw std::invalid_argument("unknown experiment '" + name + "'");
    stpt::write_experiment(result, out_dir, name);
    if (table_text) *table_text = dup_string(result.table_text);
    return STPT_OK;
  });
}

}  // extern "C"
