// Command-line front end for the stpt shared library (C API only).

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stpt/stpt.h"

namespace {

using nlohmann::json;

int fail_with(stpt_status st) {
  std::cerr << "error: " << stpt_last_error() << "\n";
  return static_cast<int>(st);
}

struct SeriesHandle {
  stpt_series* p = nullptr;
  ~SeriesHandle() { stpt_series_free(p); }
  SeriesHandle() = default;
  SeriesHandle(const SeriesHandle&) = delete;
  SeriesHandle& operator=(const SeriesHandle&) = delete;
};

struct StringOut {
  char* p = nullptr;
  ~StringOut() { stpt_string_free(p); }
};

// Optional JSON config file: {"model": {...}, "train": {...}}.
bool apply_config_file(const std::string& path, stpt_model_config* model,
                       stpt_train_config* train, std::string* error) {
  std::ifstream in(path);
  if (!in) {
    *error = "cannot open config '" + path + "'";
    return false;
  }
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    *error = "config '" + path + "': " + e.what();
    return false;
  }
  auto get = [](const json& obj, const char* key, auto fallback) {
    using T = decltype(fallback);
    return obj.contains(key) ? obj.at(key).template get<T>() : fallback;
  };
  if (model && j.contains("model")) {
    const json& m = j.at("model");
    model->T = get(m, "T", model->T);
    model->H = get(m, "H", model->H);
    model->D = get(m, "D", model->D);
    model->l_t = get(m, "l_t", model->l_t);
    model->l_s = get(m, "l_s", model->l_s);
    model->heads = get(m, "heads", model->heads);
    model->d_ff = get(m, "d_ff", model->d_ff);
  }
  if (train && j.contains("train")) {
    const json& t = j.at("train");
    train->learning_rate = get(t, "learning_rate", train->learning_rate);
    train->batch_size = get(t, "batch_size", train->batch_size);
    train->max_epochs = get(t, "max_epochs", train->max_epochs);
    train->patience = get(t, "patience", train->patience);
    train->seed = get(t, "seed", train->seed);
  }
  return true;
}

bool write_text_file(const std::string& path, const std::string& content,
                     std::string* error) {
  std::ofstream out(path);
  if (!out) {
    *error = "cannot write '" + path + "'";
    return false;
  }
  out << content;
  if (!content.empty() && content.back() != '\n') out << "\n";
  return true;
}

int variant_code(const std::string& name, stpt_variant* out) {
  if (name == "none") *out = STPT_VARIANT_NONE;
  else if (name == "st") *out = STPT_VARIANT_ST;
  else if (name == "tiny") *out = STPT_VARIANT_TINY;
  else if (name == "shallow") *out = STPT_VARIANT_SHALLOW;
  else if (name == "add") *out = STPT_VARIANT_ADD;
  else {
    std::cerr << "error: unknown variant '" << name
              << "' (expected st|tiny|shallow|add|none)\n";
    return 1;
  }
  return 0;
}

void print_eval_summary(const std::string& report_json) {
  try {
    json j = json::parse(report_json);
    const json& avg = j.at("averages");
    std::cout << "split=" << j.at("split").get<std::string>()
              << " strategy=" << j.at("strategy").get<std::string>()
              << " windows=" << j.at("window_count").get<std::uint64_t>()
              << " rmse=" << avg.at("rmse_denorm").get<double>()
              << " mae=" << avg.at("mae_denorm").get<double>()
              << " rmse_norm=" << avg.at("rmse_norm").get<double>()
              << " mae_norm=" << avg.at("mae_norm").get<double>() << "\n";
  } catch (const std::exception&) {
    std::cout << report_json << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stpt - spatio-temporal grid forecasting with a shared "
               "transformer backbone, pretraining and prompt-token tuning"};
  app.require_subcommand(1);

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "Generate a synthetic STGRID dataset");
  stpt_synth_spec synth;
  stpt_synth_spec_default(&synth);
  std::string gen_out;
  gen->add_option("--rows", synth.rows, "Grid rows");
  gen->add_option("--cols", synth.cols, "Grid cols");
  gen->add_option("--attrs", synth.attributes, "Attribute count");
  gen->add_option("--steps", synth.timesteps, "Timesteps");
  gen->add_option("--seed", synth.seed, "RNG seed");
  gen->add_option("--shared-frac", synth.shared_fraction,
                  "Fraction of attributes sharing a hotspot map");
  gen->add_option("--interval", synth.interval_minutes, "Minutes per step");
  gen->add_option("--out", gen_out, "Output path")->required();

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "Phase I parameter-sharing training");
  std::string pre_data, pre_cfg_path, pre_out, pre_history;
  stpt_model_config pre_model;
  stpt_model_config_default(&pre_model);
  stpt_train_config pre_train;
  stpt_train_config_default(&pre_train, STPT_STRATEGY_FULL);
  int pre_attr = -1;
  pre->add_option("--data", pre_data, "STGRID dataset")->required();
  pre->add_option("--config", pre_cfg_path, "JSON config file");
  pre->add_option("--out", pre_out, "Checkpoint output path")->required();
  pre->add_option("--history", pre_history, "Write per-epoch history JSON");
  pre->add_option("--attr", pre_attr,
                  "Restrict to one attribute (single-train)");
  pre->add_option("--seed", pre_train.seed, "RNG seed");
  pre->add_option("--lr", pre_train.learning_rate, "Learning rate");
  pre->add_option("--batch", pre_train.batch_size, "Batch size");
  pre->add_option("--epochs", pre_train.max_epochs, "Max epochs");
  pre->add_option("--patience", pre_train.patience, "Early-stop patience");
  pre->add_option("--max-steps", pre_train.max_steps, "Step cap (0 = off)");

  // ---- tune ----
  auto* tune = app.add_subcommand(
      "tune", "Phase II prompt tuning (or --full fine-tuning)");
  std::string tune_from, tune_data, tune_out, tune_history, tune_variant = "st";
  stpt_train_config tune_train;
  stpt_train_config_default(&tune_train, STPT_STRATEGY_PROMPT_TUNE);
  bool tune_full = false, tune_warm = false;
  tune->add_option("--from", tune_from, "Source checkpoint")->required();
  tune->add_option("--data", tune_data, "STGRID dataset")->required();
  tune->add_option("--attr", tune_train.target_attribute, "Target attribute")
      ->required();
  tune->add_option("--variant", tune_variant, "st|tiny|shallow|add|none");
  tune->add_option("--n-st", tune_train.n_st, "Prompt tokens per temporal layer");
  tune->add_option("--n-ti", tune_train.n_ti, "Tiny tokens per layer");
  tune->add_flag("--full", tune_full, "Fine-tune all parameters instead");
  tune->add_flag("--warm-head", tune_warm, "Keep the pretrained head");
  tune->add_option("--out", tune_out, "Checkpoint output path")->required();
  tune->add_option("--history", tune_history, "Write per-epoch history JSON");
  tune->add_option("--seed", tune_train.seed, "RNG seed");
  tune->add_option("--lr", tune_train.learning_rate, "Learning rate");
  tune->add_option("--batch", tune_train.batch_size, "Batch size");
  tune->add_option("--epochs", tune_train.max_epochs, "Max epochs");
  tune->add_option("--patience", tune_train.patience, "Early-stop patience");
  tune->add_option("--max-steps", tune_train.max_steps, "Step cap (0 = off)");

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ev_from, ev_data, ev_split = "test", ev_report;
  ev->add_option("--from", ev_from, "Checkpoint")->required();
  ev->add_option("--data", ev_data, "STGRID dataset")->required();
  ev->add_option("--split", ev_split, "train|val|test");
  ev->add_option("--report", ev_report, "Write full JSON report here");

  // ---- count-params ----
  auto* cp = app.add_subcommand("count-params",
                                "Closed-form trainable parameter count");
  std::string cp_variant, cp_cfg_path;
  int cp_rows = 8, cp_cols = 8, cp_nst = 2, cp_nti = 2;
  stpt_model_config cp_model;
  stpt_model_config_default(&cp_model);
  cp->add_option("--variant", cp_variant, "st|tiny|shallow|add|none")
      ->required();
  cp->add_option("--rows", cp_rows, "Grid rows");
  cp->add_option("--cols", cp_cols, "Grid cols");
  cp->add_option("--n-st", cp_nst, "Prompt tokens per temporal layer");
  cp->add_option("--n-ti", cp_nti, "Tiny tokens per layer");
  cp->add_option("--config", cp_cfg_path, "JSON config file");

  // ---- inspect ----
  auto* insp = app.add_subcommand("inspect", "Print checkpoint metadata");
  std::string insp_path;
  insp->add_option("--from", insp_path, "Checkpoint")->required();

  // ---- experiments ----
  struct ExpCli {
    CLI::App* cmd = nullptr;
    std::string data, out, cfg_path;
  };
  stpt_exp_options exp_opts;
  stpt_exp_options_default(&exp_opts);
  stpt_model_config exp_model;
  stpt_model_config_default(&exp_model);
  std::vector<std::pair<std::string, ExpCli>> experiments = {
      {"overall", {app.add_subcommand(
                       "exp-overall",
                       "Compare single/full/fine-tune/prompt-tune")}},
      {"transfer", {app.add_subcommand(
                        "exp-transfer",
                        "Pretrain on one attribute subset, tune on the other")}},
      {"ablation", {app.add_subcommand(
                        "exp-ablation", "Compare the five prompt variants")}},
      {"sweep", {app.add_subcommand(
                     "exp-sweep", "Sweep prompt token counts 0..4")}}};
  for (auto& [kind, e] : experiments) {
    e.cmd->add_option("--data", e.data, "STGRID dataset")->required();
    e.cmd->add_option("--out", e.out, "Output directory")->required();
    e.cmd->add_option("--config", e.cfg_path, "JSON config file");
    e.cmd->add_option("--seeds", exp_opts.n_seeds, "Number of seeds");
    e.cmd->add_option("--base-seed", exp_opts.base_seed, "First seed");
    e.cmd->add_option("--pretrain-epochs", exp_opts.pretrain_epochs,
                      "Pretrain epoch cap");
    e.cmd->add_option("--tune-epochs", exp_opts.tune_epochs, "Tune epoch cap");
    e.cmd->add_option("--patience", exp_opts.patience, "Early-stop patience");
    e.cmd->add_option("--pretrain-lr", exp_opts.pretrain_lr, "Pretrain LR");
    e.cmd->add_option("--tune-lr", exp_opts.tune_lr, "Tune LR");
    e.cmd->add_option("--batch", exp_opts.batch_size, "Batch size");
    e.cmd->add_option("--n-st", exp_opts.n_st, "Prompt tokens per layer");
    e.cmd->add_option("--n-ti", exp_opts.n_ti, "Tiny tokens per layer");
    e.cmd->add_option("--threads", exp_opts.threads, "Concurrent seed jobs");
    if (kind == "transfer")
      e.cmd->add_option("--split-at", exp_opts.transfer_split,
                        "First k attributes form subset A");
    if (kind == "sweep")
      e.cmd->add_option("--attr", exp_opts.sweep_attribute,
                        "Sweep a single attribute (-1 = all)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;  // usage error
  }

  std::string error;

  if (gen->parsed()) {
    SeriesHandle series;
    stpt_status st = stpt_series_synthesize(&synth, &series.p);
    if (st != STPT_OK) return fail_with(st);
    st = stpt_series_save(series.p, gen_out.c_str());
    if (st != STPT_OK) return fail_with(st);
    stpt_series_info info;
    stpt_series_get_info(series.p, &info);
    std::cout << "wrote " << gen_out << " (" << info.rows << "x" << info.cols
              << " grid, " << info.attributes << " attributes, "
              << info.timesteps << " timesteps)\n";
    return 0;
  }

  if (pre->parsed()) {
    if (!pre_cfg_path.empty() &&
        !apply_config_file(pre_cfg_path, &pre_model, &pre_train, &error)) {
      std::cerr << "error: " << error << "\n";
      return 2;
    }
    // flags already applied on top by CLI11 (they share the structs)
    pre_train.strategy =
        pre_attr >= 0 ? STPT_STRATEGY_SINGLE : STPT_STRATEGY_FULL;
    pre_train.target_attribute = pre_attr;
    SeriesHandle series;
    stpt_status st = stpt_series_load(pre_data.c_str(), &series.p);
    if (st != STPT_OK) return fail_with(st);
    StringOut history;
    st = stpt_pretrain(series.p, &pre_model, &pre_train, pre_out.c_str(),
                       pre_history.empty() ? nullptr : &history.p);
    if (st != STPT_OK) return fail_with(st);
    if (!pre_history.empty() &&
        !write_text_file(pre_history, history.p, &error)) {
      std::cerr << "error: " << error << "\n";
      return 2;
    }
    std::cout << "wrote " << pre_out << "\n";
    return 0;
  }

  if (tune->parsed()) {
    stpt_variant var;
    if (variant_code(tune_variant, &var) != 0) return 1;
    tune_train.variant = var;
    tune_train.strategy =
        tune_full ? STPT_STRATEGY_FINE_TUNE : STPT_STRATEGY_PROMPT_TUNE;
    tune_train.warm_head = tune_warm ? 1 : 0;
    SeriesHandle series;
    stpt_status st = stpt_series_load(tune_data.c_str(), &series.p);
    if (st != STPT_OK) return fail_with(st);
    StringOut history;
    st = stpt_tune(tune_from.c_str(), series.p, &tune_train, tune_out.c_str(),
                   tune_history.empty() ? nullptr : &history.p);
    if (st != STPT_OK) return fail_with(st);
    if (!tune_history.empty() &&
        !write_text_file(tune_history, history.p, &error)) {
      std::cerr << "error: " << error << "\n";
      return 2;
    }
    std::cout << "wrote " << tune_out << "\n";
    return 0;
  }

  if (ev->parsed()) {
    int split = ev_split == "train" ? 0 : (ev_split == "val" ? 1 : 2);
    if (ev_split != "train" && ev_split != "val" && ev_split != "test") {
      std::cerr << "error: --split must be train|val|test\n";
      return 1;
    }
    SeriesHandle series;
    stpt_status st = stpt_series_load(ev_data.c_str(), &series.p);
    if (st != STPT_OK) return fail_with(st);
    StringOut report;
    st = stpt_evaluate(ev_from.c_str(), series.p, split, &report.p);
    if (st != STPT_OK) return fail_with(st);
    if (!ev_report.empty() && !write_text_file(ev_report, report.p, &error)) {
      std::cerr << "error: " << error << "\n";
      return 2;
    }
    print_eval_summary(report.p);
    return 0;
  }

  if (cp->parsed()) {
    if (!cp_cfg_path.empty() &&
        !apply_config_file(cp_cfg_path, &cp_model, nullptr, &error)) {
      std::cerr << "error: " << error << "\n";
      return 2;
    }
    stpt_variant var;
    if (variant_code(cp_variant, &var) != 0) return 1;
    int64_t count = 0;
    stpt_status st = stpt_count_params(&cp_model, cp_rows, cp_cols, var,
                                       cp_nst, cp_nti, &count);
    if (st != STPT_OK) return fail_with(st);
    std::cout << count << "\n";
    return 0;
  }

  if (insp->parsed()) {
    StringOut info;
    stpt_status st = stpt_checkpoint_inspect(insp_path.c_str(), &info.p);
    if (st != STPT_OK) return fail_with(st);
    std::cout << info.p << "\n";
    return 0;
  }

  for (auto& [kind, e] : experiments) {
    if (!e.cmd->parsed()) continue;
    if (!e.cfg_path.empty() &&
        !apply_config_file(e.cfg_path, &exp_model, nullptr, &error)) {
      std::cerr << "error: " << error << "\n";
      return 2;
    }
    SeriesHandle series;
    stpt_status st = stpt_series_load(e.data.c_str(), &series.p);
    if (st != STPT_OK) return fail_with(st);
    StringOut table;
    st = stpt_experiment(kind.c_str(), series.p, &exp_model, &exp_opts,
                         e.out.c_str(), &table.p);
    if (st != STPT_OK) return fail_with(st);
    std::cout << table.p;
    std::cout << "reports written to " << e.out << "/" << kind
              << ".{json,txt}\n";
    return 0;
  }

  return 0;
}
