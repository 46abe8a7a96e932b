#include "experiments.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "checkpoint.hpp"
#include "metrics.hpp"
#include "train.hpp"

namespace stpt {

namespace {

using ordered_json = nlohmann::ordered_json;

void run_parallel(std::size_t jobs, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || jobs <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, jobs); ++t)
    pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct Agg {
  double mean = 0.0, sd = 0.0;
};

Agg aggregate(const std::vector<double>& v) {
  Agg a;
  if (v.empty()) return a;
  for (double x : v) a.mean += x;
  a.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

ordered_json agg_json(const Agg& a) {
  return ordered_json{{"mean", a.mean}, {"sd", a.sd}};
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string fmt_agg(const Agg& a) { return fmt(a.mean) + " +/- " + fmt(a.sd); }

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c)
      widths[c] = std::max(widths[c], row[c].size());
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size())
        out += std::string(widths[c] - row[c].size() + 2, ' ');
    }
    out += "\n";
  };
  emit(header);
  std::vector<std::string> rule;
  for (std::size_t w : widths) rule.push_back(std::string(w, '-'));
  emit(rule);
  for (const auto& row : rows) emit(row);
  return out;
}

TrainConfig make_pretrain_config(const ExperimentOptions& opts,
                                 std::uint64_t seed) {
  TrainConfig tc;
  tc.strategy = Strategy::kFull;
  tc.learning_rate = opts.pretrain_lr;
  tc.batch_size = opts.batch_size;
  tc.max_epochs = opts.pretrain_epochs;
  tc.patience = opts.patience;
  tc.seed = seed;
  return tc;
}

TrainConfig make_tune_config(const ExperimentOptions& opts, Strategy strategy,
                             std::uint64_t seed, const PromptSpec& spec,
                             int target) {
  TrainConfig tc;
  tc.strategy = strategy;
  tc.learning_rate = opts.tune_lr;
  tc.batch_size = opts.batch_size;
  tc.max_epochs = opts.tune_epochs;
  tc.patience = opts.patience;
  tc.seed = seed;
  tc.prompt = spec;
  tc.target_attribute = target;
  return tc;
}

MetricsReport eval_test(const TrainResult& result, const GridSeries& trained_on,
                        Strategy strategy, std::uint64_t seed,
                        std::int64_t target = -1) {
  Checkpoint ckpt =
      Checkpoint::from_result(result, trained_on, strategy, seed, target);
  return evaluate(ckpt, trained_on, SplitKind::kTest);
}

// metric key -> value for one (strategy, attribute) cell
struct Cell {
  std::vector<double> rmse_d, mae_d, rmse_n, mae_n, loss_n;
  void push(const AttributeMetrics& m) {
    rmse_d.push_back(m.rmse_denorm);
    mae_d.push_back(m.mae_denorm);
    rmse_n.push_back(m.rmse_norm);
    mae_n.push_back(m.mae_norm);
    loss_n.push_back(m.loss_norm);
  }
  ordered_json to_json() const {
    return ordered_json{{"rmse_denorm", agg_json(aggregate(rmse_d))},
                        {"mae_denorm", agg_json(aggregate(mae_d))},
                        {"rmse_norm", agg_json(aggregate(rmse_n))},
                        {"mae_norm", agg_json(aggregate(mae_n))},
                        {"loss_norm", agg_json(aggregate(loss_n))}};
  }
};

ordered_json seeds_json(const ExperimentOptions& opts) {
  ordered_json seeds = ordered_json::array();
  for (std::size_t i = 0; i < opts.n_seeds; ++i)
    seeds.push_back(opts.base_seed + i);
  return seeds;
}

}  // namespace

ExperimentResult exp_overall(const GridSeries& series, ModelConfig base,
                             const ExperimentOptions& opts) {
  series.validate();
  const std::size_t c_total = series.attributes();
  const PromptSpec st_spec{PromptVariant::kStFull, opts.n_st, 0};

  struct SeedOut {
    MetricsReport full;
    std::vector<MetricsReport> single, fine, prompt;
  };
  std::vector<SeedOut> outs(opts.n_seeds);

  run_parallel(opts.n_seeds, opts.threads, [&](std::size_t i) {
    const std::uint64_t seed = opts.base_seed + i;
    SeedOut& out = outs[i];
    TrainResult pre = pretrain(series, base, make_pretrain_config(opts, seed));
    out.full = eval_test(pre, series, Strategy::kFull, seed);
    for (std::size_t a = 0; a < c_total; ++a) {
      GridSeries sel = select_attributes(series, {a});
      TrainConfig single_tc = make_pretrain_config(opts, seed);
      single_tc.strategy = Strategy::kSingle;
      single_tc.target_attribute = static_cast<int>(a);
      TrainResult single = pretrain(sel, base, single_tc);
      out.single.push_back(
          eval_test(single, sel, Strategy::kSingle, seed, (std::int64_t)a));

      TrainResult fine = fine_tune(
          pre.params, pre.config, sel,
          make_tune_config(opts, Strategy::kFineTune, seed, {}, (int)a));
      out.fine.push_back(
          eval_test(fine, sel, Strategy::kFineTune, seed, (std::int64_t)a));

      TrainResult prompt = prompt_tune(
          pre.params, pre.config, sel,
          make_tune_config(opts, Strategy::kPromptTune, seed, st_spec, (int)a));
      out.prompt.push_back(
          eval_test(prompt, sel, Strategy::kPromptTune, seed, (std::int64_t)a));
    }
  });

  // (strategy, attribute) cells plus dataset averages.
  std::map<std::string, std::map<std::string, Cell>> cells;
  std::map<std::string, Cell> averages;
  for (std::size_t i = 0; i < opts.n_seeds; ++i) {
    const SeedOut& out = outs[i];
    for (std::size_t a = 0; a < c_total; ++a) {
      const std::string& name = series.attribute_names[a];
      cells["full-train"][name].push(out.full.per_attribute[a]);
      cells["single-train"][name].push(out.single[a].per_attribute[0]);
      cells["fine-tune"][name].push(out.fine[a].per_attribute[0]);
      cells["prompt-tune"][name].push(out.prompt[a].per_attribute[0]);
    }
    auto avg_of = [](const std::vector<MetricsReport>& reports) {
      AttributeMetrics m;
      for (const auto& r : reports) {
        m.rmse_denorm += r.per_attribute[0].rmse_denorm;
        m.mae_denorm += r.per_attribute[0].mae_denorm;
        m.rmse_norm += r.per_attribute[0].rmse_norm;
        m.mae_norm += r.per_attribute[0].mae_norm;
        m.loss_norm += r.per_attribute[0].loss_norm;
      }
      const double inv = 1.0 / static_cast<double>(reports.size());
      m.rmse_denorm *= inv;
      m.mae_denorm *= inv;
      m.rmse_norm *= inv;
      m.mae_norm *= inv;
      m.loss_norm *= inv;
      return m;
    };
    AttributeMetrics favg;
    favg.rmse_denorm = out.full.avg_rmse_denorm;
    favg.mae_denorm = out.full.avg_mae_denorm;
    favg.rmse_norm = out.full.avg_rmse_norm;
    favg.mae_norm = out.full.avg_mae_norm;
    favg.loss_norm = out.full.avg_loss_norm;
    averages["full-train"].push(favg);
    averages["single-train"].push(avg_of(out.single));
    averages["fine-tune"].push(avg_of(out.fine));
    averages["prompt-tune"].push(avg_of(out.prompt));
  }

  ModelConfig resolved = base;
  resolved.N = series.regions();
  resolved.C = c_total;
  ModelParameters probe = init_parameters(resolved, 0);
  const std::size_t backbone_total =
      probe.backbone_param_count() + probe.head_param_count();
  const std::size_t prompt_params = trainable_param_count(st_spec, resolved);

  std::map<std::string, std::uint64_t> params_per_strategy{
      {"single-train", backbone_total},
      {"full-train", backbone_total},
      {"fine-tune", backbone_total},
      {"prompt-tune", prompt_params}};

  ordered_json strategies;
  std::vector<std::vector<std::string>> rows;
  for (const char* strat :
       {"single-train", "full-train", "fine-tune", "prompt-tune"}) {
    ordered_json per_attr;
    for (auto& [name, cell] : cells[strat]) per_attr[name] = cell.to_json();
    strategies[strat] =
        ordered_json{{"per_attribute", per_attr},
                     {"average", averages[strat].to_json()},
                     {"trainable_params", params_per_strategy[strat]}};
    const Cell& avg = averages[strat];
    rows.push_back({strat, fmt_agg(aggregate(avg.rmse_d)),
                    fmt_agg(aggregate(avg.mae_d)),
                    fmt_agg(aggregate(avg.loss_n)),
                    std::to_string(params_per_strategy[strat])});
  }

  ExperimentResult result;
  result.summary = ordered_json{{"experiment", "overall"},
                                {"seeds", seeds_json(opts)},
                                {"config_hash", config_fingerprint(resolved)},
                                {"strategies", strategies}};
  result.table_text =
      "Strategy comparison on test split (mean +/- sd over " +
      std::to_string(opts.n_seeds) + " seeds, averaged over attributes)\n" +
      render_table({"strategy", "RMSE(denorm)", "MAE(denorm)", "loss(norm)",
                    "trainable"},
                   rows);
  return result;
}

ExperimentResult exp_transfer(const GridSeries& series, ModelConfig base,
                              const ExperimentOptions& opts) {
  series.validate();
  const std::size_t c_total = series.attributes();
  if (c_total < 2)
    throw std::invalid_argument("exp-transfer needs at least 2 attributes");
  const std::size_t k =
      opts.transfer_split > 0 && opts.transfer_split < c_total
          ? opts.transfer_split
          : (c_total + 1) / 2;
  std::vector<std::size_t> part_a, part_b;
  for (std::size_t i = 0; i < c_total; ++i)
    (i < k ? part_a : part_b).push_back(i);

  const PromptSpec st_spec{PromptVariant::kStFull, opts.n_st, 0};

  struct Direction {
    std::string name;
    std::vector<std::size_t> target, source;
  };
  const std::vector<Direction> dirs = {{"A", part_a, part_b},
                                       {"B", part_b, part_a}};

  ordered_json summary_dirs;
  std::string text;
  for (const Direction& dir : dirs) {
    GridSeries target_series = select_attributes(series, dir.target);
    GridSeries source_series = select_attributes(series, dir.source);
    const std::size_t n_attr = dir.target.size();

    struct SeedOut {
      std::vector<MetricsReport> single, fine, prompt, prompt_home;
      MetricsReport full;
    };
    std::vector<SeedOut> outs(opts.n_seeds);

    run_parallel(opts.n_seeds, opts.threads, [&](std::size_t i) {
      const std::uint64_t seed = opts.base_seed + i;
      SeedOut& out = outs[i];
      TrainResult source_pre =
          pretrain(source_series, base, make_pretrain_config(opts, seed));
      TrainResult target_pre =
          pretrain(target_series, base, make_pretrain_config(opts, seed));
      out.full = eval_test(target_pre, target_series, Strategy::kFull, seed);
      for (std::size_t a = 0; a < n_attr; ++a) {
        GridSeries sel = select_attributes(target_series, {a});
        TrainConfig single_tc = make_pretrain_config(opts, seed);
        single_tc.strategy = Strategy::kSingle;
        out.single.push_back(eval_test(pretrain(sel, base, single_tc), sel,
                                       Strategy::kSingle, seed, (std::int64_t)a));
        out.fine.push_back(eval_test(
            fine_tune(source_pre.params, source_pre.config, sel,
                      make_tune_config(opts, Strategy::kFineTune, seed, {},
                                       (int)a)),
            sel, Strategy::kFineTune, seed, (std::int64_t)a));
        out.prompt.push_back(eval_test(
            prompt_tune(source_pre.params, source_pre.config, sel,
                        make_tune_config(opts, Strategy::kPromptTune, seed,
                                         st_spec, (int)a)),
            sel, Strategy::kPromptTune, seed, (std::int64_t)a));
        out.prompt_home.push_back(eval_test(
            prompt_tune(target_pre.params, target_pre.config, sel,
                        make_tune_config(opts, Strategy::kPromptTune, seed,
                                         st_spec, (int)a)),
            sel, Strategy::kPromptTune, seed, (std::int64_t)a));
      }
    });

    // Seed-averaged per-attribute values, then dataset averages + win counts.
    auto attr_means = [&](auto getter) {
      std::map<std::string, std::vector<double>> rmse, mae;
      for (std::size_t i = 0; i < opts.n_seeds; ++i)
        for (std::size_t a = 0; a < n_attr; ++a) {
          const MetricsReport& r = getter(outs[i], a);
          rmse[target_series.attribute_names[a]].push_back(
              r.per_attribute[0].rmse_denorm);
          mae[target_series.attribute_names[a]].push_back(
              r.per_attribute[0].mae_denorm);
        }
      return std::pair{rmse, mae};
    };

    auto [fine_rmse, fine_mae] = attr_means(
        [](const SeedOut& o, std::size_t a) -> const MetricsReport& {
          return o.fine[a];
        });
    auto [prompt_rmse, prompt_mae] = attr_means(
        [](const SeedOut& o, std::size_t a) -> const MetricsReport& {
          return o.prompt[a];
        });

    std::size_t wins_rmse = 0, wins_mae = 0;
    for (const auto& [name, v] : prompt_rmse)
      if (aggregate(v).mean <= aggregate(fine_rmse[name]).mean) ++wins_rmse;
    for (const auto& [name, v] : prompt_mae)
      if (aggregate(v).mean <= aggregate(fine_mae[name]).mean) ++wins_mae;

    auto dataset_avg = [&](auto getter) {
      Cell cell;
      for (std::size_t i = 0; i < opts.n_seeds; ++i) {
        AttributeMetrics m;
        for (std::size_t a = 0; a < n_attr; ++a) {
          const MetricsReport& r = getter(outs[i], a);
          m.rmse_denorm += r.per_attribute[0].rmse_denorm;
          m.mae_denorm += r.per_attribute[0].mae_denorm;
          m.rmse_norm += r.per_attribute[0].rmse_norm;
          m.mae_norm += r.per_attribute[0].mae_norm;
          m.loss_norm += r.per_attribute[0].loss_norm;
        }
        const double inv = 1.0 / static_cast<double>(n_attr);
        m.rmse_denorm *= inv;
        m.mae_denorm *= inv;
        m.rmse_norm *= inv;
        m.mae_norm *= inv;
        m.loss_norm *= inv;
        cell.push(m);
      }
      return cell;
    };

    Cell single_avg = dataset_avg(
        [](const SeedOut& o, std::size_t a) -> const MetricsReport& {
          return o.single[a];
        });
    Cell fine_avg = dataset_avg(
        [](const SeedOut& o, std::size_t a) -> const MetricsReport& {
          return o.fine[a];
        });
    Cell prompt_avg = dataset_avg(
        [](const SeedOut& o, std::size_t a) -> const MetricsReport& {
          return o.prompt[a];
        });
    Cell home_avg = dataset_avg(
        [](const SeedOut& o, std::size_t a) -> const MetricsReport& {
          return o.prompt_home[a];
        });
    Cell full_avg;
    for (std::size_t i = 0; i < opts.n_seeds; ++i) {
      AttributeMetrics m;
      m.rmse_denorm = outs[i].full.avg_rmse_denorm;
      m.mae_denorm = outs[i].full.avg_mae_denorm;
      m.rmse_norm = outs[i].full.avg_rmse_norm;
      m.mae_norm = outs[i].full.avg_mae_norm;
      m.loss_norm = outs[i].full.avg_loss_norm;
      full_avg.push(m);
    }

    ModelConfig dir_cfg = base;
    dir_cfg.N = series.regions();
    dir_cfg.C = n_attr;
    ModelParameters dir_probe = init_parameters(dir_cfg, 0);
    const std::size_t dir_backbone =
        dir_probe.backbone_param_count() + dir_probe.head_param_count();
    ordered_json dir_json{
        {"target_attributes", dir.target},
        {"source_attributes", dir.source},
        {"trainable_params",
         {{"single-train", dir_backbone},
          {"full-train", dir_backbone},
          {"fine-tune", dir_backbone},
          {"prompt-tune", trainable_param_count(st_spec, dir_cfg)}}},
        {"prompt_tuned_on_target", home_avg.to_json()},
        {"single-train", single_avg.to_json()},
        {"full-train", full_avg.to_json()},
        {"fine-tune", fine_avg.to_json()},
        {"prompt-tune", prompt_avg.to_json()},
        {"prompt_wins_vs_fine_tune",
         {{"rmse", wins_rmse}, {"mae", wins_mae}, {"of", n_attr}}}};
    summary_dirs[dir.name] = dir_json;

    std::vector<std::vector<std::string>> rows = {
        {"prompt-tune (pretrained on target)",
         fmt_agg(aggregate(home_avg.rmse_d)), fmt_agg(aggregate(home_avg.mae_d))},
        {"single-train", fmt_agg(aggregate(single_avg.rmse_d)),
         fmt_agg(aggregate(single_avg.mae_d))},
        {"full-train", fmt_agg(aggregate(full_avg.rmse_d)),
         fmt_agg(aggregate(full_avg.mae_d))},
        {"fine-tune", fmt_agg(aggregate(fine_avg.rmse_d)),
         fmt_agg(aggregate(fine_avg.mae_d))},
        {"prompt-tune (transfer)", fmt_agg(aggregate(prompt_avg.rmse_d)) +
                                       " (" + std::to_string(wins_rmse) + ")",
         fmt_agg(aggregate(prompt_avg.mae_d)) + " (" +
             std::to_string(wins_mae) + ")"}};
    text += "Transfer to subset " + dir.name + " (source: subset " +
            (dir.name == "A" ? std::string("B") : std::string("A")) +
            "); (n) = attributes beating fine-tune\n" +
            render_table({"strategy", "RMSE(denorm)", "MAE(denorm)"}, rows) +
            "\n";
  }

  ModelConfig resolved_t = base;
  resolved_t.N = series.regions();
  resolved_t.C = c_total;
  ExperimentResult result;
  result.summary = ordered_json{{"experiment", "transfer"},
                                {"seeds", seeds_json(opts)},
                                {"config_hash", config_fingerprint(resolved_t)},
                                {"directions", summary_dirs}};
  result.table_text = text;
  return result;
}

ExperimentResult exp_ablation(const GridSeries& series, ModelConfig base,
                              const ExperimentOptions& opts) {
  series.validate();
  const std::size_t c_total = series.attributes();
  const std::vector<PromptSpec> variants = {
      {PromptVariant::kNone, 0, 0},
      {PromptVariant::kShallow, opts.n_st, 0},
      {PromptVariant::kAdd, opts.n_st, 0},
      {PromptVariant::kTiny, 0, opts.n_ti},
      {PromptVariant::kStFull, opts.n_st, 0}};

  // variant -> per-seed dataset-average metrics
  std::vector<std::vector<AttributeMetrics>> per_variant(
      variants.size(), std::vector<AttributeMetrics>(opts.n_seeds));

  run_parallel(opts.n_seeds, opts.threads, [&](std::size_t i) {
    const std::uint64_t seed = opts.base_seed + i;
    TrainResult pre = pretrain(series, base, make_pretrain_config(opts, seed));
    for (std::size_t v = 0; v < variants.size(); ++v) {
      AttributeMetrics sum;
      for (std::size_t a = 0; a < c_total; ++a) {
        GridSeries sel = select_attributes(series, {a});
        TrainResult tuned = prompt_tune(
            pre.params, pre.config, sel,
            make_tune_config(opts, Strategy::kPromptTune, seed, variants[v],
                             (int)a));
        MetricsReport r =
            eval_test(tuned, sel, Strategy::kPromptTune, seed, (std::int64_t)a);
        sum.rmse_denorm += r.per_attribute[0].rmse_denorm;
        sum.mae_denorm += r.per_attribute[0].mae_denorm;
        sum.rmse_norm += r.per_attribute[0].rmse_norm;
        sum.mae_norm += r.per_attribute[0].mae_norm;
        sum.loss_norm += r.per_attribute[0].loss_norm;
      }
      const double inv = 1.0 / static_cast<double>(c_total);
      sum.rmse_denorm *= inv;
      sum.mae_denorm *= inv;
      sum.rmse_norm *= inv;
      sum.mae_norm *= inv;
      sum.loss_norm *= inv;
      per_variant[v][i] = sum;
    }
  });

  ModelConfig resolved = base;
  resolved.N = series.regions();
  resolved.C = c_total;

  ordered_json variants_json;
  std::vector<std::vector<std::string>> rows;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    Cell cell;
    for (const auto& m : per_variant[v]) cell.push(m);
    const std::uint64_t params = trainable_param_count(variants[v], resolved);
    variants_json[variant_name(variants[v].kind)] =
        ordered_json{{"metrics", cell.to_json()}, {"trainable_params", params}};
    rows.push_back({variant_name(variants[v].kind),
                    fmt_agg(aggregate(cell.mae_d)),
                    fmt_agg(aggregate(cell.rmse_d)), std::to_string(params)});
  }

  ExperimentResult result;
  result.summary = ordered_json{{"experiment", "ablation"},
                                {"seeds", seeds_json(opts)},
                                {"config_hash", config_fingerprint(resolved)},
                                {"variants", variants_json}};
  result.table_text =
      "Prompt variant comparison on test split (averaged over attributes)\n" +
      render_table({"variant", "MAE(denorm)", "RMSE(denorm)", "trainable"},
                   rows);
  return result;
}

ExperimentResult exp_sweep(const GridSeries& series, ModelConfig base,
                           const ExperimentOptions& opts) {
  series.validate();
  std::vector<std::size_t> attrs;
  if (opts.sweep_attribute >= 0) {
    attrs.push_back(static_cast<std::size_t>(opts.sweep_attribute));
  } else {
    for (std::size_t a = 0; a < series.attributes(); ++a) attrs.push_back(a);
  }

  struct SeedOut {
    std::vector<AttributeMetrics> per_count;  // dataset-average per n_st
    AttributeMetrics none;                    // head-only runs for the check
  };
  std::vector<SeedOut> outs(opts.n_seeds);

  run_parallel(opts.n_seeds, opts.threads, [&](std::size_t i) {
    const std::uint64_t seed = opts.base_seed + i;
    SeedOut& out = outs[i];
    TrainResult pre = pretrain(series, base, make_pretrain_config(opts, seed));
    auto run_spec = [&](const PromptSpec& spec) {
      AttributeMetrics sum;
      for (std::size_t a : attrs) {
        GridSeries sel = select_attributes(series, {a});
        TrainResult tuned = prompt_tune(
            pre.params, pre.config, sel,
            make_tune_config(opts, Strategy::kPromptTune, seed, spec, (int)a));
        MetricsReport r =
            eval_test(tuned, sel, Strategy::kPromptTune, seed, (std::int64_t)a);
        sum.rmse_denorm += r.per_attribute[0].rmse_denorm;
        sum.mae_denorm += r.per_attribute[0].mae_denorm;
        sum.rmse_norm += r.per_attribute[0].rmse_norm;
        sum.mae_norm += r.per_attribute[0].mae_norm;
        sum.loss_norm += r.per_attribute[0].loss_norm;
      }
      const double inv = 1.0 / static_cast<double>(attrs.size());
      sum.rmse_denorm *= inv;
      sum.mae_denorm *= inv;
      sum.rmse_norm *= inv;
      sum.mae_norm *= inv;
      sum.loss_norm *= inv;
      return sum;
    };
    for (std::size_t n : opts.sweep_counts)
      out.per_count.push_back(run_spec({PromptVariant::kStFull, n, 0}));
    out.none = run_spec({PromptVariant::kNone, 0, 0});
  });

  ModelConfig resolved = base;
  resolved.N = series.regions();
  resolved.C = series.attributes();

  bool collapse_ok = true;
  for (std::size_t i = 0; i < opts.n_seeds; ++i) {
    for (std::size_t ci = 0; ci < opts.sweep_counts.size(); ++ci) {
      if (opts.sweep_counts[ci] != 0) continue;
      // n_st = 0 must reproduce the head-only run exactly.
      if (outs[i].per_count[ci].rmse_denorm != outs[i].none.rmse_denorm ||
          outs[i].per_count[ci].mae_denorm != outs[i].none.mae_denorm)
        collapse_ok = false;
    }
  }

  ordered_json counts_json = ordered_json::array();
  std::vector<std::vector<std::string>> rows;
  for (std::size_t ci = 0; ci < opts.sweep_counts.size(); ++ci) {
    Cell cell;
    for (std::size_t i = 0; i < opts.n_seeds; ++i)
      cell.push(outs[i].per_count[ci]);
    const PromptSpec spec{PromptVariant::kStFull, opts.sweep_counts[ci], 0};
    const std::uint64_t params = trainable_param_count(spec, resolved);
    counts_json.push_back(ordered_json{{"n_st", opts.sweep_counts[ci]},
                                       {"metrics", cell.to_json()},
                                       {"trainable_params", params}});
    rows.push_back({std::to_string(opts.sweep_counts[ci]),
                    fmt_agg(aggregate(cell.rmse_d)),
                    fmt_agg(aggregate(cell.mae_d)), std::to_string(params)});
  }

  ExperimentResult result;
  result.summary =
      ordered_json{{"experiment", "sweep"},
                   {"seeds", seeds_json(opts)},
                   {"config_hash", config_fingerprint(resolved)},
                   {"attributes", attrs},
                   {"counts", counts_json},
                   {"nst0_equals_head_only", collapse_ok}};
  result.table_text =
      "Prompt token count sweep (test split)\n" +
      render_table({"n_st", "RMSE(denorm)", "MAE(denorm)", "trainable"}, rows) +
      std::string("n_st=0 equals head-only tuning: ") +
      (collapse_ok ? "yes" : "NO") + "\n";
  return result;
}

void write_experiment(const ExperimentResult& result,
                      const std::string& out_dir, const std::string& name) {
  std::filesystem::create_directories(out_dir);
  const std::string json_path = out_dir + "/" + name + ".json";
  const std::string text_path = out_dir + "/" + name + ".txt";
  std::ofstream j(json_path);
  if (!j) throw DataError("cannot write '" + json_path + "'");
  j << result.summary.dump(2) << "\n";
  std::ofstream t(text_path);
  if (!t) throw DataError("cannot write '" + text_path + "'");
  t << result.table_text;
}

}  // namespace stpt
