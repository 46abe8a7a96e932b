#include "metrics.hpp"

#include <cmath>
#include <cstdio>

#include "train.hpp"

namespace stpt {

const char* split_name(SplitKind s) {
  switch (s) {
    case SplitKind::kTrain: return "train";
    case SplitKind::kVal: return "val";
    case SplitKind::kTest: return "test";
  }
  return "?";
}

std::optional<SplitKind> parse_split(std::string_view name) {
  if (name == "train") return SplitKind::kTrain;
  if (name == "val") return SplitKind::kVal;
  if (name == "test") return SplitKind::kTest;
  return std::nullopt;
}

std::string config_fingerprint(const ModelConfig& cfg) {
  // FNV-1a over the field tuple; stable across runs and platforms.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t v : {cfg.T, cfg.H, cfg.N, cfg.C, cfg.D, cfg.l_t, cfg.l_s,
                        cfg.heads, cfg.d_ff})
    mix(v);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

MetricsReport evaluate(const Checkpoint& ckpt, const GridSeries& series,
                       SplitKind split) {
  series.validate();
  const ModelConfig& cfg = ckpt.config;
  if (series.regions() != cfg.N)
    throw ShapeError("evaluate: series has N=" +
                     std::to_string(series.regions()) +
                     " regions, checkpoint expects " + std::to_string(cfg.N));

  GridSeries target = series;
  if (!ckpt.target_attribute_name.empty()) {
    std::size_t idx = series.attributes();
    for (std::size_t i = 0; i < series.attributes(); ++i)
      if (series.attribute_names[i] == ckpt.target_attribute_name) idx = i;
    if (idx == series.attributes())
      throw ShapeError("evaluate: series has no attribute named '" +
                       ckpt.target_attribute_name + "'");
    target = select_attributes(series, {idx});
  }
  if (target.attributes() != cfg.C)
    throw ShapeError("evaluate: series has C=" +
                     std::to_string(target.attributes()) +
                     " attributes, checkpoint expects " +
                     std::to_string(cfg.C));

  Split sp = split_series(target, cfg.T, cfg.H);
  const GridSeries& part = split == SplitKind::kTrain
                               ? sp.train
                               : (split == SplitKind::kVal ? sp.val : sp.test);
  const GridSeries normalized = ckpt.normalizer.apply(part);
  const auto wlist = windows(normalized, cfg.T, cfg.H);

  std::vector<const PromptSet*> span;
  if (!ckpt.prompts.empty()) span.assign(cfg.C, &ckpt.prompts);

  const std::size_t c_total = cfg.C;
  std::vector<double> sse(c_total, 0.0), sae(c_total, 0.0);
  std::vector<std::size_t> count(c_total, 0);
  const std::size_t kBatch = 64;
  std::vector<std::size_t> order(wlist.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t begin = 0; begin < wlist.size(); begin += kBatch) {
    const std::size_t end = std::min(wlist.size(), begin + kBatch);
    Shape xshape{end - begin, cfg.T, cfg.N, c_total};
    Shape yshape{end - begin, cfg.H, cfg.N, c_total};
    std::vector<double> xd, yd;
    xd.reserve(numel(xshape));
    yd.reserve(numel(yshape));
    for (std::size_t i = begin; i < end; ++i) {
      xd.insert(xd.end(), wlist[i].X.values().begin(), wlist[i].X.values().end());
      yd.insert(yd.end(), wlist[i].Y.values().begin(), wlist[i].Y.values().end());
    }
    Tensor x(std::move(xshape), std::move(xd));
    Tensor y(std::move(yshape), std::move(yd));
    Tensor pred = forward(x, cfg, ckpt.params, span);
    const auto& pv = pred.values();
    const auto& yv = y.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const std::size_t c = i % c_total;
      const double e = pv[i] - yv[i];
      sse[c] += e * e;
      sae[c] += std::fabs(e);
      ++count[c];
    }
  }

  MetricsReport report;
  report.split = split_name(split);
  report.strategy = ckpt.strategy;
  report.seed = ckpt.seed;
  report.epochs = ckpt.epochs_run;
  report.trainable_params = ckpt.trainable_count;
  report.config_hash = config_fingerprint(cfg);
  report.window_count = wlist.size();
  for (std::size_t c = 0; c < c_total; ++c) {
    AttributeMetrics m;
    m.name = target.attribute_names[c];
    const double n = static_cast<double>(count[c]);
    m.rmse_norm = std::sqrt(sse[c] / n);
    m.mae_norm = sae[c] / n;
    m.loss_norm = m.rmse_norm + m.mae_norm;
    // Min-max inversion is affine, so errors scale by the denominator.
    const double d = ckpt.normalizer.denom(c);
    m.rmse_denorm = m.rmse_norm * d;
    m.mae_denorm = m.mae_norm * d;
    report.per_attribute.push_back(m);
    report.avg_rmse_norm += m.rmse_norm;
    report.avg_mae_norm += m.mae_norm;
    report.avg_rmse_denorm += m.rmse_denorm;
    report.avg_mae_denorm += m.mae_denorm;
    report.avg_loss_norm += m.loss_norm;
  }
  const double inv_c = 1.0 / static_cast<double>(c_total);
  report.avg_rmse_norm *= inv_c;
  report.avg_mae_norm *= inv_c;
  report.avg_rmse_denorm *= inv_c;
  report.avg_mae_denorm *= inv_c;
  report.avg_loss_norm *= inv_c;
  return report;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json attrs = nlohmann::ordered_json::array();
  for (const auto& m : per_attribute)
    attrs.push_back({{"name", m.name},
                     {"rmse_denorm", m.rmse_denorm},
                     {"mae_denorm", m.mae_denorm},
                     {"rmse_norm", m.rmse_norm},
                     {"mae_norm", m.mae_norm},
                     {"loss_norm", m.loss_norm}});
  return nlohmann::ordered_json{
      {"split", split},
      {"strategy", strategy},
      {"seed", seed},
      {"epochs", epochs},
      {"trainable_params", trainable_params},
      {"config_hash", config_hash},
      {"window_count", window_count},
      {"per_attribute", attrs},
      {"averages",
       {{"rmse_denorm", avg_rmse_denorm},
        {"mae_denorm", avg_mae_denorm},
        {"rmse_norm", avg_rmse_norm},
        {"mae_norm", avg_mae_norm},
        {"loss_norm", avg_loss_norm}}}};
}

}  // namespace stpt
