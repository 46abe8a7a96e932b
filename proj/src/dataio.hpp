#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace stpt {

// A full multi-attribute record: nonnegative values over
// (time, region, attribute) with grid geometry. Row-major [T_total, N, C].
struct GridSeries {
  std::size_t grid_rows = 0, grid_cols = 0;
  std::size_t interval_minutes = 60;
  std::size_t timesteps = 0;
  std::vector<std::string> attribute_names;
  std::vector<double> values;

  std::size_t regions() const { return grid_rows * grid_cols; }
  std::size_t attributes() const { return attribute_names.size(); }
  double at(std::size_t t, std::size_t r, std::size_t c) const {
    return values[(t * regions() + r) * attributes() + c];
  }
  double& at(std::size_t t, std::size_t r, std::size_t c) {
    return values[(t * regions() + r) * attributes() + c];
  }
  void validate() const;
};

// STGRID text format.
GridSeries load_grid_file(const std::string& path);
void save_grid_file(const GridSeries& series, const std::string& path);

// Chronological 7:1:2 split at floor(0.7 T) and floor(0.8 T). T and H are
// needed to confirm each split can produce at least one window.
struct Split {
  GridSeries train, val, test;
};
Split split_series(const GridSeries& series, std::size_t T, std::size_t H);

struct WindowSample {
  Tensor X;  // [T, N, C]
  Tensor Y;  // [H, N, C], starts where X ends
  std::size_t origin = 0;
};

std::vector<WindowSample> windows(const GridSeries& series, std::size_t T,
                                  std::size_t H, std::size_t stride = 1);

// Per-attribute min-max over the training split only. transform maps train
// values into [0,1]; val/test values may exceed 1 (no clipping).
struct Normalizer {
  std::vector<double> min, max;

  static Normalizer fit(const GridSeries& train_split);
  double denom(std::size_t c) const { return max[c] - min[c] + 1e-8; }
  double transform(double v, std::size_t c) const {
    return (v - min[c]) / denom(c);
  }
  double invert(double v, std::size_t c) const {
    return v * denom(c) + min[c];
  }
  GridSeries apply(const GridSeries& series) const;
  std::size_t attributes() const { return min.size(); }
};

// Synthetic multi-attribute generator: a daily cycle times a spatial hotspot
// map, Poisson noise on top. The first round(shared_fraction*C) attributes
// share one hotspot map and phase; the rest get their own.
struct SynthSpec {
  std::size_t rows = 4, cols = 4;
  std::size_t attributes = 4;
  std::size_t timesteps = 2000;
  std::size_t interval_minutes = 60;
  double shared_fraction = 0.5;
  std::uint64_t seed = 1;
};
GridSeries synthesize(const SynthSpec& spec);
std::size_t shared_attribute_count(const SynthSpec& spec);

GridSeries select_attributes(const GridSeries& series,
                             const std::vector<std::size_t>& indices);

}  // namespace stpt
