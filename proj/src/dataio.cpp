#include "dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>

#include "rng.hpp"

namespace stpt {

void GridSeries::validate() const {
  if (grid_rows == 0 || grid_cols == 0)
    throw DataError("grid series: rows and cols must be positive");
  if (attribute_names.empty())
    throw DataError("grid series: needs at least one attribute");
  if (timesteps == 0) throw DataError("grid series: needs at least one timestep");
  if (values.size() != timesteps * regions() * attributes())
    throw DataError("grid series: value count " +
                    std::to_string(values.size()) + " does not match " +
                    std::to_string(timesteps * regions() * attributes()));
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("grid series: non-finite value");
    if (v < 0.0) throw DataError("grid series: negative value");
  }
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

double parse_value(const std::string& tok, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    parse_fail(line, "bad number '" + tok + "'");
  if (!std::isfinite(v)) parse_fail(line, "non-finite value");
  if (v < 0.0) parse_fail(line, "negative value '" + tok + "'");
  return v;
}

std::size_t parse_header_field(const std::string& text, const std::string& key,
                               std::size_t line) {
  const std::string needle = key + "=";
  const auto pos = text.find(needle);
  if (pos == std::string::npos) parse_fail(line, "missing field '" + key + "'");
  std::size_t v = 0;
  const char* start = text.data() + pos + needle.size();
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(start, end, v);
  if (ec != std::errc() || ptr == start)
    parse_fail(line, "bad value for '" + key + "'");
  return v;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

GridSeries load_grid_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;

  auto next_line = [&]() {
    if (!std::getline(in, line)) parse_fail(lineno + 1, "unexpected end of file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  next_line();
  if (line != "STGRID 1")
    parse_fail(lineno, "bad magic or unsupported version '" + line + "'");

  next_line();
  GridSeries s;
  s.grid_rows = parse_header_field(line, "rows", lineno);
  s.grid_cols = parse_header_field(line, "cols", lineno);
  const std::size_t n_attrs = parse_header_field(line, "attributes", lineno);
  s.timesteps = parse_header_field(line, "timesteps", lineno);
  s.interval_minutes = parse_header_field(line, "interval_min", lineno);
  if (s.grid_rows == 0 || s.grid_cols == 0 || n_attrs == 0 || s.timesteps == 0)
    parse_fail(lineno, "all header counts must be positive");

  next_line();
  s.attribute_names = split_commas(line);
  if (s.attribute_names.size() != n_attrs)
    parse_fail(lineno, "expected " + std::to_string(n_attrs) +
                           " attribute names, got " +
                           std::to_string(s.attribute_names.size()));

  const std::size_t n = s.regions();
  s.values.assign(s.timesteps * n * n_attrs, -1.0);
  std::vector<bool> seen(s.timesteps * n_attrs, false);
  for (std::size_t i = 0; i < s.timesteps * n_attrs; ++i) {
    next_line();
    const auto sp1 = line.find(' ');
    const auto space =
        sp1 == std::string::npos ? std::string::npos : line.find(' ', sp1 + 1);
    if (line.rfind("t=", 0) != 0 || space == std::string::npos)
      parse_fail(lineno, "expected 't=<i> a=<j> <values>'");
    const std::string head = line.substr(0, space);
    const std::size_t t = parse_header_field(head, "t", lineno);
    const std::size_t a = parse_header_field(head, "a", lineno);
    if (t >= s.timesteps || a >= n_attrs)
      parse_fail(lineno, "t or a index out of range");
    if (seen[t * n_attrs + a])
      parse_fail(lineno, "duplicate block t=" + std::to_string(t) +
                             " a=" + std::to_string(a));
    seen[t * n_attrs + a] = true;
    const auto cells = split_commas(line.substr(space + 1));
    if (cells.size() != n)
      parse_fail(lineno, "expected " + std::to_string(n) + " values (rows*cols), got " +
                             std::to_string(cells.size()));
    for (std::size_t r = 0; r < n; ++r)
      s.at(t, r, a) = parse_value(cells[r], lineno);
  }
  if (std::getline(in, line) && !line.empty())
    parse_fail(lineno + 1, "trailing content");
  s.validate();
  return s;
}

void save_grid_file(const GridSeries& series, const std::string& path) {
  series.validate();
  for (const auto& name : series.attribute_names)
    if (name.find(',') != std::string::npos ||
        name.find('\n') != std::string::npos)
      throw DataError("attribute name '" + name + "' contains a separator");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "STGRID 1\n";
  out << "rows=" << series.grid_rows << " cols=" << series.grid_cols
      << " attributes=" << series.attributes()
      << " timesteps=" << series.timesteps
      << " interval_min=" << series.interval_minutes << "\n";
  for (std::size_t c = 0; c < series.attributes(); ++c) {
    if (c) out << ",";
    out << series.attribute_names[c];
  }
  out << "\n";
  const std::size_t n = series.regions();
  for (std::size_t t = 0; t < series.timesteps; ++t)
    for (std::size_t a = 0; a < series.attributes(); ++a) {
      out << "t=" << t << " a=" << a << " ";
      for (std::size_t r = 0; r < n; ++r) {
        if (r) out << ",";
        out << format_double(series.at(t, r, a));
      }
      out << "\n";
    }
  if (!out) throw DataError("write failed for '" + path + "'");
}

namespace {

GridSeries time_slice(const GridSeries& s, std::size_t begin, std::size_t end) {
  GridSeries out;
  out.grid_rows = s.grid_rows;
  out.grid_cols = s.grid_cols;
  out.interval_minutes = s.interval_minutes;
  out.attribute_names = s.attribute_names;
  out.timesteps = end - begin;
  const std::size_t block = s.regions() * s.attributes();
  out.values.assign(s.values.begin() + begin * block,
                    s.values.begin() + end * block);
  return out;
}

}  // namespace

Split split_series(const GridSeries& series, std::size_t T, std::size_t H) {
  series.validate();
  const std::size_t total = series.timesteps;
  const std::size_t i1 = static_cast<std::size_t>(0.7 * static_cast<double>(total));
  const std::size_t i2 = static_cast<std::size_t>(0.8 * static_cast<double>(total));
  const std::size_t need = T + H;
  if (i1 < need || i2 - i1 < need || total - i2 < need)
    throw DataError("series too short: splits " + std::to_string(i1) + "/" +
                    std::to_string(i2 - i1) + "/" + std::to_string(total - i2) +
                    " timesteps cannot each fit a window of T+H=" +
                    std::to_string(need));
  return {time_slice(series, 0, i1), time_slice(series, i1, i2),
          time_slice(series, i2, total)};
}

std::vector<WindowSample> windows(const GridSeries& series, std::size_t T,
                                  std::size_t H, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("windows: stride must be >= 1");
  std::vector<WindowSample> out;
  if (series.timesteps < T + H) return out;
  const std::size_t n = series.regions(), c = series.attributes();
  const std::size_t block = n * c;
  for (std::size_t origin = 0; origin + T + H <= series.timesteps;
       origin += stride) {
    WindowSample w;
    w.origin = origin;
    w.X = Tensor({T, n, c},
                 std::vector<double>(
                     series.values.begin() + origin * block,
                     series.values.begin() + (origin + T) * block));
    w.Y = Tensor({H, n, c},
                 std::vector<double>(
                     series.values.begin() + (origin + T) * block,
                     series.values.begin() + (origin + T + H) * block));
    out.push_back(std::move(w));
  }
  return out;
}

Normalizer Normalizer::fit(const GridSeries& train_split) {
  train_split.validate();
  const std::size_t c = train_split.attributes();
  Normalizer norm;
  norm.min.assign(c, std::numeric_limits<double>::infinity());
  norm.max.assign(c, -std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < train_split.timesteps; ++t)
    for (std::size_t r = 0; r < train_split.regions(); ++r)
      for (std::size_t a = 0; a < c; ++a) {
        const double v = train_split.at(t, r, a);
        norm.min[a] = std::min(norm.min[a], v);
        norm.max[a] = std::max(norm.max[a], v);
      }
  return norm;
}

GridSeries Normalizer::apply(const GridSeries& series) const {
  if (series.attributes() != attributes())
    throw ShapeError("normalizer covers " + std::to_string(attributes()) +
                     " attributes, series has " +
                     std::to_string(series.attributes()));
  GridSeries out = series;
  for (std::size_t t = 0; t < out.timesteps; ++t)
    for (std::size_t r = 0; r < out.regions(); ++r)
      for (std::size_t a = 0; a < out.attributes(); ++a)
        out.at(t, r, a) = transform(series.at(t, r, a), a);
  return out;
}

std::size_t shared_attribute_count(const SynthSpec& spec) {
  const double f = std::min(1.0, std::max(0.0, spec.shared_fraction));
  return static_cast<std::size_t>(
      std::llround(f * static_cast<double>(spec.attributes)));
}

GridSeries synthesize(const SynthSpec& spec) {
  if (spec.rows == 0 || spec.cols == 0 || spec.attributes == 0 ||
      spec.timesteps == 0)
    throw std::invalid_argument("synthesize: all dimensions must be positive");
  const std::size_t n = spec.rows * spec.cols;
  const std::size_t c_total = spec.attributes;
  const std::size_t n_shared = shared_attribute_count(spec);

  Rng structure(Rng::derive(spec.seed, 0));
  Rng noise(Rng::derive(spec.seed, 1));

  auto hotspot_map = [&](Rng& rng) {
    std::vector<double> map(n, 1.0);
    for (int k = 0; k < 2; ++k) {
      const double ci = rng.uniform(0.0, static_cast<double>(spec.rows - 1));
      const double cj = rng.uniform(0.0, static_cast<double>(spec.cols - 1));
      const double amp = rng.uniform(2.0, 4.0);
      const double sigma = rng.uniform(0.8, 1.6);
      for (std::size_t i = 0; i < spec.rows; ++i)
        for (std::size_t j = 0; j < spec.cols; ++j) {
          const double d2 = (i - ci) * (i - ci) + (j - cj) * (j - cj);
          map[i * spec.cols + j] += amp * std::exp(-d2 / (2.0 * sigma * sigma));
        }
    }
    return map;
  };

  const std::vector<double> shared_map = hotspot_map(structure);
  const double shared_phase = structure.uniform(0.0, 6.283185307179586);

  std::vector<std::vector<double>> maps(c_total);
  std::vector<double> phases(c_total), bases(c_total);
  for (std::size_t a = 0; a < c_total; ++a) {
    bases[a] = structure.uniform(10.0, 30.0);
    if (a < n_shared) {
      maps[a] = shared_map;
      phases[a] = shared_phase;
    } else {
      maps[a] = hotspot_map(structure);
      phases[a] = structure.uniform(0.0, 6.283185307179586);
    }
  }

  const double period = std::max(
      2.0, std::round(1440.0 / static_cast<double>(spec.interval_minutes)));

  GridSeries s;
  s.grid_rows = spec.rows;
  s.grid_cols = spec.cols;
  s.interval_minutes = spec.interval_minutes;
  s.timesteps = spec.timesteps;
  for (std::size_t a = 0; a < c_total; ++a)
    s.attribute_names.push_back("attr" + std::to_string(a));
  s.values.assign(spec.timesteps * n * c_total, 0.0);
  for (std::size_t t = 0; t < spec.timesteps; ++t) {
    for (std::size_t a = 0; a < c_total; ++a) {
      const double daily =
          1.0 + 0.8 * std::sin(6.283185307179586 *
                                   static_cast<double>(t % (std::size_t)period) /
                                   period +
                               phases[a]);
      for (std::size_t r = 0; r < n; ++r) {
        const double mean = bases[a] * daily * maps[a][r];
        s.at(t, r, a) = static_cast<double>(noise.poisson(mean));
      }
    }
  }
  return s;
}

GridSeries select_attributes(const GridSeries& series,
                             const std::vector<std::size_t>& indices) {
  if (indices.empty())
    throw std::invalid_argument("select_attributes: no indices given");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= series.attributes())
      throw ShapeError("select_attributes: index " +
                       std::to_string(indices[i]) + " out of range for C=" +
                       std::to_string(series.attributes()));
    for (std::size_t j = 0; j < i; ++j)
      if (indices[i] == indices[j])
        throw std::invalid_argument("select_attributes: duplicate index " +
                                    std::to_string(indices[i]));
  }
  GridSeries out;
  out.grid_rows = series.grid_rows;
  out.grid_cols = series.grid_cols;
  out.interval_minutes = series.interval_minutes;
  out.timesteps = series.timesteps;
  for (std::size_t idx : indices)
    out.attribute_names.push_back(series.attribute_names[idx]);
  out.values.resize(series.timesteps * series.regions() * indices.size());
  for (std::size_t t = 0; t < series.timesteps; ++t)
    for (std::size_t r = 0; r < series.regions(); ++r)
      for (std::size_t k = 0; k < indices.size(); ++k)
        out.at(t, r, k) = series.at(t, r, indices[k]);
  return out;
}

}  // namespace stpt
