#include "fode/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "fode/odeint.hpp"

namespace fode::ds {

void validate(const TimeSeries& s) {
  if (s.t.size() != s.values.rows)
    throw std::invalid_argument("time series: grid/value row mismatch");
  if (s.names.size() != s.values.cols)
    throw std::invalid_argument("time series: channel name count mismatch");
  if (s.t.size() >= 2) {
    double dt = s.t[1] - s.t[0];
    if (dt <= 0.0) throw std::invalid_argument("time series: grid not increasing");
    for (std::size_t i = 1; i < s.t.size(); ++i)
      if (std::fabs((s.t[i] - s.t[i - 1]) - dt) > 1e-12)
        throw std::invalid_argument("time series: non-uniform grid");
  }
  for (double v : s.values.data)
    if (!std::isfinite(v)) throw std::invalid_argument("time series: non-finite value");
}

namespace {

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> t(n);
  double dt = (b - a) / double(n - 1);
  for (std::size_t i = 0; i < n; ++i) t[i] = a + double(i) * dt;
  return t;
}

TimeSeries integrate_system(const odeint::Field& f, std::vector<double> x0, double a,
                            double b, std::size_t n, std::vector<std::string> names) {
  TimeSeries s;
  s.t = linspace(a, b, n);
  s.values = odeint::dopri5_sample(f, x0, s.t, 1e-10, 1e-12);
  s.names = std::move(names);
  validate(s);
  return s;
}

}  // namespace

TimeSeries gen_periodic3d(char variant, double amp) {
  if (variant != 'A' && variant != 'B')
    throw std::invalid_argument("periodic3d variant must be 'A' or 'B'");
  if (amp < 0.0) throw std::invalid_argument("periodic3d amp must be >= 0");
  TimeSeries s;
  s.t = linspace(0.0, 20.0, 1000);
  s.values = Mat(1000, 3);
  s.names = {"x", "y", "z"};
  for (std::size_t i = 0; i < 1000; ++i) {
    double t = s.t[i];
    double w = amp * std::sin(20.0 * t);
    if (variant == 'A') {
      s.values(i, 0) = std::sin(t) + w;
      s.values(i, 1) = std::cos(t) + amp * std::cos(20.0 * t);
      s.values(i, 2) = std::sin(2.0 * t) + w;
    } else {
      s.values(i, 0) = std::sin(2.0 * t) + w;
      s.values(i, 1) = std::cos(2.0 * t) + amp * std::cos(20.0 * t);
      s.values(i, 2) = std::cos(5.0 * t) + w;
    }
  }
  return s;
}

TimeSeries gen_unstable_oscillator(double noise_sigma, std::uint64_t seed) {
  if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
  TimeSeries s;
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; 0.01 * double(i) <= 2.0 * pi; ++i) s.t.push_back(0.01 * double(i));
  s.values = Mat(s.t.size(), 1);
  s.names = {"x"};
  Rng rng(seed);
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    double t = s.t[i];
    double clean = 0.1 * std::exp(0.5 * t) * (std::cos(pi * t + 1.0) + std::sin(pi * t - 1.0));
    s.values(i, 0) = clean + (noise_sigma > 0.0 ? noise_sigma * rng.normal() : 0.0);
  }
  return s;
}

TimeSeries gen_forced_vibration() {
  const double zeta = -0.1, wn = 2.0 * std::numbers::pi, f0 = 0.1, cap_omega = 4.0;
  odeint::Field f = [=](double t, std::span<const double> x, std::span<double> dx) {
    dx[0] = x[1];
    dx[1] = -2.0 * zeta * wn * x[1] - wn * wn * x[0] + f0 * std::cos(cap_omega * t);
  };
  return integrate_system(f, {0.5, 0.0}, 0.0, 5.0, 501, {"x", "v"});
}

TimeSeries gen_lotka_volterra() {
  const double alpha = 0.1, beta = 0.02, gamma = 0.3, delta = 0.01;
  odeint::Field f = [=](double, std::span<const double> x, std::span<double> dx) {
    dx[0] = alpha * x[0] - beta * x[0] * x[1];
    dx[1] = delta * x[0] * x[1] - gamma * x[1];
  };
  return integrate_system(f, {40.0, 2.0}, 0.0, 100.0, 500, {"x", "y"});
}

TimeSeries gen_glycolytic() {
  const double a = 0.75, b = 0.1;
  odeint::Field f = [=](double, std::span<const double> x, std::span<double> dx) {
    dx[0] = a - b * x[0] - x[0] * x[1] * x[1];
    dx[1] = b * x[0] - x[1] + x[0] * x[1] * x[1];
  };
  return integrate_system(f, {1.0, 1.0}, 0.0, 100.0, 1000, {"x1", "x2"});
}

TimeSeries gen_named(const std::string& name, double amp, double noise_sigma,
                     std::uint64_t seed) {
  if (name == "periodic3d-a") return gen_periodic3d('A', amp);
  if (name == "periodic3d-b") return gen_periodic3d('B', amp);
  if (name == "unstable-oscillator") return gen_unstable_oscillator(noise_sigma, seed);
  if (name == "forced-vibration") return gen_forced_vibration();
  if (name == "lotka-volterra") return gen_lotka_volterra();
  if (name == "glycolytic") return gen_glycolytic();
  throw std::invalid_argument("unknown dataset: " + name);
}

WindowDataset window_split(const TimeSeries& series, std::size_t in_len,
                           std::size_t out_len, double train_frac) {
  if (in_len == 0 || out_len == 0)
    throw std::invalid_argument("window lengths must be positive");
  if (in_len + out_len > series.len())
    throw std::invalid_argument("series too short for requested windows");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("train fraction must lie in (0,1)");

  std::size_t num = series.len() - in_len - out_len + 1;
  WindowDataset d;
  d.in_len = in_len;
  d.out_len = out_len;
  d.split_index = std::size_t(std::floor(train_frac * double(num)));
  d.inputs.reserve(num);
  d.targets.reserve(num);
  std::size_t c = series.channels();
  for (std::size_t i = 0; i < num; ++i) {
    Mat in(in_len, c), out(out_len, c);
    for (std::size_t r = 0; r < in_len; ++r)
      for (std::size_t j = 0; j < c; ++j) in(r, j) = series.values(i + r, j);
    for (std::size_t r = 0; r < out_len; ++r)
      for (std::size_t j = 0; j < c; ++j) out(r, j) = series.values(i + in_len + r, j);
    d.inputs.push_back(std::move(in));
    d.targets.push_back(std::move(out));
  }
  return d;
}

void save_csv(const TimeSeries& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "t";
  for (const auto& n : s.names) out << "," << n;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < s.len(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", s.t[i]);
    out << buf;
    for (std::size_t j = 0; j < s.channels(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", s.values(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& cell, std::size_t row) {
  try {
    std::size_t pos = 0;
    double v = std::stod(cell, &pos);
    while (pos < cell.size() && std::isspace((unsigned char)cell[pos])) ++pos;
    if (pos != cell.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("non-numeric cell '" + cell + "' in data row " +
                             std::to_string(row));
  }
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

CsvTable read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw std::runtime_error("missing header row: " + path);
  CsvTable tab;
  tab.header = split_line(line);
  for (const auto& h : tab.header) {
    if (h.empty()) throw std::runtime_error("empty header cell: " + path);
    double dummy;
    if (std::sscanf(h.c_str(), "%lf", &dummy) == 1)
      throw std::runtime_error("numeric header cell (missing header?): " + path);
  }
  std::size_t rowno = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rowno;
    auto cells = split_line(line);
    if (cells.size() != tab.header.size())
      throw std::runtime_error("ragged row " + std::to_string(rowno) + " in " + path);
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) row[j] = parse_cell(cells[j], rowno);
    tab.rows.push_back(std::move(row));
  }
  if (tab.rows.empty()) throw std::runtime_error("no data rows: " + path);
  return tab;
}

}  // namespace

TimeSeries load_csv(const std::string& path) {
  CsvTable tab = read_table(path);
  TimeSeries s;
  std::size_t first_chan = 0;
  if (tab.header[0] == "t") {
    first_chan = 1;
    if (tab.header.size() < 2) throw std::runtime_error("time column only: " + path);
    for (const auto& row : tab.rows) s.t.push_back(row[0]);
  } else {
    // no explicit grid: samples sit on the integer index grid
    for (std::size_t i = 0; i < tab.rows.size(); ++i) s.t.push_back(double(i));
  }
  std::size_t c = tab.header.size() - first_chan;
  s.names.assign(tab.header.begin() + first_chan, tab.header.end());
  s.values = Mat(tab.rows.size(), c);
  for (std::size_t i = 0; i < tab.rows.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) s.values(i, j) = tab.rows[i][first_chan + j];
  validate(s);
  return s;
}

LabeledSet load_labeled_csv(const std::string& path,
                            const std::optional<std::string>& label_column) {
  CsvTable tab = read_table(path);
  std::size_t label_idx = tab.header.size() - 1;
  if (label_column) {
    auto it = std::find(tab.header.begin(), tab.header.end(), *label_column);
    if (it == tab.header.end())
      throw std::runtime_error("label column '" + *label_column + "' not in " + path);
    label_idx = std::size_t(it - tab.header.begin());
  } else {
    auto it = std::find(tab.header.begin(), tab.header.end(), "label");
    if (it != tab.header.end()) label_idx = std::size_t(it - tab.header.begin());
  }
  if (tab.header.size() < 2)
    throw std::runtime_error("labeled CSV needs at least one value column: " + path);

  LabeledSet set;
  std::vector<long long> raw(tab.rows.size());
  for (std::size_t i = 0; i < tab.rows.size(); ++i) {
    double lv = tab.rows[i][label_idx];
    if (lv != std::floor(lv))
      throw std::runtime_error("non-integer label in row " + std::to_string(i + 1));
    raw[i] = (long long)lv;
    Mat seq(tab.header.size() - 1, 1);
    std::size_t k = 0;
    for (std::size_t j = 0; j < tab.header.size(); ++j)
      if (j != label_idx) seq(k++, 0) = tab.rows[i][j];
    set.seqs.push_back(std::move(seq));
  }
  std::map<long long, std::size_t> classes;
  for (long long v : raw) classes.emplace(v, 0);
  for (auto& [v, id] : classes) {
    id = set.class_values.size();
    set.class_values.push_back(v);
  }
  for (long long v : raw) set.labels.push_back(classes.at(v));
  set.num_classes = classes.size();
  return set;
}

}  // namespace fode::ds
