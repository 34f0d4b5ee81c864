#include "fode/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "fode/odeint.hpp"

namespace fode::analysis {

double spectral_norm(const Mat& a, std::size_t iters) {
  if (a.rows == 0 || a.cols == 0) return 0.0;
  // fixed pseudo-random start: a structured start (e.g. all-ones) can land
  // exactly in the null space of symmetric weight layouts
  Rng start(0x9e3779b97f4a7c15ull);
  std::vector<double> v(a.cols);
  for (double& x : v) x = start.normal();
  double vn = norm2(v);
  for (double& x : v) x /= vn;
  std::vector<double> av(a.rows), atav(a.cols);
  auto apply = [&](const std::vector<double>& x, std::vector<double>& y, bool transpose) {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t r = 0; r < a.rows; ++r)
      for (std::size_t c = 0; c < a.cols; ++c) {
        if (transpose)
          y[c] += a(r, c) * x[r];
        else
          y[r] += a(r, c) * x[c];
      }
  };
  for (std::size_t it = 0; it < iters; ++it) {
    apply(v, av, false);
    apply(av, atav, true);
    double n = norm2(atav);
    if (n == 0.0) return 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = atav[i] / n;
  }
  apply(v, av, false);
  return norm2(av);
}

LipschitzReport lipschitz_bound(const FodeModel& m) {
  LipschitzReport r;
  constexpr double kInflate = 1.01;  // safety margin on iterated norms
  double n1 = spectral_norm(m.mlp.w1) * kInflate;
  double n2 = spectral_norm(m.mlp.w2) * kInflate;
  double n3 = spectral_norm(m.mlp.w3) * kInflate;
  r.l_g = n1 * n2 * n3;
  if (m.kind == FieldKind::fode) {
    double n = double(m.window_len);
    r.l_fft = std::sqrt(n);
    r.l_ifft = 1.0 / std::sqrt(n);
    r.l_pack = 1.0;    // re-layout of spectrum halves: isometric
    r.l_unpack = 1.0;  // symmetric reconstruction + projection: contractive
  } else {
    r.l_fft = r.l_ifft = r.l_pack = r.l_unpack = 1.0;
  }
  r.l_f_bound = r.l_ifft * r.l_unpack * r.l_g * r.l_pack * r.l_fft;
  return r;
}

double empirical_lipschitz(const FodeModel& m, std::size_t n_pairs, double radius,
                           std::uint64_t seed) {
  if (n_pairs == 0) throw std::invalid_argument("need at least one pair");
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  Rng rng(seed);
  std::size_t dim = m.state_dim();
  std::vector<double> x(dim), xp(dim), fx(dim), fxp(dim);
  FieldScratch scratch;
  double worst = 0.0;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    for (double& v : x) v = rng.normal();
    std::vector<double> dir(dim);
    for (double& v : dir) v = rng.normal();
    double dn = norm2(dir);
    if (dn == 0.0) continue;
    double scale = radius * (1.0 - rng.uniform01());  // (0, radius]
    for (std::size_t i = 0; i < dim; ++i) xp[i] = x[i] + dir[i] / dn * scale;
    field_eval_fast(m, x, 0.0, fx, scratch);
    field_eval_fast(m, xp, 0.0, fxp, scratch);
    double diff = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double d = fxp[i] - fx[i];
      diff += d * d;
    }
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

LipschitzReport certify(const FodeModel& m, std::size_t n_pairs, double radius,
                        std::uint64_t seed) {
  LipschitzReport r = lipschitz_bound(m);
  r.empirical_max_ratio = empirical_lipschitz(m, n_pairs, radius, seed);
  r.n_pairs = n_pairs;
  r.pass = r.l_f_bound >= r.empirical_max_ratio;
  return r;
}

void write_lipschitz_json(const LipschitzReport& r, const std::string& path) {
  nlohmann::json j;
  j["l_fft"] = r.l_fft;
  j["l_ifft"] = r.l_ifft;
  j["l_pack"] = r.l_pack;
  j["l_unpack"] = r.l_unpack;
  j["l_g"] = r.l_g;
  j["l_f_bound"] = r.l_f_bound;
  j["empirical_max_ratio"] = r.empirical_max_ratio;
  j["n_pairs"] = r.n_pairs;
  j["pass"] = r.pass;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

std::vector<spectral::Spectrogram> hidden_spectrogram(
    const std::vector<FodeModel>& checkpoints, const Mat& window_data,
    const SpectroParams& p) {
  if (checkpoints.empty()) throw std::invalid_argument("no checkpoints");
  const FodeModel& first = checkpoints.front();
  for (const FodeModel& m : checkpoints)
    if (m.kind != first.kind || m.window_len != first.window_len ||
        m.channels != first.channels || m.hidden != first.hidden ||
        m.time_input != first.time_input)
      throw std::invalid_argument("checkpoints disagree on architecture");
  if (window_data.rows != first.window_len || window_data.cols != first.channels)
    throw std::invalid_argument("window shape does not match the models");
  if (p.samples < 2) throw std::invalid_argument("need at least two samples");
  if (p.probe_row >= first.window_len || p.probe_channel >= first.channels)
    throw std::invalid_argument("probe coordinate out of range");

  std::vector<double> x0 = to_state(window_data);
  std::vector<spectral::Spectrogram> out;
  out.reserve(checkpoints.size());
  for (const FodeModel& m : checkpoints) {
    odeint::SolveResult r =
        odeint::rk4_solve(odeint::model_field(m), x0, p.t0, p.t1, p.samples - 1, 1);
    std::vector<double> signal(p.samples);
    std::size_t idx = p.probe_channel * m.window_len + p.probe_row;
    for (std::size_t i = 0; i < p.samples; ++i) signal[i] = r.states[i][idx];
    out.push_back(spectral::stft(signal, p.window, p.hop));
  }
  return out;
}

double spectral_entropy(const spectral::Spectrogram& sg) {
  std::vector<double> energy(sg.frames.cols, 0.0);
  double total = 0.0;
  for (std::size_t f = 0; f < sg.frames.rows; ++f)
    for (std::size_t b = 0; b < sg.frames.cols; ++b) {
      double e = sg.frames(f, b) * sg.frames(f, b);
      energy[b] += e;
      total += e;
    }
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (double e : energy) {
    if (e > 0.0) {
      double pr = e / total;
      h -= pr * std::log(pr);
    }
  }
  return h;
}

void k_evolution_csv(const train::TrainHistory& h, const std::string& path) {
  if (h.k_snapshots.empty())
    throw std::invalid_argument("history carries no filter snapshots");
  if (h.k_snapshots.size() != h.train_loss.size())
    throw std::invalid_argument("snapshot/loss length mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "epoch,train_loss,row,col,value\n";
  char buf[128];
  for (std::size_t e = 0; e < h.k_snapshots.size(); ++e) {
    const Mat& k = h.k_snapshots[e];
    for (std::size_t r = 0; r < k.rows; ++r)
      for (std::size_t c = 0; c < k.cols; ++c) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%zu,%zu,%.17g\n", e, h.train_loss[e],
                      r, c, k(r, c));
        out << buf;
      }
  }
}

}  // namespace fode::analysis
