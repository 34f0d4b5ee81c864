#include "fode/odeint.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace fode::odeint {

namespace {

bool finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

[[noreturn]] void fail(const std::string& msg, double t) {
  throw std::runtime_error(msg + " at t=" + std::to_string(t));
}

}  // namespace

const char* method_name(Method m) { return m == Method::rk4 ? "rk4" : "dopri5"; }

Method parse_method(const std::string& s) {
  if (s == "rk4") return Method::rk4;
  if (s == "dopri5") return Method::dopri5;
  throw std::invalid_argument("unknown solver method: " + s);
}

Field model_field(const FodeModel& m) {
  auto scratch = std::make_shared<FieldScratch>();
  const FodeModel* mp = &m;
  return [mp, scratch](double t, std::span<const double> x, std::span<double> dx) {
    field_eval_fast(*mp, x, t, dx, *scratch);
  };
}

SolveResult rk4_solve(const Field& f, std::span<const double> x0, double t0, double t1,
                      std::size_t steps, std::size_t record_every) {
  if (steps < 1) throw std::invalid_argument("rk4_solve: steps must be >= 1");
  std::size_t n = x0.size();
  SolveResult res;
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> k1(n), k2(n), k3(n), k4(n), stage(n), next(n);
  double h = (t1 - t0) / static_cast<double>(steps);

  auto record = [&](double t) {
    res.ts.push_back(t);
    res.states.push_back(x);
  };
  if (record_every > 0) record(t0);

  for (std::size_t i = 0; i < steps; ++i) {
    double t = t0 + static_cast<double>(i) * h;
    f(t, x, k1);
    for (std::size_t j = 0; j < n; ++j) stage[j] = 1.0 * x[j] + (h / 2.0) * k1[j];
    f(t + h / 2.0, stage, k2);
    for (std::size_t j = 0; j < n; ++j) stage[j] = 1.0 * x[j] + (h / 2.0) * k2[j];
    f(t + h / 2.0, stage, k3);
    for (std::size_t j = 0; j < n; ++j) stage[j] = 1.0 * x[j] + h * k3[j];
    f(t + h, stage, k4);
    res.n_field_evals += 4;

    // accumulation mirrors the tape's weighted-sum op so the two routes agree
    // bit for bit
    std::fill(next.begin(), next.end(), 0.0);
    const double coeff[5] = {1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0};
    const std::vector<double>* parts[5] = {&x, &k1, &k2, &k3, &k4};
    for (int p = 0; p < 5; ++p)
      for (std::size_t j = 0; j < n; ++j) next[j] += coeff[p] * (*parts[p])[j];
    x.swap(next);
    if (!finite(x)) fail("rk4_solve: non-finite state", t + h);
    if (record_every > 0 && ((i + 1) % record_every == 0 || i + 1 == steps)) record(t + h);
  }
  res.final_state = std::move(x);
  return res;
}

namespace {

// Dormand–Prince 5(4) tableau
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA2[1] = {1.0 / 5};
constexpr double kA3[2] = {3.0 / 40, 9.0 / 40};
constexpr double kA4[3] = {44.0 / 45, -56.0 / 15, 32.0 / 9};
constexpr double kA5[4] = {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729};
constexpr double kA6[5] = {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176,
                           -5103.0 / 18656};
constexpr double kA7[6] = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784,
                           11.0 / 84};
constexpr double kE[7] = {71.0 / 57600,      0.0,        -71.0 / 16695, 71.0 / 1920,
                          -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

struct Dopri5 {
  const Field& f;
  std::size_t n;
  std::vector<std::vector<double>> k{7};
  std::vector<double> y, ynew, ytmp, sc;
  std::size_t evals = 0;

  Dopri5(const Field& field, std::span<const double> x0) : f(field), n(x0.size()) {
    for (auto& kk : k) kk.resize(n);
    y.assign(x0.begin(), x0.end());
    ynew.resize(n);
    ytmp.resize(n);
    sc.resize(n);
  }

  void eval(double t, const std::vector<double>& x, std::vector<double>& out) {
    f(t, x, out);
    ++evals;
  }

  // One trial step of size h from (t, y, k[0]); fills ynew and returns the
  // scaled error norm.
  double try_step(double t, double h, double rtol, double atol) {
    auto stage = [&](const double* a, int m) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += a[i] * k[i][j];
        ytmp[j] = y[j] + h * acc;
      }
    };
    stage(kA2, 1);
    eval(t + kC[1] * h, ytmp, k[1]);
    stage(kA3, 2);
    eval(t + kC[2] * h, ytmp, k[2]);
    stage(kA4, 3);
    eval(t + kC[3] * h, ytmp, k[3]);
    stage(kA5, 4);
    eval(t + kC[4] * h, ytmp, k[4]);
    stage(kA6, 5);
    eval(t + kC[5] * h, ytmp, k[5]);
    stage(kA7, 6);
    ynew = ytmp;
    eval(t + h, ynew, k[6]);  // FSAL stage

    double err = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double e = 0.0;
      for (int i = 0; i < 7; ++i) e += kE[i] * k[i][j];
      e *= h;
      double scj = atol + rtol * std::max(std::fabs(y[j]), std::fabs(ynew[j]));
      double q = e / scj;
      err += q * q;
    }
    return std::sqrt(err / static_cast<double>(n));
  }

  double initial_step(double t0, double t1, double rtol, double atol) {
    for (std::size_t j = 0; j < n; ++j) sc[j] = atol + rtol * std::fabs(y[j]);
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double a = y[j] / sc[j], b = k[0][j] / sc[j];
      d0 += a * a;
      d1 += b * b;
    }
    d0 = std::sqrt(d0 / static_cast<double>(n));
    d1 = std::sqrt(d1 / static_cast<double>(n));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * (d0 / d1);
    h0 = std::min(h0, t1 - t0);

    for (std::size_t j = 0; j < n; ++j) ytmp[j] = y[j] + h0 * k[0][j];
    eval(t0 + h0, ytmp, k[1]);
    double d2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double a = (k[1][j] - k[0][j]) / sc[j];
      d2 += a * a;
    }
    d2 = std::sqrt(d2 / static_cast<double>(n)) / h0;

    double dmax = std::max(d1, d2);
    double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                              : std::pow(0.01 / dmax, 0.2);
    return std::min({100.0 * h0, h1, t1 - t0});
  }
};

}  // namespace

SolveResult dopri5_solve(const Field& f, std::span<const double> x0, double t0, double t1,
                         double rtol, double atol, std::size_t max_steps) {
  if (!(rtol > 0.0) || !(atol > 0.0))
    throw std::invalid_argument("dopri5_solve: tolerances must be positive");
  if (!(t1 > t0)) throw std::invalid_argument("dopri5_solve: t1 must exceed t0");

  constexpr double kSafe = 0.9, kFacl = 0.2, kFacr = 10.0, kBeta = 0.04;
  const double expo1 = 0.2 - kBeta * 0.75;

  Dopri5 s(f, x0);
  SolveResult res;
  double t = t0;
  s.eval(t0, s.y, s.k[0]);
  double h = s.initial_step(t0, t1, rtol, atol);
  double facold = 1e-4;
  bool last_rejected = false;
  std::size_t steps = 0;

  while (t < t1) {
    if (++steps > max_steps) fail("dopri5_solve: max step count exceeded", t);
    if (h < 1e-14 * (t1 - t0)) fail("dopri5_solve: step size underflow", t);
    h = std::min(h, t1 - t);

    double err = s.try_step(t, h, rtol, atol);
    double fac11 = std::pow(err, expo1);
    if (err <= 1.0) {
      double fac = fac11 / std::pow(facold, kBeta);
      fac = std::max(1.0 / kFacr, std::min(1.0 / kFacl, fac / kSafe));
      double hnew = h / fac;
      if (last_rejected) hnew = std::min(hnew, h);
      facold = std::max(err, 1e-4);
      res.max_accepted_err = std::max(res.max_accepted_err, err);
      t += h;
      s.y = s.ynew;
      s.k[0] = s.k[6];  // FSAL
      if (!finite(s.y)) fail("dopri5_solve: non-finite state", t);
      h = hnew;
      last_rejected = false;
    } else {
      res.n_rejected += 1;
      h = h / std::min(1.0 / kFacl, fac11 / kSafe);
      last_rejected = true;
    }
  }
  res.final_state = s.y;
  res.n_field_evals = s.evals;
  return res;
}

Mat dopri5_sample(const Field& f, std::span<const double> x0, std::span<const double> ts,
                  double rtol, double atol, std::size_t max_steps) {
  if (ts.size() < 1) throw std::invalid_argument("dopri5_sample: empty grid");
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (!(ts[i] > ts[i - 1])) throw std::invalid_argument("dopri5_sample: grid not increasing");

  Mat out(ts.size(), x0.size());
  std::vector<double> x(x0.begin(), x0.end());
  for (std::size_t j = 0; j < x.size(); ++j) out(0, j) = x[j];
  for (std::size_t i = 1; i < ts.size(); ++i) {
    SolveResult r = dopri5_solve(f, x, ts[i - 1], ts[i], rtol, atol, max_steps);
    x = std::move(r.final_state);
    for (std::size_t j = 0; j < x.size(); ++j) out(i, j) = x[j];
  }
  return out;
}

SolveResult solve(const Field& f, std::span<const double> x0, const SolverConfig& cfg) {
  if (cfg.method == Method::rk4) return rk4_solve(f, x0, cfg.t0, cfg.t1, cfg.rk4_steps);
  return dopri5_solve(f, x0, cfg.t0, cfg.t1, cfg.rtol, cfg.atol, cfg.max_steps);
}

ad::NodeId solve_unrolled(ad::Tape& tape, const FodeModel& m, const FieldStage& s,
                          ad::NodeId x0, double t0, double t1, std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("solve_unrolled: steps must be >= 1");
  double h = (t1 - t0) / static_cast<double>(steps);
  ad::NodeId x = x0;
  for (std::size_t i = 0; i < steps; ++i) {
    double t = t0 + static_cast<double>(i) * h;
    ad::NodeId k1 = taped_field(tape, m, s, x, t);
    ad::NodeId k2 = taped_field(tape, m, s, tape.axpy(x, k1, 1.0, h / 2.0), t + h / 2.0);
    ad::NodeId k3 = taped_field(tape, m, s, tape.axpy(x, k2, 1.0, h / 2.0), t + h / 2.0);
    ad::NodeId k4 = taped_field(tape, m, s, tape.axpy(x, k3, 1.0, h), t + h);
    std::vector<ad::NodeId> parts{x, k1, k2, k3, k4};
    std::vector<double> coeffs{1.0, h / 6.0, h / 3.0, h / 3.0, h / 6.0};
    x = tape.weighted_sum(parts, coeffs);
  }
  return x;
}

AdjointResult adjoint_grad(const FodeModel& m, std::span<const double> x1,
                           std::span<const double> loss_grad_t1, const SolverConfig& cfg) {
  std::size_t n = x1.size();
  if (loss_grad_t1.size() != n) throw std::invalid_argument("adjoint_grad: seed shape mismatch");

  const nn::MlpParams& p = m.mlp;
  const std::size_t sizes[6] = {p.w1.data.size(), p.b1.size(), p.w2.data.size(),
                                p.b2.size(),      p.w3.data.size(), p.b3.size()};
  std::size_t np = 0;
  for (std::size_t sz : sizes) np += sz;

  auto tape = std::make_shared<ad::Tape>();
  auto evals = std::make_shared<std::size_t>(0);
  const FodeModel* mp = &m;

  // augmented state: [x, adjoint a, parameter accumulator]; integrated in
  // reversed time u with t = t1 − u, so dx/du = −f and the adjoint/parameter
  // rows flip sign back to +.
  Field aug = [mp, tape, evals, n, cfg](double u, std::span<const double> y,
                                        std::span<double> dy) {
    double t = cfg.t1 - u;
    tape->reset();
    FieldStage s = stage_field(*tape, *mp);
    ad::NodeId xn = tape->leaf(y.subspan(0, n));
    ad::NodeId fx = taped_field(*tape, *mp, s, xn, t);
    tape->backward(fx, y.subspan(n, n));
    ++*evals;

    std::span<const double> fval = tape->value(fx);
    for (std::size_t j = 0; j < n; ++j) dy[j] = -fval[j];
    std::span<const double> gx = tape->grad(xn);
    for (std::size_t j = 0; j < n; ++j) dy[n + j] = gx[j];
    std::size_t off = 2 * n;
    for (ad::NodeId pn : {s.mlp.w1, s.mlp.b1, s.mlp.w2, s.mlp.b2, s.mlp.w3, s.mlp.b3}) {
      std::span<const double> g = tape->grad(pn);
      std::copy(g.begin(), g.end(), dy.begin() + off);
      off += g.size();
    }
  };

  std::vector<double> y0(2 * n + np, 0.0);
  std::copy(x1.begin(), x1.end(), y0.begin());
  std::copy(loss_grad_t1.begin(), loss_grad_t1.end(), y0.begin() + n);

  SolveResult r;
  try {
    r = dopri5_solve(aug, y0, 0.0, cfg.t1 - cfg.t0, cfg.rtol, cfg.atol, cfg.max_steps);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string("adjoint backward solve diverged: ") + e.what());
  }

  AdjointResult out;
  out.x0.assign(r.final_state.begin() + n, r.final_state.begin() + 2 * n);
  std::size_t off = 2 * n;
  for (std::size_t sz : sizes) {
    out.theta.emplace_back(r.final_state.begin() + off, r.final_state.begin() + off + sz);
    off += sz;
  }
  out.n_field_evals = *evals;
  return out;
}

}  // namespace fode::odeint
