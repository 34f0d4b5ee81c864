#include "fode/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace fode::nn {

namespace {

Mat xavier_mat(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat m(rows, cols);
  double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& v : m.data) v = rng.uniform(-a, a);
  return m;
}

void matvec_add(const Mat& w, std::span<const double> x, std::span<const double> b,
                std::span<double> out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = 0.0;
    const double* wr = w.data.data() + r * w.cols;
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    out[r] = acc + b[r];
  }
}

}  // namespace

MlpParams xavier_mlp(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Rng& rng) {
  MlpParams p;
  p.in_dim = in_dim;
  p.hidden = hidden;
  p.out_dim = out_dim;
  p.w1 = xavier_mat(hidden, in_dim, rng);
  p.w2 = xavier_mat(hidden, hidden, rng);
  p.w3 = xavier_mat(out_dim, hidden, rng);
  p.b1.assign(hidden, 0.0);
  p.b2.assign(hidden, 0.0);
  p.b3.assign(out_dim, 0.0);
  return p;
}

MlpParams zero_mlp(std::size_t in_dim, std::size_t hidden, std::size_t out_dim) {
  MlpParams p;
  p.in_dim = in_dim;
  p.hidden = hidden;
  p.out_dim = out_dim;
  p.w1 = Mat(hidden, in_dim);
  p.w2 = Mat(hidden, hidden);
  p.w3 = Mat(out_dim, hidden);
  p.b1.assign(hidden, 0.0);
  p.b2.assign(hidden, 0.0);
  p.b3.assign(out_dim, 0.0);
  return p;
}

void mlp_forward(const MlpParams& p, std::span<const double> x, std::span<double> out,
                 std::span<double> h1, std::span<double> h2) {
  if (x.size() != p.in_dim || out.size() != p.out_dim || h1.size() < p.hidden ||
      h2.size() < p.hidden)
    throw std::invalid_argument("mlp_forward: dimension mismatch");
  matvec_add(p.w1, x, p.b1, h1.subspan(0, p.hidden));
  for (std::size_t i = 0; i < p.hidden; ++i) h1[i] = h1[i] > 0.0 ? h1[i] : 0.0;
  matvec_add(p.w2, h1.subspan(0, p.hidden), p.b2, h2.subspan(0, p.hidden));
  for (std::size_t i = 0; i < p.hidden; ++i) h2[i] = h2[i] > 0.0 ? h2[i] : 0.0;
  matvec_add(p.w3, h2.subspan(0, p.hidden), p.b3, out);
}

std::vector<double> mlp_forward(const MlpParams& p, std::span<const double> x) {
  std::vector<double> out(p.out_dim), h1(p.hidden), h2(p.hidden);
  mlp_forward(p, x, out, h1, h2);
  return out;
}

std::vector<std::span<double>> param_views(MlpParams& p) {
  return {std::span<double>(p.w1.data), std::span<double>(p.b1),
          std::span<double>(p.w2.data), std::span<double>(p.b2),
          std::span<double>(p.w3.data), std::span<double>(p.b3)};
}

MlpStage stage_mlp(ad::Tape& tape, const MlpParams& p) {
  MlpStage s;
  s.in_dim = p.in_dim;
  s.hidden = p.hidden;
  s.out_dim = p.out_dim;
  s.w1 = tape.leaf(p.w1.data);
  s.b1 = tape.leaf(p.b1);
  s.w2 = tape.leaf(p.w2.data);
  s.b2 = tape.leaf(p.b2);
  s.w3 = tape.leaf(p.w3.data);
  s.b3 = tape.leaf(p.b3);
  return s;
}

ad::NodeId mlp_forward(ad::Tape& tape, const MlpStage& s, ad::NodeId x) {
  ad::NodeId h1 = tape.relu(tape.add(tape.matvec(s.w1, s.hidden, s.in_dim, x), s.b1));
  ad::NodeId h2 = tape.relu(tape.add(tape.matvec(s.w2, s.hidden, s.hidden, h1), s.b2));
  return tape.add(tape.matvec(s.w3, s.out_dim, s.hidden, h2), s.b3);
}

void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state,
               double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: tensor count mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t j = 0; j < params.size(); ++j) {
      state.m[j].assign(params[j].size(), 0.0);
      state.v[j].assign(params[j].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state shape mismatch");

  state.step_count += 1;
  double t = static_cast<double>(state.step_count);
  double bc1 = 1.0 - std::pow(beta1, t);
  double bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (params[j].size() != grads[j].size() || params[j].size() != state.m[j].size())
      throw std::invalid_argument("adam_step: shape mismatch");
    double* p = params[j].data();
    const double* g = grads[j].data();
    double* m = state.m[j].data();
    double* v = state.v[j].data();
    for (std::size_t i = 0; i < params[j].size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double grad_check(const std::function<double(std::span<const double>)>& loss,
                  std::span<const double> params, std::span<const double> grad_ad,
                  double eps) {
  if (params.size() != grad_ad.size()) throw std::invalid_argument("grad_check: shape mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  std::vector<double> p(params.begin(), params.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double keep = p[i];
    p[i] = keep + eps;
    double lp = loss(p);
    p[i] = keep - eps;
    double lm = loss(p);
    p[i] = keep;
    double fd = (lp - lm) / (2.0 * eps);
    double denom = std::max({std::fabs(grad_ad[i]), std::fabs(fd), 1e-12});
    worst = std::max(worst, std::fabs(grad_ad[i] - fd) / denom);
  }
  return worst;
}

}  // namespace fode::nn
