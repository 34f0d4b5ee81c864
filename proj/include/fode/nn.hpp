#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fode/autodiff.hpp"
#include "fode/mat.hpp"
#include "fode/rng.hpp"

namespace fode::nn {

// 3-layer ReLU MLP: W3·relu(W2·relu(W1·x + b1) + b2) + b3.
struct MlpParams {
  std::size_t in_dim = 0;
  std::size_t hidden = 0;
  std::size_t out_dim = 0;
  Mat w1, w2, w3;
  std::vector<double> b1, b2, b3;
};

MlpParams xavier_mlp(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, Rng& rng);
MlpParams zero_mlp(std::size_t in_dim, std::size_t hidden, std::size_t out_dim);

std::vector<double> mlp_forward(const MlpParams& p, std::span<const double> x);
// In-place variant for hot loops; h1/h2 are hidden-width scratch buffers.
void mlp_forward(const MlpParams& p, std::span<const double> x, std::span<double> out,
                 std::span<double> h1, std::span<double> h2);

// Parameter leaves staged once on a tape, reused by every forward in a batch.
struct MlpStage {
  ad::NodeId w1, b1, w2, b2, w3, b3;
  std::size_t in_dim = 0, hidden = 0, out_dim = 0;
};

MlpStage stage_mlp(ad::Tape& tape, const MlpParams& p);
ad::NodeId mlp_forward(ad::Tape& tape, const MlpStage& s, ad::NodeId x);

// Mutable views over the six tensors in a fixed order (w1,b1,w2,b2,w3,b3);
// the order is shared by staging, gradient gathering, and optimizer state.
std::vector<std::span<double>> param_views(MlpParams& p);

struct AdamState {
  std::vector<std::vector<double>> m, v;  // shapes mirror the parameter tensors
  std::uint64_t step_count = 0;
};

// One bias-corrected Adam update over a list of parameter tensors. The state
// is initialized lazily on first use and must keep the same shapes thereafter.
void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Central-difference check of a supplied gradient: perturbs each parameter by
// ±eps, re-evaluates loss, and reports the max relative error with
// denominator max(|g_ad|, |g_fd|, 1e-12).
double grad_check(const std::function<double(std::span<const double>)>& loss,
                  std::span<const double> params, std::span<const double> grad_ad,
                  double eps);

}  // namespace fode::nn
