#pragma once

#include <string>
#include <vector>

#include "fode/model.hpp"
#include "fode/spectral.hpp"
#include "fode/trainer.hpp"

namespace fode::analysis {

// Certified upper bound on the field's Lipschitz constant: operator norms of
// the transform pair times the layer-norm product of the network, with the
// packing/reconstruction stages contractive.
struct LipschitzReport {
  double l_fft = 0.0;
  double l_ifft = 0.0;
  double l_pack = 0.0;
  double l_unpack = 0.0;
  double l_g = 0.0;
  double l_f_bound = 0.0;
  double empirical_max_ratio = 0.0;
  std::size_t n_pairs = 0;
  bool pass = false;  // bound >= empirical ratio
};

// Largest singular value by power iteration on AᵀA (no inflation applied).
double spectral_norm(const Mat& a, std::size_t iters = 30);

LipschitzReport lipschitz_bound(const FodeModel& m);

// Max of ||f(x+d)-f(x)|| / ||d|| over random pairs with ||d|| <= radius.
double empirical_lipschitz(const FodeModel& m, std::size_t n_pairs, double radius,
                           std::uint64_t seed);

LipschitzReport certify(const FodeModel& m, std::size_t n_pairs, double radius,
                        std::uint64_t seed);

void write_lipschitz_json(const LipschitzReport& r, const std::string& path);

struct SpectroParams {
  std::size_t samples = 128;  // trajectory samples over [t0, t1]
  std::size_t window = 32;
  std::size_t hop = 8;
  std::size_t probe_row = 0;
  std::size_t probe_channel = 0;
  double t0 = 0.0;
  double t1 = 1.0;
};

// For each checkpoint, rolls the trajectory out from the same window and
// returns the short-time transform of the probed state coordinate.
std::vector<spectral::Spectrogram> hidden_spectrogram(
    const std::vector<FodeModel>& checkpoints, const Mat& window_data,
    const SpectroParams& p = {});

// Shannon entropy of bin energies summed over frames; lower means the
// trajectory's energy concentrates in fewer frequency bins.
double spectral_entropy(const spectral::Spectrogram& sg);

// One row per filter entry per epoch, paired with that epoch's train loss.
void k_evolution_csv(const train::TrainHistory& h, const std::string& path);

}  // namespace fode::analysis
