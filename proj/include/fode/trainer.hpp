#pragma once

#include <string>
#include <vector>

#include "fode/datasets.hpp"
#include "fode/model.hpp"
#include "fode/odeint.hpp"

namespace fode::train {

enum class LossKind { mse, cross_entropy };

struct TrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  odeint::SolverConfig solver;  // rk4_steps drives the unrolled training path
  LossKind loss = LossKind::mse;
  FieldKind model_kind = FieldKind::fode;
  bool use_filter = true;
  InitScheme k_init = InitScheme::uniform;
  bool time_input = false;
  std::size_t hidden = 16;
  bool record_k = false;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
};

struct TrainHistory {
  std::vector<double> train_loss;  // one entry per completed epoch
  std::vector<double> test_loss;
  std::vector<double> seconds;
  std::vector<Mat> k_snapshots;  // filter at each epoch start when recorded
  std::size_t best_epoch = 0;
  bool aborted = false;    // non-finite loss; result falls back to best
  bool lr_halved = false;  // divergence guard tripped once
};

struct TrainResult {
  FodeModel model;  // state after the last completed epoch
  FodeModel best;   // lowest test loss seen
  TrainHistory history;
};

double mse_loss(std::span<const double> pred, std::span<const double> target);
double mse_loss(const Mat& pred, const Mat& target);

// Percent mean absolute relative error over elements with |target| > eps;
// throws if every element is excluded.
double mape(std::span<const double> pred, std::span<const double> target,
            double eps = 1e-8);
double mape(const Mat& pred, const Mat& target, double eps = 1e-8);

double cross_entropy(std::span<const double> logits, std::size_t class_index);

// Builds the model described by cfg for a dataset with the given window
// geometry; the same constructor the CLI uses.
FodeModel make_configured_model(const TrainConfig& cfg, std::size_t window_len,
                                std::size_t channels, Rng& rng);

TrainResult train(const FodeModel& init, const ds::WindowDataset& data,
                  const TrainConfig& cfg);

// One forecast step: integrate the field from the window and apply the
// output filter when the model carries one.
Mat predict_window(const FodeModel& m, const Mat& input, const odeint::SolverConfig& scfg);

enum class EvalMode { windowed, rollout };
EvalMode parse_eval_mode(const std::string& s);

struct Metrics {
  double mse = 0.0;
  double mape_pct = 0.0;
  std::size_t n_test = 0;
};

// windowed: every test window scored independently. rollout: from the first
// test window, predictions feed the next input until the series end.
Metrics evaluate(const FodeModel& m, const ds::WindowDataset& data, EvalMode mode,
                 const odeint::SolverConfig& scfg);

// Classification: attach a linear head, train with cross-entropy on whole
// sequences, score by argmax.
void attach_head(FodeModel& m, std::size_t num_classes, Rng& rng);

struct ClassifyResult {
  FodeModel model;
  TrainHistory history;
};

ClassifyResult train_classifier(const FodeModel& init, const ds::LabeledSet& set,
                                const TrainConfig& cfg);
std::vector<double> classify_logits(const FodeModel& m, const Mat& seq,
                                    const odeint::SolverConfig& scfg);
double accuracy(const FodeModel& m, const ds::LabeledSet& set,
                const odeint::SolverConfig& scfg);

void write_history_csv(const TrainHistory& h, const std::string& path);
void write_k_csv(const TrainHistory& h, const std::string& path);

}  // namespace fode::train
