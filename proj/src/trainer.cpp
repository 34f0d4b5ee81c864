#include "fode/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "fode/nn.hpp"

namespace fode::train {

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("mse: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - target[i];
    s += d * d;
  }
  return s / double(pred.size());
}

double mse_loss(const Mat& pred, const Mat& target) {
  if (!pred.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
  return mse_loss(std::span<const double>(pred.data), std::span<const double>(target.data));
}

double mape(std::span<const double> pred, std::span<const double> target, double eps) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("mape: shape mismatch");
  if (!(eps > 0.0)) throw std::invalid_argument("mape: eps must be positive");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::fabs(target[i]) > eps) {
      s += std::fabs(pred[i] - target[i]) / std::fabs(target[i]);
      ++n;
    }
  }
  if (n == 0) throw std::runtime_error("mape undefined: every target magnitude below eps");
  return 100.0 * s / double(n);
}

double mape(const Mat& pred, const Mat& target, double eps) {
  if (!pred.same_shape(target)) throw std::invalid_argument("mape: shape mismatch");
  return mape(std::span<const double>(pred.data), std::span<const double>(target.data), eps);
}

double cross_entropy(std::span<const double> logits, std::size_t class_index) {
  if (class_index >= logits.size()) throw std::invalid_argument("class index out of range");
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return std::log(z) - (logits[class_index] - mx);
}

FodeModel make_configured_model(const TrainConfig& cfg, std::size_t window_len,
                                std::size_t channels, Rng& rng) {
  return make_model(cfg.model_kind, window_len, channels, cfg.hidden, cfg.use_filter,
                    cfg.k_init, cfg.time_input, rng);
}

Mat predict_window(const FodeModel& m, const Mat& input, const odeint::SolverConfig& scfg) {
  if (input.rows != m.window_len || input.cols != m.channels)
    throw std::invalid_argument("window shape does not match the model");
  std::vector<double> x0 = to_state(input);
  odeint::SolveResult r = odeint::solve(odeint::model_field(m), x0, scfg);
  Mat out = to_mat(r.final_state, m.window_len, m.channels);
  return m.use_filter ? apply_filter(m.filter_k, out) : out;
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "windowed") return EvalMode::windowed;
  if (s == "rollout") return EvalMode::rollout;
  throw std::invalid_argument("unknown eval mode: " + s);
}

namespace {

void check_geometry(const FodeModel& m, const ds::WindowDataset& data) {
  if (data.inputs.empty()) throw std::invalid_argument("dataset is empty");
  if (data.in_len != m.window_len || data.out_len != m.window_len)
    throw std::invalid_argument(
        "window lengths must both equal the model window (it maps a window to a window)");
  if (data.inputs[0].cols != m.channels)
    throw std::invalid_argument("channel count does not match the model");
}

std::vector<ad::NodeId> mlp_param_ids(const FieldStage& s) {
  return {s.mlp.w1, s.mlp.b1, s.mlp.w2, s.mlp.b2, s.mlp.w3, s.mlp.b3};
}

}  // namespace

TrainResult train(const FodeModel& init, const ds::WindowDataset& data,
                  const TrainConfig& cfg) {
  check_geometry(init, data);
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  std::size_t ntrain = data.num_train();
  if (ntrain == 0) throw std::invalid_argument("no training windows");

  TrainResult res{init, init, {}};
  FodeModel& m = res.model;
  TrainHistory& hist = res.history;
  double lr = cfg.lr;
  const std::size_t n = m.window_len, c = m.channels;

  // the filter lives in state layout here so the tape leaf, its gradient and
  // the optimizer slot all index identically
  std::vector<double> kvec = to_state(m.filter_k);
  nn::AdamState adam;
  ad::Tape tape;
  Rng rng(cfg.seed);
  std::vector<std::size_t> perm(ntrain);
  std::iota(perm.begin(), perm.end(), 0);
  double best_loss = std::numeric_limits<double>::infinity();

  odeint::SolverConfig eval_cfg = cfg.solver;
  eval_cfg.method = odeint::Method::rk4;  // same discretization as the objective
  auto test_loss_of = [&](const FodeModel& mm) {
    double s = 0.0;
    std::size_t nel = 0;
    for (std::size_t i = data.split_index; i < data.inputs.size(); ++i) {
      Mat pred = predict_window(mm, data.inputs[i], eval_cfg);
      for (std::size_t e = 0; e < pred.data.size(); ++e) {
        double d = pred.data[e] - data.targets[i].data[e];
        s += d * d;
        ++nel;
      }
    }
    return s / double(nel);
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs;) {
    auto tic = std::chrono::steady_clock::now();
    FodeModel snap_model = m;
    std::vector<double> snap_k = kvec;
    nn::AdamState snap_adam = adam;

    rng.shuffle(perm);
    double sum_loss = 0.0;
    bool restart = false, abort = false;

    for (std::size_t b = 0; b < ntrain && !restart && !abort; b += cfg.batch_size) {
      std::size_t bsz = std::min(cfg.batch_size, ntrain - b);
      tape.reset();
      FieldStage stage = stage_field(tape, m);
      ad::NodeId kid = ad::kNone;
      if (m.use_filter) kid = tape.leaf(kvec);

      std::vector<ad::NodeId> losses;
      losses.reserve(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        std::size_t idx = perm[b + i];
        ad::NodeId x0 = tape.leaf(to_state(data.inputs[idx]));
        ad::NodeId xf = odeint::solve_unrolled(tape, m, stage, x0, cfg.solver.t0,
                                               cfg.solver.t1, cfg.solver.rk4_steps);
        ad::NodeId pred = m.use_filter ? tape.hadamard(xf, kid) : xf;
        losses.push_back(tape.mse(pred, to_state(data.targets[idx])));
      }
      std::vector<double> coeffs(bsz, 1.0 / double(bsz));
      ad::NodeId bl = tape.weighted_sum(losses, coeffs);
      double lv = tape.value(bl)[0];
      if (!std::isfinite(lv)) {
        abort = true;
        break;
      }
      if (lv > 1e6 && !hist.lr_halved) {
        hist.lr_halved = true;
        lr *= 0.5;
        restart = true;
        break;
      }
      tape.backward_scalar(bl);

      std::vector<std::span<double>> params = nn::param_views(m.mlp);
      std::vector<std::span<const double>> grads;
      for (ad::NodeId pid : mlp_param_ids(stage)) grads.push_back(tape.grad(pid));
      if (m.use_filter) {
        params.push_back(kvec);
        grads.push_back(tape.grad(kid));
      }
      nn::adam_step(params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps_adam);
      if (m.use_filter) m.filter_k = to_mat(kvec, n, c);
      sum_loss += lv * double(bsz);
    }

    if (abort) {
      hist.aborted = true;
      m = res.best;
      return res;
    }
    if (restart) {
      m = snap_model;
      kvec = snap_k;
      adam = snap_adam;
      continue;
    }

    double train_l = sum_loss / double(ntrain);
    double test_l = data.num_test() > 0 ? test_loss_of(m) : train_l;
    hist.train_loss.push_back(train_l);
    hist.test_loss.push_back(test_l);
    hist.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count());
    if (cfg.record_k) hist.k_snapshots.push_back(snap_model.filter_k);
    if (test_l < best_loss) {
      best_loss = test_l;
      res.best = m;
      hist.best_epoch = epoch;
    }
    ++epoch;
  }
  return res;
}

Metrics evaluate(const FodeModel& m, const ds::WindowDataset& data, EvalMode mode,
                 const odeint::SolverConfig& scfg) {
  check_geometry(m, data);
  if (data.num_test() == 0) throw std::invalid_argument("empty test split");

  double sq = 0.0, relsum = 0.0;
  std::size_t nel = 0, relcount = 0, blocks = 0;
  auto score = [&](const Mat& pred, const Mat& target) {
    for (std::size_t e = 0; e < pred.data.size(); ++e) {
      double d = pred.data[e] - target.data[e];
      sq += d * d;
      ++nel;
      if (std::fabs(target.data[e]) > 1e-8) {
        relsum += std::fabs(d) / std::fabs(target.data[e]);
        ++relcount;
      }
    }
    ++blocks;
  };

  if (mode == EvalMode::windowed) {
    for (std::size_t i = data.split_index; i < data.inputs.size(); ++i)
      score(predict_window(m, data.inputs[i], scfg), data.targets[i]);
  } else {
    Mat buf = data.inputs[data.split_index];
    for (std::size_t i = data.split_index; i < data.inputs.size(); i += data.out_len) {
      Mat pred = predict_window(m, buf, scfg);
      score(pred, data.targets[i]);
      buf = std::move(pred);
    }
  }
  if (relcount == 0)
    throw std::runtime_error("mape undefined: every target magnitude below eps");
  return {sq / double(nel), 100.0 * relsum / double(relcount), blocks};
}

void attach_head(FodeModel& m, std::size_t num_classes, Rng& rng) {
  if (num_classes < 2) throw std::invalid_argument("need at least two classes");
  m.num_classes = num_classes;
  m.head_w = Mat(num_classes, m.channels);
  double bound = std::sqrt(6.0 / double(num_classes + m.channels));
  for (double& v : m.head_w.data) v = rng.uniform(-bound, bound);
  m.head_b.assign(num_classes, 0.0);
}

namespace {

Mat channel_mean_map(const FodeModel& m) {
  Mat mm(m.channels, m.state_dim());
  for (std::size_t c = 0; c < m.channels; ++c)
    for (std::size_t i = 0; i < m.window_len; ++i)
      mm(c, c * m.window_len + i) = 1.0 / double(m.window_len);
  return mm;
}

}  // namespace

std::vector<double> classify_logits(const FodeModel& m, const Mat& seq,
                                    const odeint::SolverConfig& scfg) {
  if (m.num_classes == 0) throw std::invalid_argument("model has no classification head");
  Mat pred = predict_window(m, seq, scfg);
  std::vector<double> logits(m.head_b);
  for (std::size_t k = 0; k < m.num_classes; ++k)
    for (std::size_t c = 0; c < m.channels; ++c) {
      double h = 0.0;
      for (std::size_t i = 0; i < m.window_len; ++i) h += pred(i, c);
      logits[k] += m.head_w(k, c) * h / double(m.window_len);
    }
  return logits;
}

double accuracy(const FodeModel& m, const ds::LabeledSet& set,
                const odeint::SolverConfig& scfg) {
  if (set.seqs.empty()) throw std::invalid_argument("empty labeled set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.seqs.size(); ++i) {
    std::vector<double> lg = classify_logits(m, set.seqs[i], scfg);
    std::size_t top = std::size_t(std::max_element(lg.begin(), lg.end()) - lg.begin());
    hits += (top == set.labels[i]);
  }
  return double(hits) / double(set.seqs.size());
}

ClassifyResult train_classifier(const FodeModel& init, const ds::LabeledSet& set,
                                const TrainConfig& cfg) {
  if (set.seqs.empty()) throw std::invalid_argument("empty labeled set");
  if (init.num_classes < 2) throw std::invalid_argument("model has no classification head");
  if (set.num_classes > init.num_classes)
    throw std::invalid_argument("more classes in the data than in the head");
  for (const Mat& s : set.seqs)
    if (s.rows != init.window_len || s.cols != init.channels)
      throw std::invalid_argument("sequence shape does not match the model");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");

  ClassifyResult res{init, {}};
  FodeModel& m = res.model;
  TrainHistory& hist = res.history;
  const std::size_t n = m.window_len, c = m.channels, ntrain = set.seqs.size();

  std::vector<double> kvec = to_state(m.filter_k);
  Mat mean_map = channel_mean_map(m);
  nn::AdamState adam;
  ad::Tape tape;
  Rng rng(cfg.seed);
  std::vector<std::size_t> perm(ntrain);
  std::iota(perm.begin(), perm.end(), 0);
  double lr = cfg.lr;
  double best_loss = std::numeric_limits<double>::infinity();
  FodeModel best = m;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto tic = std::chrono::steady_clock::now();
    rng.shuffle(perm);
    double sum_loss = 0.0;
    if (cfg.record_k) hist.k_snapshots.push_back(m.filter_k);

    for (std::size_t b = 0; b < ntrain; b += cfg.batch_size) {
      std::size_t bsz = std::min(cfg.batch_size, ntrain - b);
      tape.reset();
      FieldStage stage = stage_field(tape, m);
      ad::NodeId kid = m.use_filter ? tape.leaf(kvec) : ad::kNone;
      ad::NodeId hw = tape.leaf(m.head_w.data);
      ad::NodeId hb = tape.leaf(m.head_b);

      std::vector<ad::NodeId> losses;
      losses.reserve(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        std::size_t idx = perm[b + i];
        ad::NodeId x0 = tape.leaf(to_state(set.seqs[idx]));
        ad::NodeId xf = odeint::solve_unrolled(tape, m, stage, x0, cfg.solver.t0,
                                               cfg.solver.t1, cfg.solver.rk4_steps);
        ad::NodeId pred = m.use_filter ? tape.hadamard(xf, kid) : xf;
        ad::NodeId hmean = tape.fixed_matvec(mean_map, pred);
        ad::NodeId logits = tape.add(tape.matvec(hw, m.num_classes, c, hmean), hb);
        losses.push_back(tape.cross_entropy(logits, set.labels[idx]));
      }
      std::vector<double> coeffs(bsz, 1.0 / double(bsz));
      ad::NodeId bl = tape.weighted_sum(losses, coeffs);
      double lv = tape.value(bl)[0];
      if (!std::isfinite(lv)) {
        hist.aborted = true;
        m = best;
        return res;
      }
      tape.backward_scalar(bl);

      std::vector<std::span<double>> params = nn::param_views(m.mlp);
      std::vector<std::span<const double>> grads;
      for (ad::NodeId pid : mlp_param_ids(stage)) grads.push_back(tape.grad(pid));
      if (m.use_filter) {
        params.push_back(kvec);
        grads.push_back(tape.grad(kid));
      }
      params.push_back(m.head_w.data);
      grads.push_back(tape.grad(hw));
      params.push_back(m.head_b);
      grads.push_back(tape.grad(hb));
      nn::adam_step(params, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps_adam);
      if (m.use_filter) m.filter_k = to_mat(kvec, n, c);
      sum_loss += lv * double(bsz);
    }

    double train_l = sum_loss / double(ntrain);
    hist.train_loss.push_back(train_l);
    hist.test_loss.push_back(train_l);  // labeled sets carry no held-out split
    hist.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count());
    if (train_l < best_loss) {
      best_loss = train_l;
      best = m;
      hist.best_epoch = epoch;
    }
  }
  return res;
}

void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "epoch,train_loss,test_loss,seconds\n";
  char buf[96];
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e, h.train_loss[e],
                  h.test_loss[e], h.seconds[e]);
    out << buf;
  }
}

void write_k_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "epoch,row,col,value\n";
  char buf[96];
  for (std::size_t e = 0; e < h.k_snapshots.size(); ++e) {
    const Mat& k = h.k_snapshots[e];
    for (std::size_t r = 0; r < k.rows; ++r)
      for (std::size_t col = 0; col < k.cols; ++col) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g\n", e, r, col, k(r, col));
        out << buf;
      }
  }
}

}  // namespace fode::train
