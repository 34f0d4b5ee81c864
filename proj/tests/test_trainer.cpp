#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "fode/nn.hpp"
#include "fode/trainer.hpp"

using namespace fode;
using namespace fode::train;

namespace {

Mat wave(std::size_t n, std::size_t c, double phase) {
  Mat m(n, c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      m(i, j) = std::sin(0.7 * double(i) + phase + double(j));
  return m;
}

ds::WindowDataset one_pair(std::size_t n, std::size_t c) {
  ds::WindowDataset d;
  d.in_len = d.out_len = n;
  d.inputs.push_back(wave(n, c, 0.0));
  d.targets.push_back(wave(n, c, 0.9));
  d.split_index = 1;  // all train, no test
  return d;
}

TrainConfig small_cfg(std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.seed = 11;
  cfg.hidden = 16;
  return cfg;
}

std::vector<double> flat_params(FodeModel& m, bool with_k) {
  std::vector<double> out;
  for (auto v : nn::param_views(m.mlp)) out.insert(out.end(), v.begin(), v.end());
  if (with_k) {
    std::vector<double> kv = to_state(m.filter_k);
    out.insert(out.end(), kv.begin(), kv.end());
  }
  return out;
}

void set_params(FodeModel& m, std::span<const double> flat, bool with_k) {
  std::size_t off = 0;
  for (auto v : nn::param_views(m.mlp)) {
    std::copy(flat.begin() + off, flat.begin() + off + v.size(), v.begin());
    off += v.size();
  }
  if (with_k) {
    m.filter_k = to_mat(flat.subspan(off, m.state_dim()), m.window_len, m.channels);
    off += m.state_dim();
  }
  REQUIRE(off == flat.size());
}

std::size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("mse_loss basics and oracle") {
  std::vector<double> a{1.0, 2.0, 3.0};
  CHECK(mse_loss(a, a) == 0.0);
  std::vector<double> b{1.5, 2.5, 3.5};
  CHECK(mse_loss(b, a) == doctest::Approx(0.25).epsilon(1e-15));
  std::vector<double> p{0.3, -1.2, 2.0, 0.0};
  std::vector<double> t{-0.1, 0.4, 1.0, 5.0};
  double expect = 0.0;
  for (std::size_t i = 0; i < 4; ++i) expect += (p[i] - t[i]) * (p[i] - t[i]);
  CHECK(mse_loss(p, t) == expect / 4.0);
  CHECK_THROWS_AS(mse_loss(a, p), std::invalid_argument);
}

TEST_CASE("mape excludes tiny targets and reports percent") {
  std::vector<double> t{1.0, 2.0, -4.0};
  std::vector<double> p{1.1, 2.2, -4.4};
  CHECK(mape(p, t) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(mape(t, t) == 0.0);

  std::vector<double> t2{2.0, 1e-12, -1.0};
  std::vector<double> p2{2.5, 100.0, -1.1};
  // only elements 0 and 2 count: (0.25 + 0.1)/2 = 17.5%
  CHECK(mape(p2, t2) == doctest::Approx(17.5).epsilon(1e-12));

  std::vector<double> tiny{1e-12, -1e-13};
  std::vector<double> any{1.0, 1.0};
  CHECK_THROWS_AS(mape(any, tiny), std::runtime_error);
}

TEST_CASE("cross_entropy against the softmax oracle") {
  std::vector<double> uniform(5, 0.42);
  CHECK(cross_entropy(uniform, 2) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  std::vector<double> margin{50.0, 0.0, 0.0};
  CHECK(cross_entropy(margin, 0) < 1e-12);

  std::vector<double> logits{0.3, -1.1, 2.0, 0.7};
  double z = 0.0;
  for (double l : logits) z += std::exp(l);
  CHECK(cross_entropy(logits, 3) ==
        doctest::Approx(-std::log(std::exp(0.7) / z)).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(logits, 4), std::invalid_argument);
}

TEST_CASE("zero-epoch training returns the model unchanged") {
  Rng rng(3);
  TrainConfig cfg = small_cfg(0);
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  ds::WindowDataset d = one_pair(8, 1);
  TrainResult r = fode::train::train(m, d, cfg);
  CHECK(r.history.train_loss.empty());
  CHECK(r.model.mlp.w1.data == m.mlp.w1.data);
  CHECK(r.model.filter_k.data == m.filter_k.data);
}

TEST_CASE("a single pair is overfit by at least two orders of magnitude") {
  Rng rng(5);
  TrainConfig cfg = small_cfg(1000);
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  ds::WindowDataset d = one_pair(8, 1);
  TrainResult r = fode::train::train(m, d, cfg);
  REQUIRE(r.history.train_loss.size() == 1000);
  double initial = r.history.train_loss.front();
  double final_l = r.history.train_loss.back();
  CHECK(final_l < initial / 100.0);
  CHECK(!r.history.aborted);
}

TEST_CASE("one tiny Adam step decreases the batch loss") {
  Rng rng(7);
  TrainConfig cfg = small_cfg(2);
  cfg.lr = 1e-6;
  cfg.batch_size = 2;
  cfg.seed = 19;
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  ds::WindowDataset d = one_pair(8, 1);
  d.inputs.push_back(wave(8, 1, 0.4));
  d.targets.push_back(wave(8, 1, 1.3));
  d.split_index = 2;
  TrainResult r = fode::train::train(m, d, cfg);
  REQUIRE(r.history.train_loss.size() == 2);
  CHECK(r.history.train_loss[1] < r.history.train_loss[0]);
}

TEST_CASE("without the filter the prediction path never reads K") {
  Rng rng(13);
  TrainConfig cfg = small_cfg(5);
  cfg.use_filter = false;
  FodeModel a = make_configured_model(cfg, 8, 1, rng);
  FodeModel b = a;
  for (double& v : b.filter_k.data) v = 1e9;  // should be inert

  ds::WindowDataset d = one_pair(8, 1);
  TrainResult ra = fode::train::train(a, d, cfg);
  TrainResult rb = fode::train::train(b, d, cfg);
  CHECK(ra.history.train_loss == rb.history.train_loss);
  CHECK(ra.history.test_loss == rb.history.test_loss);
  CHECK(ra.model.mlp.w1.data == rb.model.mlp.w1.data);
  CHECK(ra.model.mlp.b3 == rb.model.mlp.b3);
  // K itself was not optimized
  CHECK(rb.model.filter_k.data == b.filter_k.data);
}

TEST_CASE("fixed seed reruns are bit-identical") {
  Rng rng(17);
  TrainConfig cfg = small_cfg(10);
  cfg.batch_size = 3;
  FodeModel m = make_configured_model(cfg, 8, 2, rng);
  ds::WindowDataset d;
  d.in_len = d.out_len = 8;
  for (int i = 0; i < 7; ++i) {
    d.inputs.push_back(wave(8, 2, 0.2 * i));
    d.targets.push_back(wave(8, 2, 0.2 * i + 0.9));
  }
  d.split_index = 5;
  TrainResult r1 = fode::train::train(m, d, cfg);
  TrainResult r2 = fode::train::train(m, d, cfg);
  CHECK(r1.history.train_loss == r2.history.train_loss);
  CHECK(r1.history.test_loss == r2.history.test_loss);
  CHECK(r1.model.mlp.w2.data == r2.model.mlp.w2.data);
  CHECK(r1.model.filter_k.data == r2.model.filter_k.data);
  CHECK(r1.best.mlp.w2.data == r2.best.mlp.w2.data);
  CHECK(r1.history.best_epoch == r2.history.best_epoch);
}

TEST_CASE("the plain time-domain field trains through the same loop") {
  Rng rng(23);
  TrainConfig cfg = small_cfg(3);
  cfg.model_kind = FieldKind::node;
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  REQUIRE(m.kind == FieldKind::node);
  TrainResult r = fode::train::train(m, one_pair(8, 1), cfg);
  REQUIRE(r.history.train_loss.size() == 3);
  for (double l : r.history.train_loss) CHECK(std::isfinite(l));
  CHECK(r.history.train_loss[2] < r.history.train_loss[0]);
}

TEST_CASE("full-loss gradient matches finite differences on a one-pair dataset") {
  Rng rng(29);
  TrainConfig cfg = small_cfg(1);
  cfg.solver.rk4_steps = 4;
  FodeModel m = make_configured_model(cfg, 8, 2, rng);
  ds::WindowDataset d = one_pair(8, 2);

  // tape gradient exactly as the trainer builds it
  ad::Tape tape;
  FieldStage stage = stage_field(tape, m);
  std::vector<double> kvec = to_state(m.filter_k);
  ad::NodeId kid = tape.leaf(kvec);
  ad::NodeId x0 = tape.leaf(to_state(d.inputs[0]));
  ad::NodeId xf = odeint::solve_unrolled(tape, m, stage, x0, 0.0, 1.0, 4);
  ad::NodeId pred = tape.hadamard(xf, kid);
  ad::NodeId loss = tape.mse(pred, to_state(d.targets[0]));
  tape.backward_scalar(loss);

  std::vector<double> g;
  for (ad::NodeId pid : {stage.mlp.w1, stage.mlp.b1, stage.mlp.w2, stage.mlp.b2,
                         stage.mlp.w3, stage.mlp.b3})
    g.insert(g.end(), tape.grad(pid).begin(), tape.grad(pid).end());
  g.insert(g.end(), tape.grad(kid).begin(), tape.grad(kid).end());

  std::vector<double> theta = flat_params(m, true);
  auto loss_at = [&](std::span<const double> p) {
    FodeModel mm = m;
    set_params(mm, p, true);
    odeint::SolverConfig s;
    s.method = odeint::Method::rk4;
    s.rk4_steps = 4;
    Mat out = predict_window(mm, d.inputs[0], s);
    // sum in state order, matching the tape's reduction exactly
    std::vector<double> pv = to_state(out);
    std::vector<double> tv = to_state(d.targets[0]);
    return mse_loss(pv, tv);
  };
  CHECK(loss_at(theta) == tape.value(loss)[0]);  // routes agree bitwise
  double err = nn::grad_check(loss_at, theta, g, 1e-5);
  CHECK(err < 1e-5);
}

TEST_CASE("evaluate scores a perfect model at exactly zero") {
  Rng rng(31);
  FodeModel m = make_model(FieldKind::fode, 6, 1, 8, true, InitScheme::ones, false, rng);
  m.mlp = nn::zero_mlp(m.mlp.in_dim, m.mlp.hidden, m.mlp.out_dim);
  // zero field + unit filter = identity map; make targets equal inputs
  ds::WindowDataset d;
  d.in_len = d.out_len = 6;
  for (int i = 0; i < 3; ++i) {
    Mat w = wave(6, 1, 0.3 * i);
    d.inputs.push_back(w);
    d.targets.push_back(w);
  }
  d.split_index = 1;
  odeint::SolverConfig scfg;
  Metrics mt = evaluate(m, d, EvalMode::windowed, scfg);
  CHECK(mt.mse == 0.0);
  CHECK(mt.mape_pct == 0.0);
  CHECK(mt.n_test == 2);
}

TEST_CASE("rollout over a single test window equals windowed evaluation") {
  Rng rng(37);
  TrainConfig cfg = small_cfg(1);
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  ds::WindowDataset d;
  d.in_len = d.out_len = 8;
  for (int i = 0; i < 3; ++i) {
    d.inputs.push_back(wave(8, 1, 0.2 * i));
    d.targets.push_back(wave(8, 1, 0.2 * i + 0.9));
  }
  d.split_index = 2;  // exactly one test window
  odeint::SolverConfig scfg;
  Metrics a = evaluate(m, d, EvalMode::windowed, scfg);
  Metrics b = evaluate(m, d, EvalMode::rollout, scfg);
  CHECK(a.mse == b.mse);
  CHECK(a.mape_pct == b.mape_pct);
  CHECK(a.n_test == 1);
  CHECK(b.n_test == 1);
}

TEST_CASE("evaluate refuses an empty test split") {
  Rng rng(41);
  TrainConfig cfg = small_cfg(1);
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  odeint::SolverConfig scfg;
  CHECK_THROWS_AS(evaluate(m, one_pair(8, 1), EvalMode::windowed, scfg),
                  std::invalid_argument);
}

TEST_CASE("divergence halves the learning rate once and records the blow-up") {
  Rng rng(43);
  TrainConfig cfg = small_cfg(2);
  cfg.lr = 3.0;  // absurd on purpose
  cfg.batch_size = 1;
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  TrainResult r = fode::train::train(m, one_pair(8, 1), cfg);
  CHECK(r.history.lr_halved);
  REQUIRE(r.history.train_loss.size() >= 1);
  CHECK(std::isfinite(r.history.train_loss[0]));
}

TEST_CASE("a non-finite loss aborts with the last good checkpoint") {
  Rng rng(47);
  TrainConfig cfg = small_cfg(5);
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  ds::WindowDataset d = one_pair(8, 1);
  d.targets[0](3, 0) = std::numeric_limits<double>::infinity();
  TrainResult r = fode::train::train(m, d, cfg);
  CHECK(r.history.aborted);
  CHECK(r.history.train_loss.empty());  // nothing completed
  CHECK(r.model.mlp.w1.data == m.mlp.w1.data);
}

TEST_CASE("history and filter-snapshot exports have the documented shape") {
  Rng rng(53);
  TrainConfig cfg = small_cfg(3);
  cfg.record_k = true;
  FodeModel m = make_configured_model(cfg, 4, 1, rng);
  TrainResult r = fode::train::train(m, one_pair(4, 1), cfg);
  REQUIRE(r.history.k_snapshots.size() == 3);
  // the first snapshot is the filter before any update
  CHECK(r.history.k_snapshots[0].data == to_mat(to_state(m.filter_k), 4, 1).data);

  std::string hpath = "/tmp/fode_test_history.csv";
  std::string kpath = "/tmp/fode_test_k.csv";
  write_history_csv(r.history, hpath);
  write_k_csv(r.history, kpath);
  CHECK(count_lines(hpath) == 4);       // header + 3 epochs
  CHECK(count_lines(kpath) == 1 + 3 * 4 * 1);  // header + epochs*N*C

  std::ifstream h(hpath);
  std::string line;
  std::getline(h, line);
  CHECK(line == "epoch,train_loss,test_loss,seconds");
  std::ifstream k(kpath);
  std::getline(k, line);
  CHECK(line == "epoch,row,col,value");
  std::remove(hpath.c_str());
  std::remove(kpath.c_str());
}

TEST_CASE("the classification path separates a trivially separable set") {
  Rng rng(59);
  TrainConfig cfg = small_cfg(150);
  cfg.loss = LossKind::cross_entropy;
  cfg.lr = 3e-3;
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  attach_head(m, 2, rng);

  ds::LabeledSet set;
  for (int i = 0; i < 4; ++i) {
    Mat s(8, 1);
    double level = (i % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t r = 0; r < 8; ++r) s(r, 0) = level + 0.05 * double(r % 3);
    set.seqs.push_back(s);
    set.labels.push_back(i % 2);
  }
  set.num_classes = 2;
  set.class_values = {0, 1};

  ClassifyResult r = train_classifier(m, set, cfg);
  REQUIRE(r.history.train_loss.size() == 150);
  CHECK(r.history.train_loss.back() < r.history.train_loss.front() / 5.0);
  odeint::SolverConfig scfg;
  scfg.method = odeint::Method::rk4;
  CHECK(accuracy(r.model, set, scfg) == 1.0);
}

TEST_CASE("training rejects mismatched geometry") {
  Rng rng(61);
  TrainConfig cfg = small_cfg(1);
  FodeModel m = make_configured_model(cfg, 8, 1, rng);
  ds::WindowDataset d = one_pair(10, 1);
  CHECK_THROWS_AS(fode::train::train(m, d, cfg), std::invalid_argument);
  ds::WindowDataset e = one_pair(8, 2);
  CHECK_THROWS_AS(fode::train::train(m, e, cfg), std::invalid_argument);
}
