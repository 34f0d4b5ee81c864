#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fode/analysis.hpp"
#include "fode/nn.hpp"

using namespace fode;
using namespace fode::analysis;

namespace {

// dense oracle: cyclic Jacobi eigensolver on AᵀA, largest eigenvalue
double dense_sigma_max(const Mat& a) {
  std::size_t n = a.cols;
  std::vector<double> s(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < a.rows; ++r) acc += a(r, i) * a(r, j);
      s[i * n + j] = acc;
    }
  for (int sweep = 0; sweep < 80; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += s[p * n + q] * s[p * n + q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = s[p * n + q];
        if (std::fabs(apq) < 1e-300) continue;
        double theta = (s[q * n + q] - s[p * n + p]) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = s[k * n + p], akq = s[k * n + q];
          s[k * n + p] = c * akp - sn * akq;
          s[k * n + q] = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = s[p * n + k], aqk = s[q * n + k];
          s[p * n + k] = c * apk - sn * aqk;
          s[q * n + k] = sn * apk + c * aqk;
        }
      }
  }
  double mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, s[i * n + i]);
  return std::sqrt(std::max(0.0, mx));
}

Mat random_mat(std::size_t r, std::size_t c, Rng& rng) {
  Mat m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

Mat identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("spectral_norm on matrices with known singular values") {
  Mat d(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = -4.0;
  CHECK(spectral_norm(d) == doctest::Approx(4.0).epsilon(1e-10));

  Mat nilpotent(2, 2);
  nilpotent(0, 1) = 2.0;
  CHECK(spectral_norm(nilpotent) == doctest::Approx(2.0).epsilon(1e-10));

  Mat zero(5, 3);
  CHECK(spectral_norm(zero) == 0.0);

  CHECK(spectral_norm(identity(7)) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("power iteration tracks the dense eigensolver within one percent") {
  Rng rng(71);
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{10, 6},
                      {32, 32},
                      {64, 64},
                      {64, 16},
                      {7, 64}}) {
    Mat a = random_mat(r, c, rng);
    double pi_norm = spectral_norm(a);
    double svd = dense_sigma_max(a);
    CHECK(std::fabs(pi_norm - svd) / svd < 0.01);
    CHECK(pi_norm <= svd * (1.0 + 1e-9));  // power iteration approaches from below
  }
}

TEST_CASE("zero model certifies a zero bound") {
  Rng rng(73);
  FodeModel m = make_model(FieldKind::fode, 8, 1, 16, true, InitScheme::ones, false, rng);
  m.mlp = nn::zero_mlp(m.mlp.in_dim, m.mlp.hidden, m.mlp.out_dim);
  LipschitzReport r = certify(m, 50, 1.0, 5);
  CHECK(r.l_g == 0.0);
  CHECK(r.l_f_bound == 0.0);
  CHECK(r.empirical_max_ratio == 0.0);
  CHECK(r.pass);
}

TEST_CASE("identity weights give a bound at the norm product") {
  Rng rng(79);
  FodeModel m = make_model(FieldKind::fode, 4, 1, 6, true, InitScheme::ones, false, rng);
  REQUIRE(m.feat_dim() == 6);
  m.mlp.w1 = identity(6);
  m.mlp.w2 = identity(6);
  m.mlp.w3 = identity(6);
  std::fill(m.mlp.b1.begin(), m.mlp.b1.end(), 0.0);
  std::fill(m.mlp.b2.begin(), m.mlp.b2.end(), 0.0);
  std::fill(m.mlp.b3.begin(), m.mlp.b3.end(), 0.0);
  LipschitzReport r = lipschitz_bound(m);
  CHECK(r.l_fft == 2.0);
  CHECK(r.l_ifft == 0.5);
  CHECK(r.l_pack == 1.0);
  CHECK(r.l_unpack == 1.0);
  CHECK(std::fabs(r.l_f_bound - 1.0) < 0.05);  // the safety inflation sits above 1
  CHECK(r.l_f_bound >= 1.0);
}

TEST_CASE("the exact-identity field has unit ratios below its bound") {
  Rng rng(83);
  FodeModel m = make_model(FieldKind::fode, 8, 1, 20, true, InitScheme::ones, false, rng);
  configure_identity_mlp(m);
  double ratio = empirical_lipschitz(m, 300, 1.0, 9);
  CHECK(ratio <= 1.0 + 1e-9);
  CHECK(ratio > 0.999);
  LipschitzReport r = certify(m, 300, 1.0, 9);
  CHECK(r.pass);
  CHECK(r.l_f_bound > 1.9);  // doubled layout costs sqrt(2) twice
}

TEST_CASE("the certified bound dominates sampled ratios across a model zoo") {
  for (std::uint64_t seed = 100; seed < 150; ++seed) {
    Rng rng(seed);
    FodeModel m = make_model(FieldKind::fode, 8, 1, 16, true, InitScheme::uniform, false, rng);
    LipschitzReport r = certify(m, 200, 1.0, seed * 7 + 1);
    CHECK(r.pass);
    CHECK(r.l_f_bound > 0.0);
    CHECK(std::isfinite(r.l_f_bound));
  }
}

TEST_CASE("lipschitz report serializes to json") {
  Rng rng(89);
  FodeModel m = make_model(FieldKind::fode, 8, 1, 16, true, InitScheme::uniform, false, rng);
  LipschitzReport r = certify(m, 20, 1.0, 3);
  std::string path = "/tmp/fode_test_lip.json";
  write_lipschitz_json(r, path);
  std::ifstream in(path);
  nlohmann::json j;
  in >> j;
  CHECK(j["l_f_bound"].get<double>() == r.l_f_bound);
  CHECK(j["empirical_max_ratio"].get<double>() == r.empirical_max_ratio);
  CHECK(j["n_pairs"].get<std::size_t>() == 20);
  CHECK(j["pass"].get<bool>() == r.pass);
  std::remove(path.c_str());
}

TEST_CASE("a zero field yields a time-constant spectrogram") {
  Rng rng(97);
  FodeModel m = make_model(FieldKind::fode, 8, 2, 16, true, InitScheme::ones, false, rng);
  m.mlp = nn::zero_mlp(m.mlp.in_dim, m.mlp.hidden, m.mlp.out_dim);
  Mat window(8, 2);
  for (std::size_t i = 0; i < 8; ++i) {
    window(i, 0) = 0.7;
    window(i, 1) = std::sin(double(i));
  }
  auto sgs = hidden_spectrogram({m}, window);
  REQUIRE(sgs.size() == 1);
  const auto& sg = sgs[0];
  REQUIRE(sg.frames.rows == 13);  // (128-32)/8+1
  REQUIRE(sg.frames.cols == 17);
  // constant trajectory: every frame identical, energy confined to the
  // window transform's support (bins 0 and 1 for a raised-cosine window)
  for (std::size_t f = 1; f < sg.frames.rows; ++f)
    for (std::size_t b = 0; b < sg.frames.cols; ++b)
      CHECK(sg.frames(f, b) == doctest::Approx(sg.frames(0, b)).epsilon(1e-12));
  for (std::size_t b = 2; b < sg.frames.cols; ++b)
    CHECK(sg.frames(0, b) < 1e-10);
  CHECK(sg.frames(0, 0) > 1.0);
}

TEST_CASE("identical checkpoints produce bit-identical spectrograms") {
  Rng rng(101);
  FodeModel m = make_model(FieldKind::fode, 8, 1, 16, true, InitScheme::uniform, false, rng);
  Mat window(8, 1);
  for (std::size_t i = 0; i < 8; ++i) window(i, 0) = std::cos(0.5 * double(i));
  auto sgs = hidden_spectrogram({m, m}, window);
  REQUIRE(sgs.size() == 2);
  CHECK(sgs[0].frames.data == sgs[1].frames.data);
}

TEST_CASE("hidden_spectrogram validates its inputs") {
  Rng rng(103);
  FodeModel a = make_model(FieldKind::fode, 8, 1, 16, true, InitScheme::uniform, false, rng);
  FodeModel b = make_model(FieldKind::fode, 10, 1, 16, true, InitScheme::uniform, false, rng);
  Mat window(8, 1);
  CHECK_THROWS_AS(hidden_spectrogram({a, b}, window), std::invalid_argument);
  CHECK_THROWS_AS(hidden_spectrogram({}, window), std::invalid_argument);
  Mat wrong(10, 1);
  CHECK_THROWS_AS(hidden_spectrogram({a}, wrong), std::invalid_argument);
  SpectroParams p;
  p.probe_row = 99;
  CHECK_THROWS_AS(hidden_spectrogram({a}, window, p), std::invalid_argument);
}

TEST_CASE("training concentrates the trajectory spectrum") {
  ds::TimeSeries series = ds::gen_periodic3d('A', 0.05);
  ds::WindowDataset full = ds::window_split(series, 10, 10, 0.8);
  // thin the windows to keep this quick; chronology is preserved
  ds::WindowDataset d;
  d.in_len = d.out_len = 10;
  for (std::size_t i = 0; i < full.split_index; i += 8) {
    d.inputs.push_back(full.inputs[i]);
    d.targets.push_back(full.targets[i]);
  }
  d.split_index = d.inputs.size();
  for (std::size_t i = full.split_index; i < full.inputs.size(); i += 16) {
    d.inputs.push_back(full.inputs[i]);
    d.targets.push_back(full.targets[i]);
  }

  train::TrainConfig cfg;
  cfg.epochs = 100;
  cfg.seed = 4;
  Rng rng(4);
  FodeModel init = train::make_configured_model(cfg, 10, 3, rng);
  train::TrainResult r = train::train(init, d, cfg);
  REQUIRE(!r.history.aborted);
  CHECK(r.history.train_loss.back() < r.history.train_loss.front());

  // representative window whose initial-checkpoint spectrogram carries
  // visible off-DC structure; training pulls the energy back together
  auto sgs = hidden_spectrogram({init, r.best}, d.inputs[40]);
  double h_init = spectral_entropy(sgs[0]);
  double h_trained = spectral_entropy(sgs[1]);
  CHECK(h_trained < h_init);
  CHECK(h_trained < 0.505);  // near the lone-bin baseline of this window shape
}

TEST_CASE("filter evolution export pairs losses with filter entries") {
  Rng rng(107);
  train::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.record_k = true;
  cfg.k_init = InitScheme::zeros;
  cfg.seed = 5;
  FodeModel m = train::make_configured_model(cfg, 4, 1, rng);
  ds::WindowDataset d;
  d.in_len = d.out_len = 4;
  Mat in(4, 1), out(4, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    in(i, 0) = std::sin(double(i));
    out(i, 0) = std::cos(double(i));
  }
  d.inputs = {in};
  d.targets = {out};
  d.split_index = 1;
  train::TrainResult r = train::train(m, d, cfg);

  std::string path = "/tmp/fode_test_kevo.csv";
  k_evolution_csv(r.history, path);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,train_loss,row,col,value");
  std::size_t rows = 0;
  bool epoch0_all_zero = true;
  while (std::getline(f, line)) {
    ++rows;
    std::istringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    bool is_epoch0 = cell == "0";
    for (int i = 0; i < 4; ++i) std::getline(ss, cell, ',');
    if (is_epoch0 && std::stod(cell) != 0.0) epoch0_all_zero = false;
  }
  CHECK(rows == 3 * 4 * 1);  // epochs * N * C
  CHECK(epoch0_all_zero);    // zeros-init filter before the first update
  std::remove(path.c_str());

  train::TrainHistory empty;
  CHECK_THROWS_AS(k_evolution_csv(empty, path), std::invalid_argument);
}

TEST_CASE("spectral_entropy prefers concentrated spectra") {
  spectral::Spectrogram flat;
  flat.frames = Mat(2, 4);
  for (double& v : flat.frames.data) v = 1.0;
  spectral::Spectrogram peaked;
  peaked.frames = Mat(2, 4);
  peaked.frames(0, 1) = 5.0;
  peaked.frames(1, 1) = 5.0;
  CHECK(spectral_entropy(peaked) == 0.0);  // single active bin
  CHECK(spectral_entropy(flat) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  spectral::Spectrogram silent;
  silent.frames = Mat(2, 4);
  CHECK(spectral_entropy(silent) == 0.0);
}
