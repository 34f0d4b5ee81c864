#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "fode/datasets.hpp"
#include "fode/odeint.hpp"

using namespace fode;
using namespace fode::ds;

namespace {

// second-order one-sided estimate of the derivative at the first sample
double deriv_at_start(const TimeSeries& s, std::size_t ch) {
  double dt = s.t[1] - s.t[0];
  return (4.0 * s.values(1, ch) - s.values(2, ch) - 3.0 * s.values(0, ch)) / (2.0 * dt);
}

std::string temp_path(const char* name) {
  return std::string("/tmp/fode_test_") + name;
}

}  // namespace

TEST_CASE("periodic3d variant A matches its closed form") {
  TimeSeries s = gen_periodic3d('A', 0.05);
  REQUIRE(s.len() == 1000);
  REQUIRE(s.channels() == 3);
  CHECK(s.t.front() == 0.0);
  CHECK(s.t.back() == doctest::Approx(20.0).epsilon(1e-15));

  CHECK(s.values(0, 0) == 0.0);
  CHECK(s.values(0, 1) == doctest::Approx(1.05).epsilon(1e-15));
  CHECK(s.values(0, 2) == 0.0);

  // grid point nearest t = pi/2 against an independent evaluation
  double dt = 20.0 / 999.0;
  std::size_t idx = std::size_t(std::llround(std::numbers::pi / 2.0 / dt));
  double t = s.t[idx];
  CHECK(std::fabs(s.values(idx, 0) - (std::sin(t) + 0.05 * std::sin(20.0 * t))) < 1e-12);
  CHECK(std::fabs(s.values(idx, 1) - (std::cos(t) + 0.05 * std::cos(20.0 * t))) < 1e-12);
  CHECK(std::fabs(s.values(idx, 2) - (std::sin(2.0 * t) + 0.05 * std::sin(20.0 * t))) < 1e-12);
}

TEST_CASE("periodic3d variant B matches its closed form") {
  TimeSeries s = gen_periodic3d('B', 0.10);
  CHECK(s.values(0, 0) == 0.0);
  CHECK(s.values(0, 1) == doctest::Approx(1.10).epsilon(1e-15));
  CHECK(s.values(0, 2) == doctest::Approx(1.0).epsilon(1e-15));
  std::size_t i = 500;
  double t = s.t[i];
  CHECK(std::fabs(s.values(i, 2) - (std::cos(5.0 * t) + 0.10 * std::sin(20.0 * t))) < 1e-12);
}

TEST_CASE("periodic3d rejects bad arguments") {
  CHECK_THROWS_AS(gen_periodic3d('C', 0.05), std::invalid_argument);
  CHECK_THROWS_AS(gen_periodic3d('A', -0.1), std::invalid_argument);
}

TEST_CASE("unstable oscillator matches its closed form when noise is off") {
  TimeSeries s = gen_unstable_oscillator(0.0, 1);
  REQUIRE(s.len() == 629);
  REQUIRE(s.channels() == 1);
  CHECK(s.t.back() <= 2.0 * std::numbers::pi);

  double expected0 = 0.1 * (std::cos(1.0) + std::sin(-1.0));
  CHECK(s.values(0, 0) == doctest::Approx(expected0).epsilon(1e-15));
  CHECK(expected0 == doctest::Approx(-0.0301169).epsilon(1e-5));

  // t = 2 sits exactly on the grid at index 200
  double pi = std::numbers::pi;
  double expected2 = 0.1 * std::exp(1.0) * (std::cos(2.0 * pi + 1.0) + std::sin(2.0 * pi - 1.0));
  CHECK(s.values(200, 0) == doctest::Approx(expected2).epsilon(1e-12));
}

TEST_CASE("unstable oscillator noise is seeded and reproducible") {
  TimeSeries a = gen_unstable_oscillator(0.01, 7);
  TimeSeries b = gen_unstable_oscillator(0.01, 7);
  TimeSeries c = gen_unstable_oscillator(0.01, 8);
  CHECK(a.values.data == b.values.data);
  CHECK(a.values.data != c.values.data);

  // noise has the advertised scale: rms deviation from the clean signal ~ sigma
  TimeSeries clean = gen_unstable_oscillator(0.0, 7);
  double rms = 0.0;
  for (std::size_t i = 0; i < a.len(); ++i) {
    double d = a.values(i, 0) - clean.values(i, 0);
    rms += d * d;
  }
  rms = std::sqrt(rms / double(a.len()));
  CHECK(rms > 0.005);
  CHECK(rms < 0.02);
}

TEST_CASE("forced vibration starts at rest offset and grows") {
  TimeSeries s = gen_forced_vibration();
  REQUIRE(s.len() == 501);
  REQUIRE(s.channels() == 2);
  CHECK(s.values(0, 0) == 0.5);
  CHECK(s.values(0, 1) == 0.0);

  double wn = 2.0 * std::numbers::pi;
  double vdot0 = -wn * wn * 0.5 + 0.1;
  CHECK(deriv_at_start(s, 1) == doctest::Approx(vdot0).epsilon(5e-3));

  // negative damping: the envelope of the last second dominates the first
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < s.len(); ++i) {
    double ax = std::fabs(s.values(i, 0));
    if (s.t[i] <= 1.0) early = std::max(early, ax);
    if (s.t[i] >= 4.0) late = std::max(late, ax);
  }
  CHECK(late > early);
}

TEST_CASE("lotka-volterra starts at the stated point and stays positive") {
  TimeSeries s = gen_lotka_volterra();
  REQUIRE(s.len() == 500);
  CHECK(s.values(0, 0) == 40.0);
  CHECK(s.values(0, 1) == 2.0);
  CHECK(deriv_at_start(s, 0) == doctest::Approx(2.4).epsilon(0.02));
  for (std::size_t i = 0; i < s.len(); ++i) {
    CHECK(s.values(i, 0) > 0.0);
    CHECK(s.values(i, 1) > 0.0);
  }
}

TEST_CASE("glycolytic oscillator starts at the stated point and stays bounded") {
  TimeSeries s = gen_glycolytic();
  REQUIRE(s.len() == 1000);
  CHECK(s.values(0, 0) == 1.0);
  CHECK(s.values(0, 1) == 1.0);
  CHECK(deriv_at_start(s, 0) == doctest::Approx(-0.35).epsilon(0.02));
  CHECK(deriv_at_start(s, 1) == doctest::Approx(0.1).epsilon(0.1));
  for (double v : s.values.data) CHECK(std::fabs(v) < 10.0);
}

TEST_CASE("integrated generators are converged in solver tolerance") {
  TimeSeries s = gen_lotka_volterra();
  odeint::Field f = [](double, std::span<const double> x, std::span<double> dx) {
    dx[0] = 0.1 * x[0] - 0.02 * x[0] * x[1];
    dx[1] = 0.01 * x[0] * x[1] - 0.3 * x[1];
  };
  std::vector<double> x0{40.0, 2.0};
  Mat tight = odeint::dopri5_sample(f, x0, s.t, 1e-11, 1e-13);
  for (std::size_t i = 0; i < s.len(); ++i)
    for (std::size_t j = 0; j < 2; ++j)
      CHECK(std::fabs(s.values(i, j) - tight(i, j)) < 1e-8);
}

TEST_CASE("generators rerun bit-identically") {
  TimeSeries a = gen_lotka_volterra();
  TimeSeries b = gen_lotka_volterra();
  CHECK(a.values.data == b.values.data);
  CHECK(a.t == b.t);
}

TEST_CASE("gen_named dispatches and rejects unknown names") {
  TimeSeries s = gen_named("periodic3d-b", 0.05, 0.0, 1);
  CHECK(s.values(0, 1) == doctest::Approx(1.05).epsilon(1e-15));
  CHECK_THROWS_AS(gen_named("periodic3d-c", 0.05, 0.0, 1), std::invalid_argument);
}

TEST_CASE("window_split counts and slices as specified") {
  TimeSeries s = gen_periodic3d('A', 0.05);
  WindowDataset d = window_split(s, 10, 10, 0.8);
  REQUIRE(d.inputs.size() == 981);
  CHECK(d.split_index == 784);
  CHECK(d.num_train() == 784);
  CHECK(d.num_test() == 197);
  CHECK(d.targets.size() == d.inputs.size());

  // window i is exactly rows i..i+19 of the source
  std::size_t i = 321;
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(d.inputs[i](r, j) == s.values(i + r, j));
      CHECK(d.targets[i](r, j) == s.values(i + 10 + r, j));
    }
}

TEST_CASE("window_split single-window edge case covers the two halves") {
  TimeSeries s;
  s.t = {0, 1, 2, 3};
  s.values = Mat(4, 1);
  for (std::size_t i = 0; i < 4; ++i) s.values(i, 0) = double(i) * 10.0;
  s.names = {"x"};
  WindowDataset d = window_split(s, 2, 2, 0.5);
  REQUIRE(d.inputs.size() == 1);
  CHECK(d.split_index == 0);  // the lone window falls on the test side
  CHECK(d.inputs[0](0, 0) == 0.0);
  CHECK(d.inputs[0](1, 0) == 10.0);
  CHECK(d.targets[0](0, 0) == 20.0);
  CHECK(d.targets[0](1, 0) == 30.0);
}

TEST_CASE("window_split rejects impossible requests") {
  TimeSeries s = gen_periodic3d('A', 0.05);
  CHECK_THROWS_AS(window_split(s, 600, 600, 0.8), std::invalid_argument);
  CHECK_THROWS_AS(window_split(s, 10, 10, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(window_split(s, 10, 10, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(window_split(s, 0, 10, 0.8), std::invalid_argument);
}

TEST_CASE("csv export and import round-trip bit-identically") {
  TimeSeries s = gen_periodic3d('A', 0.05);
  std::string path = temp_path("roundtrip.csv");
  save_csv(s, path);
  TimeSeries r = load_csv(path);
  CHECK(r.t == s.t);
  CHECK(r.values.data == s.values.data);
  CHECK(r.names == s.names);
  std::remove(path.c_str());
}

TEST_CASE("csv without a time column gets the index grid") {
  std::string path = temp_path("plain.csv");
  {
    std::ofstream out(path);
    out << "a,b,c\n";
    for (int i = 0; i < 5; ++i)
      out << i << "," << i * 2 << "," << i * 3 << "\n";
  }
  TimeSeries s = load_csv(path);
  CHECK(s.channels() == 3);
  CHECK(s.len() == 5);
  CHECK(s.t[4] == 4.0);
  CHECK(s.values(3, 1) == 6.0);
  std::remove(path.c_str());
}

TEST_CASE("csv loader rejects malformed files") {
  std::string ragged = temp_path("ragged.csv");
  {
    std::ofstream out(ragged);
    out << "a,b\n1,2\n3\n";
  }
  CHECK_THROWS_AS(load_csv(ragged), std::runtime_error);
  std::remove(ragged.c_str());

  std::string text = temp_path("text.csv");
  {
    std::ofstream out(text);
    out << "a,b\n1,two\n";
  }
  CHECK_THROWS_AS(load_csv(text), std::runtime_error);
  std::remove(text.c_str());

  std::string headerless = temp_path("headerless.csv");
  {
    std::ofstream out(headerless);
    out << "1,2\n3,4\n";
  }
  CHECK_THROWS_AS(load_csv(headerless), std::runtime_error);
  std::remove(headerless.c_str());
}

TEST_CASE("labeled csv groups rows into classes") {
  std::string path = temp_path("labeled.csv");
  {
    std::ofstream out(path);
    out << "v0,v1,v2,label\n";
    out << "0.1,0.2,0.3,4\n";
    out << "1.1,1.2,1.3,2\n";
    out << "2.1,2.2,2.3,4\n";
  }
  LabeledSet set = load_labeled_csv(path);
  REQUIRE(set.seqs.size() == 3);
  CHECK(set.num_classes == 2);
  CHECK(set.class_values == std::vector<long long>{2, 4});
  CHECK(set.labels == std::vector<std::size_t>{1, 0, 1});
  REQUIRE(set.seqs[1].rows == 3);
  CHECK(set.seqs[1](0, 0) == 1.1);
  CHECK(set.seqs[1](2, 0) == 1.3);

  // named label column in another position
  std::string mid = temp_path("labeled_mid.csv");
  {
    std::ofstream out(mid);
    out << "v0,cls,v1\n0.5,1,0.7\n0.6,0,0.8\n";
  }
  LabeledSet m = load_labeled_csv(mid, std::string("cls"));
  CHECK(m.num_classes == 2);
  CHECK(m.seqs[0](1, 0) == 0.7);
  CHECK_THROWS_AS(load_labeled_csv(mid, std::string("absent")), std::runtime_error);
  std::remove(mid.c_str());

  // fractional labels are rejected
  std::string frac = temp_path("labeled_frac.csv");
  {
    std::ofstream out(frac);
    out << "v0,label\n0.5,1.5\n";
  }
  CHECK_THROWS_AS(load_labeled_csv(frac), std::runtime_error);
  std::remove(frac.c_str());
  std::remove(path.c_str());
}

TEST_CASE("validate rejects a jittered grid") {
  TimeSeries s = gen_periodic3d('A', 0.05);
  s.t[500] += 1e-6;
  CHECK_THROWS_AS(validate(s), std::invalid_argument);
}
