#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fode/mat.hpp"
#include "fode/rng.hpp"

namespace fode::ds {

struct TimeSeries {
  std::vector<double> t;           // strictly increasing, uniform grid
  Mat values;                      // len(t) x C
  std::vector<std::string> names;  // channel labels

  std::size_t len() const { return t.size(); }
  std::size_t channels() const { return values.cols; }
};

// Throws if the grid is non-uniform (beyond 1e-12) or any value is non-finite.
void validate(const TimeSeries& s);

struct WindowDataset {
  std::vector<Mat> inputs;   // in_len x C each
  std::vector<Mat> targets;  // out_len x C each
  std::size_t split_index = 0;  // windows before this are train, rest test
  std::size_t in_len = 0;
  std::size_t out_len = 0;

  std::size_t num_train() const { return split_index; }
  std::size_t num_test() const { return inputs.size() - split_index; }
};

struct LabeledSet {
  std::vector<Mat> seqs;  // len x 1 each
  std::vector<std::size_t> labels;        // remapped to 0..num_classes-1
  std::vector<long long> class_values;    // original label for each class id
  std::size_t num_classes = 0;
};

TimeSeries gen_periodic3d(char variant, double amp);  // variant 'A' or 'B'
TimeSeries gen_unstable_oscillator(double noise_sigma, std::uint64_t seed);
TimeSeries gen_forced_vibration();
TimeSeries gen_lotka_volterra();
TimeSeries gen_glycolytic();

// Named lookup used by the CLI: periodic3d-a, periodic3d-b, unstable-oscillator,
// forced-vibration, lotka-volterra, glycolytic.
TimeSeries gen_named(const std::string& name, double amp, double noise_sigma,
                     std::uint64_t seed);

WindowDataset window_split(const TimeSeries& series, std::size_t in_len,
                           std::size_t out_len, double train_frac);

void save_csv(const TimeSeries& s, const std::string& path);
TimeSeries load_csv(const std::string& path);
LabeledSet load_labeled_csv(const std::string& path,
                            const std::optional<std::string>& label_column = {});

}  // namespace fode::ds
