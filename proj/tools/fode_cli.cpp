#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "fode/analysis.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fode;

namespace {

struct RunConfig {
  std::string system = "periodic3d-a";
  std::string csv;  // external dataset; overrides `system` when set
  double amp = 0.05;
  double noise_sigma = 0.0;
  std::size_t in_len = 10;
  std::size_t out_len = 10;
  double train_frac = 0.8;
  std::size_t channels = 3;  // standalone commands with no dataset

  std::vector<std::uint64_t> seeds = {0};
  std::size_t epochs = 1000;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::string model = "fode";
  bool use_filter = true;
  std::string k_init = "uniform";
  bool time_input = false;
  std::size_t hidden = 16;
  bool record_k = false;

  std::string solver = "dopri5";
  std::size_t rk4_steps = 8;
  double rtol = 1e-6;
  double atol = 1e-8;

  std::string eval = "windowed";
  std::string out = "runs";
  std::string ckpt;

  std::size_t n_pairs = 1000;
  double radius = 1.0;

  std::size_t stft_window = 32;
  std::size_t stft_hop = 8;
  std::size_t probe_row = 0;
  std::size_t probe_channel = 0;
  std::size_t window_index = 0;

  double fd_eps = 1e-5;
  double tol = 1e-5;
};

json config_json(const std::string& command, const RunConfig& c) {
  json j;
  j["command"] = command;
  j["system"] = c.system;
  j["csv"] = c.csv;
  j["amp"] = c.amp;
  j["noise_sigma"] = c.noise_sigma;
  j["in_len"] = c.in_len;
  j["out_len"] = c.out_len;
  j["train_frac"] = c.train_frac;
  j["channels"] = c.channels;
  j["seeds"] = c.seeds;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["model"] = c.model;
  j["use_filter"] = c.use_filter;
  j["k_init"] = c.k_init;
  j["time_input"] = c.time_input;
  j["hidden"] = c.hidden;
  j["record_k"] = c.record_k;
  j["solver"] = c.solver;
  j["rk4_steps"] = c.rk4_steps;
  j["rtol"] = c.rtol;
  j["atol"] = c.atol;
  j["eval"] = c.eval;
  j["out"] = c.out;
  j["ckpt"] = c.ckpt;
  j["n_pairs"] = c.n_pairs;
  j["radius"] = c.radius;
  j["stft_window"] = c.stft_window;
  j["stft_hop"] = c.stft_hop;
  j["probe_row"] = c.probe_row;
  j["probe_channel"] = c.probe_channel;
  j["window_index"] = c.window_index;
  j["fd_eps"] = c.fd_eps;
  j["tol"] = c.tol;
  return j;
}

void apply_config_file(const std::string& path, RunConfig& c) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config: " + path);
  json j = json::parse(in);
  for (auto& [key, value] : j.items()) {
    if (key == "command") continue;  // the subcommand decides
    else if (key == "system") value.get_to(c.system);
    else if (key == "csv") value.get_to(c.csv);
    else if (key == "amp") value.get_to(c.amp);
    else if (key == "noise_sigma") value.get_to(c.noise_sigma);
    else if (key == "in_len") value.get_to(c.in_len);
    else if (key == "out_len") value.get_to(c.out_len);
    else if (key == "train_frac") value.get_to(c.train_frac);
    else if (key == "channels") value.get_to(c.channels);
    else if (key == "seeds") value.get_to(c.seeds);
    else if (key == "epochs") value.get_to(c.epochs);
    else if (key == "batch") value.get_to(c.batch);
    else if (key == "lr") value.get_to(c.lr);
    else if (key == "model") value.get_to(c.model);
    else if (key == "use_filter") value.get_to(c.use_filter);
    else if (key == "k_init") value.get_to(c.k_init);
    else if (key == "time_input") value.get_to(c.time_input);
    else if (key == "hidden") value.get_to(c.hidden);
    else if (key == "record_k") value.get_to(c.record_k);
    else if (key == "solver") value.get_to(c.solver);
    else if (key == "rk4_steps") value.get_to(c.rk4_steps);
    else if (key == "rtol") value.get_to(c.rtol);
    else if (key == "atol") value.get_to(c.atol);
    else if (key == "eval") value.get_to(c.eval);
    else if (key == "out") value.get_to(c.out);
    else if (key == "ckpt") value.get_to(c.ckpt);
    else if (key == "n_pairs") value.get_to(c.n_pairs);
    else if (key == "radius") value.get_to(c.radius);
    else if (key == "stft_window") value.get_to(c.stft_window);
    else if (key == "stft_hop") value.get_to(c.stft_hop);
    else if (key == "probe_row") value.get_to(c.probe_row);
    else if (key == "probe_channel") value.get_to(c.probe_channel);
    else if (key == "window_index") value.get_to(c.window_index);
    else if (key == "fd_eps") value.get_to(c.fd_eps);
    else if (key == "tol") value.get_to(c.tol);
    else throw std::invalid_argument("unknown config key: " + key);
  }
}

// staging area so that explicitly-passed flags can override the config file
struct Staging {
  std::string config_path;
  RunConfig v;  // flag values land here; copied over only when the flag was used
  std::string seeds_csv;
  bool no_filter = false;
};

void add_common_options(CLI::App* cmd, Staging& st) {
  cmd->add_option("--config", st.config_path, "JSON config file (flags override it)");
  cmd->add_option("--system", st.v.system,
                  "dataset: periodic3d-a|periodic3d-b|unstable-oscillator|"
                  "forced-vibration|lotka-volterra|glycolytic");
  cmd->add_option("--csv", st.v.csv, "train/eval on an external CSV instead of --system");
  cmd->add_option("--amp", st.v.amp, "high-frequency amplitude for the periodic systems");
  cmd->add_option("--noise-sigma", st.v.noise_sigma, "observation noise (unstable-oscillator)");
  cmd->add_option("--in-len", st.v.in_len, "input window length N");
  cmd->add_option("--out-len", st.v.out_len, "forecast window length");
  cmd->add_option("--train-frac", st.v.train_frac, "fraction of windows used for training");
  cmd->add_option("--channels", st.v.channels, "channel count for dataset-free commands");
  cmd->add_option("--seed", st.v.seeds, "single RNG seed")->expected(1);
  cmd->add_option("--seeds", st.seeds_csv, "comma-separated seed list, e.g. 1,2,3");
  cmd->add_option("--epochs", st.v.epochs, "training epochs");
  cmd->add_option("--batch", st.v.batch, "minibatch size");
  cmd->add_option("--lr", st.v.lr, "Adam learning rate");
  cmd->add_option("--model", st.v.model, "field type: fode|node");
  cmd->add_flag("--no-filter", st.no_filter, "disable the learnable output filter K");
  cmd->add_option("--k-init", st.v.k_init, "filter init: zeros|ones|uniform|xavier");
  cmd->add_flag("--time-input", st.v.time_input, "feed t to the vector-field MLP");
  cmd->add_option("--hidden", st.v.hidden, "MLP hidden width");
  cmd->add_flag("--record-k", st.v.record_k, "snapshot K every epoch");
  cmd->add_option("--solver", st.v.solver, "evaluation solver: rk4|dopri5");
  cmd->add_option("--rk4-steps", st.v.rk4_steps, "fixed RK4 steps (training always uses these)");
  cmd->add_option("--rtol", st.v.rtol, "dopri5 relative tolerance");
  cmd->add_option("--atol", st.v.atol, "dopri5 absolute tolerance");
  cmd->add_option("--eval", st.v.eval, "evaluation mode: windowed|rollout");
  cmd->add_option("--out", st.v.out, "output root directory");
  cmd->add_option("--ckpt", st.v.ckpt, "model checkpoint to load");
  cmd->add_option("--n-pairs", st.v.n_pairs, "sample pairs for the empirical Lipschitz check");
  cmd->add_option("--radius", st.v.radius, "perturbation radius for the Lipschitz check");
  cmd->add_option("--stft-window", st.v.stft_window, "STFT window length");
  cmd->add_option("--stft-hop", st.v.stft_hop, "STFT hop");
  cmd->add_option("--probe-row", st.v.probe_row, "state row probed for the spectrogram");
  cmd->add_option("--probe-channel", st.v.probe_channel, "state channel probed");
  cmd->add_option("--window-index", st.v.window_index, "dataset window fed to the rollout");
  cmd->add_option("--fd-eps", st.v.fd_eps, "finite-difference step for gradcheck");
  cmd->add_option("--tol", st.v.tol, "pass threshold for gradcheck");
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    if (cur.empty()) throw std::invalid_argument("empty entry in --seeds");
    std::size_t pos = 0;
    unsigned long long v = std::stoull(cur, &pos);
    if (pos != cur.size()) throw std::invalid_argument("bad seed: " + cur);
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("--seeds needs at least one value");
  return out;
}

void apply_overrides(const CLI::App* cmd, const Staging& st, RunConfig& c) {
  auto used = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (used("--system")) c.system = st.v.system;
  if (used("--csv")) c.csv = st.v.csv;
  if (used("--amp")) c.amp = st.v.amp;
  if (used("--noise-sigma")) c.noise_sigma = st.v.noise_sigma;
  if (used("--in-len")) c.in_len = st.v.in_len;
  if (used("--out-len")) c.out_len = st.v.out_len;
  if (used("--train-frac")) c.train_frac = st.v.train_frac;
  if (used("--channels")) c.channels = st.v.channels;
  if (used("--seed")) c.seeds = st.v.seeds;
  if (used("--seeds")) c.seeds = parse_seed_list(st.seeds_csv);
  if (used("--epochs")) c.epochs = st.v.epochs;
  if (used("--batch")) c.batch = st.v.batch;
  if (used("--lr")) c.lr = st.v.lr;
  if (used("--model")) c.model = st.v.model;
  if (used("--no-filter")) c.use_filter = false;
  if (used("--k-init")) c.k_init = st.v.k_init;
  if (used("--time-input")) c.time_input = st.v.time_input;
  if (used("--hidden")) c.hidden = st.v.hidden;
  if (used("--record-k")) c.record_k = st.v.record_k;
  if (used("--solver")) c.solver = st.v.solver;
  if (used("--rk4-steps")) c.rk4_steps = st.v.rk4_steps;
  if (used("--rtol")) c.rtol = st.v.rtol;
  if (used("--atol")) c.atol = st.v.atol;
  if (used("--eval")) c.eval = st.v.eval;
  if (used("--out")) c.out = st.v.out;
  if (used("--ckpt")) c.ckpt = st.v.ckpt;
  if (used("--n-pairs")) c.n_pairs = st.v.n_pairs;
  if (used("--radius")) c.radius = st.v.radius;
  if (used("--stft-window")) c.stft_window = st.v.stft_window;
  if (used("--stft-hop")) c.stft_hop = st.v.stft_hop;
  if (used("--probe-row")) c.probe_row = st.v.probe_row;
  if (used("--probe-channel")) c.probe_channel = st.v.probe_channel;
  if (used("--window-index")) c.window_index = st.v.window_index;
  if (used("--fd-eps")) c.fd_eps = st.v.fd_eps;
  if (used("--tol")) c.tol = st.v.tol;
}

train::TrainConfig train_config(const RunConfig& c, std::uint64_t seed) {
  train::TrainConfig t;
  t.epochs = c.epochs;
  t.batch_size = c.batch;
  t.lr = c.lr;
  t.seed = seed;
  t.solver.method = odeint::parse_method(c.solver);
  t.solver.rk4_steps = c.rk4_steps;
  t.solver.rtol = c.rtol;
  t.solver.atol = c.atol;
  t.model_kind = parse_kind(c.model);
  t.use_filter = c.use_filter;
  t.k_init = parse_scheme(c.k_init);
  t.time_input = c.time_input;
  t.hidden = c.hidden;
  t.record_k = c.record_k;
  return t;
}

ds::TimeSeries load_series(const RunConfig& c, std::uint64_t seed) {
  if (!c.csv.empty()) return ds::load_csv(c.csv);
  return ds::gen_named(c.system, c.amp, c.noise_sigma, seed);
}

fs::path make_run_dir(const RunConfig& c, const std::string& command) {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  localtime_r(&tt, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::path base = fs::path(c.out) / (command + "-" + stamp);
  fs::path dir = base;
  for (int n = 2; fs::exists(dir); ++n) dir = base.string() + "-" + std::to_string(n);
  fs::create_directories(dir);
  return dir;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

double stdev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

struct SeedRun {
  std::uint64_t seed;
  train::TrainResult result;
  train::Metrics metrics;
};

SeedRun run_one_seed(const RunConfig& c, const ds::WindowDataset& data, std::uint64_t seed,
                     bool force_filter_off = false) {
  train::TrainConfig tc = train_config(c, seed);
  if (force_filter_off) tc.use_filter = false;
  Rng rng(seed);
  FodeModel init = train::make_configured_model(tc, data.in_len, data.inputs[0].cols, rng);
  SeedRun r{seed, train::train(init, data, tc), {}};
  if (r.result.history.aborted)
    throw std::runtime_error("training aborted (non-finite loss) at seed " +
                             std::to_string(seed));
  r.metrics = train::evaluate(r.result.best, data, train::parse_eval_mode(c.eval), tc.solver);
  return r;
}

void write_seed_artifacts(const fs::path& dir, const SeedRun& r, bool record_k) {
  save_model((dir / "model.ckpt").string(), r.result.best);
  train::write_history_csv(r.result.history, (dir / "history.csv").string());
  if (record_k) analysis::k_evolution_csv(r.result.history, (dir / "k_evolution.csv").string());
  json m;
  m["mse"] = r.metrics.mse;
  m["mape_pct"] = r.metrics.mape_pct;
  m["n_test"] = r.metrics.n_test;
  m["final_train_loss"] = r.result.history.train_loss.back();
  m["best_test_loss"] = r.result.history.test_loss[r.result.history.best_epoch];
  m["best_epoch"] = r.result.history.best_epoch;
  write_json(m, dir / "metrics.json");
}

int cmd_gen(const RunConfig& c, const fs::path& dir) {
  ds::TimeSeries s = load_series(c, c.seeds[0]);
  ds::save_csv(s, (dir / "data.csv").string());
  std::printf("wrote %zu rows x %zu channels\n", s.len(), s.channels());
  return 0;
}

int cmd_train(const RunConfig& c, const fs::path& dir) {
  ds::TimeSeries series = load_series(c, c.seeds[0]);
  ds::WindowDataset data = ds::window_split(series, c.in_len, c.out_len, c.train_frac);
  std::vector<double> mses, mapes;
  std::size_t n_test = 0;
  for (std::uint64_t seed : c.seeds) {
    SeedRun r = run_one_seed(c, data, seed);
    fs::path sub = c.seeds.size() == 1 ? dir : dir / ("seed-" + std::to_string(seed));
    fs::create_directories(sub);
    write_seed_artifacts(sub, r, c.record_k);
    mses.push_back(r.metrics.mse);
    mapes.push_back(r.metrics.mape_pct);
    n_test = r.metrics.n_test;
    std::printf("seed %llu: train %.6e  test mse %.6e  mape %.3f%%\n",
                (unsigned long long)seed, r.result.history.train_loss.back(), r.metrics.mse,
                r.metrics.mape_pct);
  }
  if (c.seeds.size() > 1) {
    json m;
    m["seeds"] = c.seeds;
    m["mse_per_seed"] = mses;
    m["mape_per_seed"] = mapes;
    m["mse_mean"] = mean_of(mses);
    m["mse_std"] = stdev_of(mses);
    m["mape_mean"] = mean_of(mapes);
    m["mape_std"] = stdev_of(mapes);
    m["n_test"] = n_test;
    write_json(m, dir / "metrics.json");
    std::printf("mse %.6e +/- %.6e  mape %.3f%% +/- %.3f%%\n", mean_of(mses), stdev_of(mses),
                mean_of(mapes), stdev_of(mapes));
  }
  return 0;
}

int cmd_eval(const RunConfig& c, const fs::path& dir) {
  if (c.ckpt.empty()) throw std::runtime_error("eval requires --ckpt");
  FodeModel m = load_model(c.ckpt);
  ds::TimeSeries series = load_series(c, c.seeds[0]);
  ds::WindowDataset data = ds::window_split(series, c.in_len, c.out_len, c.train_frac);
  odeint::SolverConfig scfg;
  scfg.method = odeint::parse_method(c.solver);
  scfg.rk4_steps = c.rk4_steps;
  scfg.rtol = c.rtol;
  scfg.atol = c.atol;
  train::Metrics mt = train::evaluate(m, data, train::parse_eval_mode(c.eval), scfg);
  json j;
  j["mse"] = mt.mse;
  j["mape_pct"] = mt.mape_pct;
  j["n_test"] = mt.n_test;
  write_json(j, dir / "metrics.json");
  std::printf("mse %.6e  mape %.3f%%  over %zu test windows\n", mt.mse, mt.mape_pct, mt.n_test);
  return 0;
}

int cmd_ablate_k(const RunConfig& c, const fs::path& dir) {
  ds::TimeSeries series = load_series(c, c.seeds[0]);
  ds::WindowDataset data = ds::window_split(series, c.in_len, c.out_len, c.train_frac);
  std::ofstream table(dir / "ablation.csv");
  table << "seed,mape_with_k,mape_without_k,mse_with_k,mse_without_k\n";
  std::vector<double> with_m, without_m;
  for (std::uint64_t seed : c.seeds) {
    SeedRun with_k = run_one_seed(c, data, seed);
    SeedRun without_k = run_one_seed(c, data, seed, /*force_filter_off=*/true);
    fs::path wdir = dir / ("seed-" + std::to_string(seed) + "-with-k");
    fs::path odir = dir / ("seed-" + std::to_string(seed) + "-without-k");
    fs::create_directories(wdir);
    fs::create_directories(odir);
    write_seed_artifacts(wdir, with_k, c.record_k);
    write_seed_artifacts(odir, without_k, c.record_k);
    char line[256];
    std::snprintf(line, sizeof line, "%llu,%.17g,%.17g,%.17g,%.17g\n",
                  (unsigned long long)seed, with_k.metrics.mape_pct,
                  without_k.metrics.mape_pct, with_k.metrics.mse, without_k.metrics.mse);
    table << line;
    with_m.push_back(with_k.metrics.mape_pct);
    without_m.push_back(without_k.metrics.mape_pct);
    std::printf("seed %llu: mape with K %.3f%%  without K %.3f%%\n", (unsigned long long)seed,
                with_k.metrics.mape_pct, without_k.metrics.mape_pct);
  }
  json m;
  m["seeds"] = c.seeds;
  m["mape_with_k_mean"] = mean_of(with_m);
  m["mape_with_k_std"] = stdev_of(with_m);
  m["mape_without_k_mean"] = mean_of(without_m);
  m["mape_without_k_std"] = stdev_of(without_m);
  write_json(m, dir / "metrics.json");
  std::printf("mean mape: with K %.3f%%  without K %.3f%%\n", mean_of(with_m),
              mean_of(without_m));
  return 0;
}

int cmd_k_init_study(const RunConfig& c, const fs::path& dir) {
  ds::TimeSeries series = load_series(c, c.seeds[0]);
  ds::WindowDataset data = ds::window_split(series, c.in_len, c.out_len, c.train_frac);
  json m;
  double best = std::numeric_limits<double>::infinity();
  for (const char* scheme : {"zeros", "ones", "xavier"}) {
    RunConfig cs = c;
    cs.k_init = scheme;
    cs.record_k = true;
    SeedRun r = run_one_seed(cs, data, c.seeds[0]);
    fs::path sub = dir / scheme;
    fs::create_directories(sub);
    write_seed_artifacts(sub, r, /*record_k=*/true);
    double final_loss = r.result.history.train_loss.back();
    m[scheme] = {{"final_train_loss", final_loss},
                 {"mse", r.metrics.mse},
                 {"mape_pct", r.metrics.mape_pct}};
    best = std::min(best, final_loss);
    std::printf("%s: final train loss %.6e  test mse %.6e\n", scheme, final_loss, r.metrics.mse);
  }
  m["best_final_train_loss"] = best;
  write_json(m, dir / "metrics.json");
  return 0;
}

FodeModel model_for_report(const RunConfig& c) {
  if (!c.ckpt.empty()) return load_model(c.ckpt);
  Rng rng(c.seeds[0]);
  return make_model(parse_kind(c.model), c.in_len, c.channels, c.hidden, c.use_filter,
                    parse_scheme(c.k_init), c.time_input, rng);
}

int cmd_lipschitz(const RunConfig& c, const fs::path& dir) {
  FodeModel m = model_for_report(c);
  analysis::LipschitzReport r = analysis::certify(m, c.n_pairs, c.radius, c.seeds[0]);
  analysis::write_lipschitz_json(r, (dir / "lipschitz.json").string());
  std::printf("bound %.6g  empirical max ratio %.6g  -> %s\n", r.l_f_bound,
              r.empirical_max_ratio, r.pass ? "PASS" : "FAIL");
  return r.pass ? 0 : 1;
}

int cmd_spectrogram(const RunConfig& c, const fs::path& dir) {
  FodeModel m = model_for_report(c);
  ds::TimeSeries series = load_series(c, c.seeds[0]);
  ds::WindowDataset data = ds::window_split(series, m.window_len, c.out_len, c.train_frac);
  if (c.window_index >= data.inputs.size())
    throw std::runtime_error("--window-index out of range");
  analysis::SpectroParams p;
  p.window = c.stft_window;
  p.hop = c.stft_hop;
  p.probe_row = c.probe_row;
  p.probe_channel = c.probe_channel;
  auto sgs = analysis::hidden_spectrogram({m}, data.inputs[c.window_index], p);
  spectral::write_spectrogram_csv(sgs[0], (dir / "spectrogram.csv").string());
  std::printf("spectrogram: %zu frames x %zu bins, entropy %.4f\n", sgs[0].frames.rows,
              sgs[0].frames.cols, analysis::spectral_entropy(sgs[0]));
  return 0;
}

int cmd_gradcheck(const RunConfig& c, const fs::path& dir) {
  Rng rng(c.seeds[0]);
  FodeModel m = make_model(parse_kind(c.model), c.in_len, c.channels, c.hidden, c.use_filter,
                           parse_scheme(c.k_init), c.time_input, rng);
  Mat input(c.in_len, c.channels), target(c.in_len, c.channels);
  for (double& v : input.data) v = rng.normal();
  for (double& v : target.data) v = rng.normal();

  ad::Tape tape;
  FieldStage stage = stage_field(tape, m);
  std::vector<double> kvec = to_state(m.filter_k);
  ad::NodeId kid = tape.leaf(kvec);
  ad::NodeId x0 = tape.leaf(to_state(input));
  ad::NodeId xf = odeint::solve_unrolled(tape, m, stage, x0, 0.0, 1.0, c.rk4_steps);
  ad::NodeId pred = m.use_filter ? tape.hadamard(xf, kid) : xf;
  ad::NodeId loss = tape.mse(pred, to_state(target));
  tape.backward_scalar(loss);

  std::vector<double> theta, g;
  for (ad::NodeId pid :
       {stage.mlp.w1, stage.mlp.b1, stage.mlp.w2, stage.mlp.b2, stage.mlp.w3, stage.mlp.b3}) {
    theta.insert(theta.end(), tape.value(pid).begin(), tape.value(pid).end());
    g.insert(g.end(), tape.grad(pid).begin(), tape.grad(pid).end());
  }
  if (m.use_filter) {
    theta.insert(theta.end(), kvec.begin(), kvec.end());
    g.insert(g.end(), tape.grad(kid).begin(), tape.grad(kid).end());
  }

  auto loss_at = [&](std::span<const double> p) {
    FodeModel mm = m;
    std::size_t at = 0;
    auto take = [&](auto& dst) {
      for (double& v : dst) v = p[at++];
    };
    take(mm.mlp.w1.data);
    take(mm.mlp.b1);
    take(mm.mlp.w2.data);
    take(mm.mlp.b2);
    take(mm.mlp.w3.data);
    take(mm.mlp.b3);
    if (mm.use_filter) mm.filter_k = to_mat(p.subspan(at), mm.window_len, mm.channels);
    odeint::SolverConfig s;
    s.method = odeint::Method::rk4;
    s.rk4_steps = c.rk4_steps;
    Mat out = train::predict_window(mm, input, s);
    return train::mse_loss(to_state(out), to_state(target));
  };

  double max_rel = nn::grad_check(loss_at, theta, g, c.fd_eps);
  bool pass = max_rel < c.tol;
  json j;
  j["max_rel_err"] = max_rel;
  j["fd_eps"] = c.fd_eps;
  j["tol"] = c.tol;
  j["pass"] = pass;
  write_json(j, dir / "metrics.json");
  std::printf("max relative gradient error %.3e (tol %.1e) -> %s\n", max_rel, c.tol,
              pass ? "PASS" : "FAIL");
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fourier-space neural ODE forecasting toolkit"};
  app.require_subcommand(1);

  Staging st;
  CLI::App* sub_gen = app.add_subcommand("gen", "generate a dataset CSV");
  CLI::App* sub_train = app.add_subcommand("train", "train a forecasting model");
  CLI::App* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* sub_ablate = app.add_subcommand("ablate-k", "paired trainings with/without K");
  CLI::App* sub_kinit = app.add_subcommand("k-init-study", "compare K initializations");
  CLI::App* sub_lip = app.add_subcommand("lipschitz", "certified vs. empirical Lipschitz");
  CLI::App* sub_spec = app.add_subcommand("spectrogram", "STFT of the hidden trajectory");
  CLI::App* sub_grad = app.add_subcommand("gradcheck", "tape gradients vs. finite differences");
  for (CLI::App* s :
       {sub_gen, sub_train, sub_eval, sub_ablate, sub_kinit, sub_lip, sub_spec, sub_grad})
    add_common_options(s, st);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  std::string command = sub->get_name();

  RunConfig cfg;
  try {
    if (sub->count("--config") > 0) apply_config_file(st.config_path, cfg);
    apply_overrides(sub, st, cfg);
    // fail fast on bad enum spellings before any work happens
    parse_kind(cfg.model);
    parse_scheme(cfg.k_init);
    odeint::parse_method(cfg.solver);
    train::parse_eval_mode(cfg.eval);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }

  try {
    fs::path dir = make_run_dir(cfg, command);
    write_json(config_json(command, cfg), dir / "resolved_config.json");
    int rc = 1;
    if (command == "gen") rc = cmd_gen(cfg, dir);
    else if (command == "train") rc = cmd_train(cfg, dir);
    else if (command == "eval") rc = cmd_eval(cfg, dir);
    else if (command == "ablate-k") rc = cmd_ablate_k(cfg, dir);
    else if (command == "k-init-study") rc = cmd_k_init_study(cfg, dir);
    else if (command == "lipschitz") rc = cmd_lipschitz(cfg, dir);
    else if (command == "spectrogram") rc = cmd_spectrogram(cfg, dir);
    else if (command == "gradcheck") rc = cmd_gradcheck(cfg, dir);
    std::printf("%s\n", dir.string().c_str());
    return rc;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
