#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fode/analysis.hpp"

namespace py = pybind11;
using namespace fode;

namespace {

Mat mat_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Mat m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

py::array_t<double> array_from_mat(const Mat& m) {
  py::array_t<double> a({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

spectral::CSeq cseq_from_array(
    const py::array_t<std::complex<double>, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return spectral::CSeq(a.data(), a.data() + a.size());
}

py::array_t<std::complex<double>> array_from_cseq(const spectral::CSeq& x) {
  py::array_t<std::complex<double>> a(x.size());
  std::copy(x.begin(), x.end(), a.mutable_data());
  return a;
}

std::vector<double> vec_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return std::vector<double>(a.data(), a.data() + a.size());
}

train::TrainConfig config_from_kwargs(const std::string& kind, std::size_t epochs,
                                      std::size_t batch, double lr, std::uint64_t seed,
                                      std::size_t hidden, bool use_filter,
                                      const std::string& k_init, bool time_input,
                                      std::size_t rk4_steps, bool record_k) {
  train::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.lr = lr;
  cfg.seed = seed;
  cfg.hidden = hidden;
  cfg.model_kind = parse_kind(kind);
  cfg.use_filter = use_filter;
  cfg.k_init = parse_scheme(k_init);
  cfg.time_input = time_input;
  cfg.solver.rk4_steps = rk4_steps;
  cfg.record_k = record_k;
  return cfg;
}

odeint::SolverConfig rk4_config(std::size_t steps) {
  odeint::SolverConfig s;
  s.method = odeint::Method::rk4;
  s.rk4_steps = steps;
  return s;
}

py::dict history_dict(const train::TrainHistory& h) {
  py::dict d;
  d["train_loss"] = py::array_t<double>(h.train_loss.size(), h.train_loss.data());
  d["test_loss"] = py::array_t<double>(h.test_loss.size(), h.test_loss.data());
  d["seconds"] = py::array_t<double>(h.seconds.size(), h.seconds.data());
  d["best_epoch"] = h.best_epoch;
  d["aborted"] = h.aborted;
  d["lr_halved"] = h.lr_halved;
  py::list snaps;
  for (const Mat& k : h.k_snapshots) snaps.append(array_from_mat(k));
  d["k_snapshots"] = snaps;
  return d;
}

}  // namespace

PYBIND11_MODULE(pyfode, mod) {
  mod.doc() = "Fourier-space neural ODE forecasting: spectral ops, datasets, training";

  py::class_<ds::TimeSeries>(mod, "TimeSeries")
      .def_property_readonly(
          "t",
          [](const ds::TimeSeries& s) {
            return py::array_t<double>(s.t.size(), s.t.data());
          })
      .def_property_readonly(
          "values", [](const ds::TimeSeries& s) { return array_from_mat(s.values); })
      .def_property_readonly("names",
                             [](const ds::TimeSeries& s) { return s.names; })
      .def("__len__", [](const ds::TimeSeries& s) { return s.len(); });

  py::class_<ds::WindowDataset>(mod, "WindowDataset")
      .def_property_readonly("num_train", &ds::WindowDataset::num_train)
      .def_property_readonly("num_test", &ds::WindowDataset::num_test)
      .def_property_readonly("in_len", [](const ds::WindowDataset& d) { return d.in_len; })
      .def("input",
           [](const ds::WindowDataset& d, std::size_t i) {
             return array_from_mat(d.inputs.at(i));
           })
      .def("target", [](const ds::WindowDataset& d, std::size_t i) {
        return array_from_mat(d.targets.at(i));
      });

  py::class_<FodeModel>(mod, "Model")
      .def_property_readonly("kind", [](const FodeModel& m) { return kind_name(m.kind); })
      .def_property_readonly("window_len", [](const FodeModel& m) { return m.window_len; })
      .def_property_readonly("channels", [](const FodeModel& m) { return m.channels; })
      .def_property_readonly("hidden", [](const FodeModel& m) { return m.hidden; })
      .def_property_readonly("use_filter", [](const FodeModel& m) { return m.use_filter; })
      .def_property_readonly("filter_k",
                             [](const FodeModel& m) { return array_from_mat(m.filter_k); });

  mod.def(
      "fft", [](const py::array_t<std::complex<double>, py::array::c_style |
                                                            py::array::forcecast>& x) {
        return array_from_cseq(spectral::fft(cseq_from_array(x)));
      },
      py::arg("x"), "unnormalized forward DFT");
  mod.def(
      "ifft", [](const py::array_t<std::complex<double>, py::array::c_style |
                                                             py::array::forcecast>& x) {
        return array_from_cseq(spectral::ifft(cseq_from_array(x)));
      },
      py::arg("X"), "inverse DFT with 1/N normalization");
  mod.def(
      "rfft_half",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x) {
        return array_from_cseq(spectral::rfft_half(vec_from_array(x)).values);
      },
      py::arg("x"), "bins 0..floor(N/2) of a real signal's DFT");
  mod.def(
      "stft",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
         std::size_t window, std::size_t hop) {
        return array_from_mat(spectral::stft(vec_from_array(x), window, hop).frames);
      },
      py::arg("x"), py::arg("window") = 32, py::arg("hop") = 8,
      "Hann-windowed magnitude spectrogram, frames x bins");

  mod.def("gen", &ds::gen_named, py::arg("name"), py::arg("amp") = 0.05,
          py::arg("noise_sigma") = 0.0, py::arg("seed") = 0,
          "generate a named benchmark series");
  mod.def("load_csv", &ds::load_csv, py::arg("path"));
  mod.def(
      "window_split",
      [](const ds::TimeSeries& s, std::size_t in_len, std::size_t out_len, double train_frac) {
        return ds::window_split(s, in_len, out_len, train_frac);
      },
      py::arg("series"), py::arg("in_len"), py::arg("out_len"), py::arg("train_frac") = 0.8);

  mod.def(
      "train",
      [](const ds::WindowDataset& data, const std::string& kind, std::size_t epochs,
         std::size_t batch, double lr, std::uint64_t seed, std::size_t hidden, bool use_filter,
         const std::string& k_init, bool time_input, std::size_t rk4_steps, bool record_k) {
        train::TrainConfig cfg = config_from_kwargs(kind, epochs, batch, lr, seed, hidden,
                                                    use_filter, k_init, time_input, rk4_steps,
                                                    record_k);
        Rng rng(seed);
        FodeModel init = train::make_configured_model(cfg, data.in_len,
                                                      data.inputs.at(0).cols, rng);
        train::TrainResult r = train::train(init, data, cfg);
        return py::make_tuple(r.best, history_dict(r.history));
      },
      py::arg("dataset"), py::arg("kind") = "fode", py::arg("epochs") = 100,
      py::arg("batch") = 32, py::arg("lr") = 1e-3, py::arg("seed") = 0, py::arg("hidden") = 16,
      py::arg("use_filter") = true, py::arg("k_init") = "uniform",
      py::arg("time_input") = false, py::arg("rk4_steps") = 8, py::arg("record_k") = false,
      "train a forecaster; returns (best_model, history)");

  mod.def(
      "predict",
      [](const FodeModel& m,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& window,
         std::size_t rk4_steps) {
        return array_from_mat(train::predict_window(m, mat_from_array(window),
                                                    rk4_config(rk4_steps)));
      },
      py::arg("model"), py::arg("window"), py::arg("rk4_steps") = 8,
      "advance one window through the learned dynamics");

  mod.def(
      "evaluate",
      [](const FodeModel& m, const ds::WindowDataset& data, const std::string& mode,
         std::size_t rk4_steps) {
        train::Metrics mt =
            train::evaluate(m, data, train::parse_eval_mode(mode), rk4_config(rk4_steps));
        py::dict d;
        d["mse"] = mt.mse;
        d["mape_pct"] = mt.mape_pct;
        d["n_test"] = mt.n_test;
        return d;
      },
      py::arg("model"), py::arg("dataset"), py::arg("mode") = "windowed",
      py::arg("rk4_steps") = 8);

  mod.def(
      "vector_field",
      [](const FodeModel& m,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& x, double t) {
        return array_from_mat(vector_field(m, mat_from_array(x), t));
      },
      py::arg("model"), py::arg("x"), py::arg("t") = 0.0,
      "evaluate dx/dt at a window state");

  mod.def(
      "lipschitz",
      [](const FodeModel& m, std::size_t n_pairs, double radius, std::uint64_t seed) {
        analysis::LipschitzReport r = analysis::certify(m, n_pairs, radius, seed);
        py::dict d;
        d["l_fft"] = r.l_fft;
        d["l_ifft"] = r.l_ifft;
        d["l_pack"] = r.l_pack;
        d["l_unpack"] = r.l_unpack;
        d["l_g"] = r.l_g;
        d["l_f_bound"] = r.l_f_bound;
        d["empirical_max_ratio"] = r.empirical_max_ratio;
        d["n_pairs"] = r.n_pairs;
        d["pass"] = r.pass;
        return d;
      },
      py::arg("model"), py::arg("n_pairs") = 1000, py::arg("radius") = 1.0, py::arg("seed") = 0,
      "certified bound vs. sampled difference quotients");

  mod.def("save_model", &save_model, py::arg("path"), py::arg("model"));
  mod.def("load_model", &load_model, py::arg("path"));
}
