#pragma once

#include <string>
#include <vector>

#include "fode/nn.hpp"
#include "fode/spectral.hpp"

namespace fode {

enum class FieldKind { fode, node };
enum class InitScheme { zeros, ones, uniform, xavier };

const char* kind_name(FieldKind k);
const char* scheme_name(InitScheme s);
FieldKind parse_kind(const std::string& s);
InitScheme parse_scheme(const std::string& s);

// A forecasting model: the spectral-domain vector field's MLP (θ_g), the
// element-wise output filter K, and the fixed linear maps that mirror the
// FFT→pack and symmetrize→IFFT stages as dense real matrices (shared across
// channels). kind=node swaps the spectral pipeline for a plain time-domain
// MLP field of the same hidden width.
struct FodeModel {
  FieldKind kind = FieldKind::fode;
  std::size_t window_len = 0;  // N
  std::size_t channels = 0;    // C
  std::size_t hidden = 16;     // H
  bool use_filter = true;
  InitScheme k_init = InitScheme::uniform;
  bool time_input = false;

  nn::MlpParams mlp;
  Mat filter_k;  // N×C

  // classification head (empty unless num_classes > 0)
  std::size_t num_classes = 0;
  Mat head_w;  // num_classes×C
  std::vector<double> head_b;

  Mat pack_map;   // 2M×N: per-channel time samples → [re bins, im bins]
  Mat synth_map;  // N×2M: inverse with conjugate mirroring; dead imaginary
                  // slots (bin 0, Nyquist) have all-zero columns

  std::size_t half_bins() const { return window_len / 2 + 1; }
  std::size_t info_len() const { return 2 * half_bins(); }  // per channel
  std::size_t state_dim() const { return window_len * channels; }
  std::size_t feat_dim() const {
    return kind == FieldKind::fode ? channels * info_len() : state_dim();
  }
};

FodeModel make_model(FieldKind kind, std::size_t window_len, std::size_t channels,
                     std::size_t hidden, bool use_filter, InitScheme k_init,
                     bool time_input, Rng& rng);

Mat build_pack_map(std::size_t n);
Mat build_synth_map(std::size_t n);

// Rewires the MLP into an exact identity on its input (x = relu(x) − relu(−x)
// via a doubled hidden layer). Requires hidden = 2·feat_dim and no time input.
void configure_identity_mlp(FodeModel& m);

// InfoVector layout: per channel, real parts of bins 0..M−1 then imaginary
// parts of the same bins; channels concatenated.
std::vector<double> pack_info(const std::vector<spectral::HalfSpectrum>& spectra);
std::vector<spectral::HalfSpectrum> unpack_info(std::span<const double> z, std::size_t n,
                                                std::size_t c);

Mat apply_filter(const Mat& k, const Mat& x);
Mat init_filter(std::size_t n, std::size_t c, InitScheme scheme, Rng& rng);

// Flat solver-state layout is channel-major: state[c*N + i] = x(i, c).
std::vector<double> to_state(const Mat& x);
Mat to_mat(std::span<const double> state, std::size_t n, std::size_t c);

// Spectral-route evaluation (complex FFT path). Reports the internal IFFT's
// pre-discard imaginary residue when asked; used for realness verification
// and as an oracle for the dense-map route.
Mat fode_vector_field(const FodeModel& m, const Mat& x, double t,
                      double* residue_out = nullptr);
Mat node_vector_field(const FodeModel& m, const Mat& x, double t);
// Single dispatch point on model.kind; everything downstream calls this.
Mat vector_field(const FodeModel& m, const Mat& x, double t,
                 double* residue_out = nullptr);

// Dense-map route on flat states; bit-identical to the taped computation.
struct FieldScratch {
  std::vector<double> info, gout, h1, h2;
};
void field_eval_fast(const FodeModel& m, std::span<const double> state, double t,
                     std::span<double> out, FieldScratch& scratch);

// Taped field for training. The parameter leaves are staged once per tape.
struct FieldStage {
  nn::MlpStage mlp;
};
FieldStage stage_field(ad::Tape& tape, const FodeModel& m);
ad::NodeId taped_field(ad::Tape& tape, const FodeModel& m, const FieldStage& s,
                       ad::NodeId x, double t);

void save_model(const std::string& path, const FodeModel& m);
FodeModel load_model(const std::string& path);

}  // namespace fode
