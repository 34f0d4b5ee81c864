#include "fode/model.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace fode {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

const char* kind_name(FieldKind k) { return k == FieldKind::fode ? "fode" : "node"; }

const char* scheme_name(InitScheme s) {
  switch (s) {
    case InitScheme::zeros: return "zeros";
    case InitScheme::ones: return "ones";
    case InitScheme::uniform: return "uniform";
    case InitScheme::xavier: return "xavier";
  }
  return "?";
}

FieldKind parse_kind(const std::string& s) {
  if (s == "fode") return FieldKind::fode;
  if (s == "node") return FieldKind::node;
  throw std::invalid_argument("unknown model kind: " + s);
}

InitScheme parse_scheme(const std::string& s) {
  if (s == "zeros") return InitScheme::zeros;
  if (s == "ones") return InitScheme::ones;
  if (s == "uniform") return InitScheme::uniform;
  if (s == "xavier") return InitScheme::xavier;
  throw std::invalid_argument("unknown init scheme: " + s);
}

Mat build_pack_map(std::size_t n) {
  std::size_t m = n / 2 + 1;
  bool even = (n % 2 == 0);
  Mat p(2 * m, n);
  for (std::size_t k = 0; k < m; ++k) {
    // sin(pi*j) and sin(0) vanish identically; pin those rows so the
    // structurally-zero imaginary slots carry exact zeros, not roundoff
    bool self_conjugate = (k == 0) || (even && k == n / 2);
    for (std::size_t j = 0; j < n; ++j) {
      double ang = kTwoPi * static_cast<double>(k) * static_cast<double>(j) /
                   static_cast<double>(n);
      p(k, j) = std::cos(ang);
      p(m + k, j) = self_conjugate ? 0.0 : -std::sin(ang);
    }
  }
  return p;
}

Mat build_synth_map(std::size_t n) {
  std::size_t m = n / 2 + 1;
  bool even = (n % 2 == 0);
  Mat s(n, 2 * m);
  double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < m; ++k) {
      bool self_conjugate = (k == 0) || (even && k == n / 2);
      double mult = self_conjugate ? 1.0 : 2.0;
      double ang = kTwoPi * static_cast<double>(k) * static_cast<double>(j) /
                   static_cast<double>(n);
      s(j, k) = mult * std::cos(ang) * inv_n;
      // dead imaginary slots get exact-zero columns so their gradients vanish
      s(j, m + k) = self_conjugate ? 0.0 : -mult * std::sin(ang) * inv_n;
    }
  }
  return s;
}

Mat init_filter(std::size_t n, std::size_t c, InitScheme scheme, Rng& rng) {
  Mat k(n, c);
  switch (scheme) {
    case InitScheme::zeros:
      break;
    case InitScheme::ones:
      std::fill(k.data.begin(), k.data.end(), 1.0);
      break;
    case InitScheme::uniform:
      for (double& v : k.data) v = rng.uniform01();
      break;
    case InitScheme::xavier: {
      double a = std::sqrt(6.0 / static_cast<double>(n + c));
      for (double& v : k.data) v = rng.uniform(-a, a);
      break;
    }
  }
  return k;
}

FodeModel make_model(FieldKind kind, std::size_t window_len, std::size_t channels,
                     std::size_t hidden, bool use_filter, InitScheme k_init,
                     bool time_input, Rng& rng) {
  require(window_len >= 2 && channels >= 1 && hidden >= 1, "make_model: bad dimensions");
  FodeModel m;
  m.kind = kind;
  m.window_len = window_len;
  m.channels = channels;
  m.hidden = hidden;
  m.use_filter = use_filter;
  m.k_init = k_init;
  m.time_input = time_input;
  std::size_t f = m.feat_dim();
  m.mlp = nn::xavier_mlp(f + (time_input ? 1 : 0), hidden, f, rng);
  m.filter_k = init_filter(window_len, channels, k_init, rng);
  m.pack_map = build_pack_map(window_len);
  m.synth_map = build_synth_map(window_len);
  return m;
}

void configure_identity_mlp(FodeModel& m) {
  std::size_t f = m.feat_dim();
  require(!m.time_input && m.hidden == 2 * f, "identity mlp needs hidden = 2·features");
  m.mlp = nn::zero_mlp(f, 2 * f, f);
  for (std::size_t i = 0; i < f; ++i) {
    m.mlp.w1(i, i) = 1.0;
    m.mlp.w1(f + i, i) = -1.0;
    m.mlp.w3(i, i) = 1.0;
    m.mlp.w3(i, f + i) = -1.0;
  }
  for (std::size_t i = 0; i < 2 * f; ++i) m.mlp.w2(i, i) = 1.0;
}

std::vector<double> pack_info(const std::vector<spectral::HalfSpectrum>& spectra) {
  require(!spectra.empty(), "pack_info: no channels");
  std::size_t n = spectra[0].full_length;
  std::size_t m = n / 2 + 1;
  for (const auto& h : spectra) {
    require(h.full_length == n, "pack_info: inconsistent lengths");
    require(h.values.size() == m, "pack_info: bin count mismatch");
  }
  std::vector<double> z;
  z.reserve(spectra.size() * 2 * m);
  for (const auto& h : spectra) {
    for (std::size_t k = 0; k < m; ++k) z.push_back(h.values[k].real());
    for (std::size_t k = 0; k < m; ++k) z.push_back(h.values[k].imag());
  }
  return z;
}

std::vector<spectral::HalfSpectrum> unpack_info(std::span<const double> z, std::size_t n,
                                                std::size_t c) {
  std::size_t m = n / 2 + 1;
  require(z.size() == c * 2 * m, "unpack_info: length mismatch");
  bool even = (n % 2 == 0);
  std::vector<spectral::HalfSpectrum> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* re = z.data() + ch * 2 * m;
    const double* im = re + m;
    out[ch].full_length = n;
    out[ch].values.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
      bool self_conjugate = (k == 0) || (even && k == n / 2);
      out[ch].values[k] = {re[k], self_conjugate ? 0.0 : im[k]};
    }
  }
  return out;
}

Mat apply_filter(const Mat& k, const Mat& x) {
  require(k.same_shape(x), "apply_filter: shape mismatch");
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = k.data[i] * x.data[i];
  return out;
}

std::vector<double> to_state(const Mat& x) {
  std::vector<double> s(x.rows * x.cols);
  for (std::size_t c = 0; c < x.cols; ++c)
    for (std::size_t i = 0; i < x.rows; ++i) s[c * x.rows + i] = x(i, c);
  return s;
}

Mat to_mat(std::span<const double> state, std::size_t n, std::size_t c) {
  require(state.size() == n * c, "to_mat: length mismatch");
  Mat x(n, c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) x(i, ch) = state[ch * n + i];
  return x;
}

Mat fode_vector_field(const FodeModel& m, const Mat& x, double t, double* residue_out) {
  require(x.rows == m.window_len && x.cols == m.channels, "vector field: shape mismatch");
  std::size_t n = m.window_len, c = m.channels;

  std::vector<spectral::HalfSpectrum> spectra;
  spectra.reserve(c);
  std::vector<double> col(n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < n; ++i) col[i] = x(i, ch);
    spectra.push_back(spectral::rfft_half(col));
  }

  std::vector<double> zin = pack_info(spectra);
  if (m.time_input) zin.push_back(t);
  std::vector<double> zout = nn::mlp_forward(m.mlp, zin);
  std::vector<spectral::HalfSpectrum> rebuilt = unpack_info(zout, n, c);

  Mat out(n, c);
  double residue = 0.0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double r = 0.0;
    std::vector<double> sig = spectral::irfft_half(rebuilt[ch], &r);
    residue = std::max(residue, r);
    for (std::size_t i = 0; i < n; ++i) out(i, ch) = sig[i];
  }
  if (residue_out) *residue_out = residue;
  return out;
}

Mat node_vector_field(const FodeModel& m, const Mat& x, double t) {
  require(x.rows == m.window_len && x.cols == m.channels, "vector field: shape mismatch");
  std::vector<double> state = to_state(x);
  if (m.time_input) state.push_back(t);
  std::vector<double> dx = nn::mlp_forward(m.mlp, state);
  return to_mat(dx, m.window_len, m.channels);
}

Mat vector_field(const FodeModel& m, const Mat& x, double t, double* residue_out) {
  if (m.kind == FieldKind::fode) return fode_vector_field(m, x, t, residue_out);
  if (residue_out) *residue_out = 0.0;
  return node_vector_field(m, x, t);
}

void field_eval_fast(const FodeModel& m, std::span<const double> state, double t,
                     std::span<double> out, FieldScratch& scratch) {
  std::size_t n = m.window_len, c = m.channels;
  require(state.size() == n * c && out.size() == n * c, "field_eval_fast: shape mismatch");
  std::size_t f = m.feat_dim();
  scratch.info.resize(f + (m.time_input ? 1 : 0));
  scratch.gout.resize(f);
  scratch.h1.resize(m.hidden);
  scratch.h2.resize(m.hidden);

  if (m.kind == FieldKind::fode) {
    std::size_t il = m.info_len();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* xs = state.data() + ch * n;
      double* zi = scratch.info.data() + ch * il;
      for (std::size_t r = 0; r < il; ++r) {
        double acc = 0.0;
        const double* pr = m.pack_map.data.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) acc += pr[j] * xs[j];
        zi[r] = acc;
      }
    }
    if (m.time_input) scratch.info[f] = t;
    nn::mlp_forward(m.mlp, scratch.info, scratch.gout, scratch.h1, scratch.h2);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* zo = scratch.gout.data() + ch * il;
      double* os = out.data() + ch * n;
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        const double* sr = m.synth_map.data.data() + r * il;
        for (std::size_t j = 0; j < il; ++j) acc += sr[j] * zo[j];
        os[r] = acc;
      }
    }
  } else {
    std::copy(state.begin(), state.end(), scratch.info.begin());
    if (m.time_input) scratch.info[f] = t;
    nn::mlp_forward(m.mlp, scratch.info, scratch.gout, scratch.h1, scratch.h2);
    std::copy(scratch.gout.begin(), scratch.gout.end(), out.begin());
  }
}

FieldStage stage_field(ad::Tape& tape, const FodeModel& m) {
  FieldStage s;
  s.mlp = nn::stage_mlp(tape, m.mlp);
  return s;
}

ad::NodeId taped_field(ad::Tape& tape, const FodeModel& m, const FieldStage& s,
                       ad::NodeId x, double t) {
  std::size_t n = m.window_len, c = m.channels;
  ad::NodeId zin;
  if (m.kind == FieldKind::fode) {
    std::vector<ad::NodeId> parts;
    for (std::size_t ch = 0; ch < c; ++ch)
      parts.push_back(tape.fixed_matvec(m.pack_map, tape.slice(x, ch * n, n)));
    if (m.time_input) parts.push_back(tape.leaf(std::span<const double>(&t, 1)));
    zin = parts.size() == 1 ? parts[0] : tape.concat(parts);
  } else if (m.time_input) {
    ad::NodeId tleaf = tape.leaf(std::span<const double>(&t, 1));
    std::vector<ad::NodeId> parts{x, tleaf};
    zin = tape.concat(parts);
  } else {
    zin = x;
  }

  ad::NodeId g = nn::mlp_forward(tape, s.mlp, zin);
  if (m.kind != FieldKind::fode) return g;

  std::size_t il = m.info_len();
  std::vector<ad::NodeId> outs;
  for (std::size_t ch = 0; ch < c; ++ch)
    outs.push_back(tape.fixed_matvec(m.synth_map, tape.slice(g, ch * il, il)));
  return outs.size() == 1 ? outs[0] : tape.concat(outs);
}

namespace {

void put_bytes(std::FILE* f, const void* p, std::size_t n) {
  if (std::fwrite(p, 1, n, f) != n) throw std::runtime_error("checkpoint write failed");
}

void get_bytes(std::FILE* f, void* p, std::size_t n) {
  if (std::fread(p, 1, n, f) != n) throw std::runtime_error("checkpoint read failed");
}

void put_u64(std::FILE* f, std::uint64_t v) { put_bytes(f, &v, 8); }
void put_u8(std::FILE* f, std::uint8_t v) { put_bytes(f, &v, 1); }

std::uint64_t get_u64(std::FILE* f) {
  std::uint64_t v;
  get_bytes(f, &v, 8);
  return v;
}

std::uint8_t get_u8(std::FILE* f) {
  std::uint8_t v;
  get_bytes(f, &v, 1);
  return v;
}

void put_tensor(std::FILE* f, const std::string& name, std::span<const std::size_t> dims,
                std::span<const double> data) {
  std::uint16_t nl = static_cast<std::uint16_t>(name.size());
  put_bytes(f, &nl, 2);
  put_bytes(f, name.data(), name.size());
  put_u8(f, static_cast<std::uint8_t>(dims.size()));
  for (std::size_t d : dims) put_u64(f, d);
  put_bytes(f, data.data(), data.size() * sizeof(double));
}

struct TensorIn {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

TensorIn get_tensor(std::FILE* f) {
  TensorIn t;
  std::uint16_t nl;
  get_bytes(f, &nl, 2);
  t.name.resize(nl);
  get_bytes(f, t.name.data(), nl);
  std::uint8_t nd = get_u8(f);
  std::uint64_t total = 1;
  for (std::uint8_t i = 0; i < nd; ++i) {
    t.dims.push_back(get_u64(f));
    total *= t.dims.back();
  }
  if (total > (1ull << 32)) throw std::runtime_error("checkpoint tensor too large");
  t.data.resize(total);
  get_bytes(f, t.data.data(), total * sizeof(double));
  return t;
}

constexpr char kMagic[8] = {'F', 'O', 'D', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

}  // namespace

void save_model(const std::string& path, const FodeModel& m) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  try {
    put_bytes(f, kMagic, 8);
    put_u8(f, kVersion);
    put_u8(f, m.kind == FieldKind::fode ? 0 : 1);
    put_u8(f, m.use_filter ? 1 : 0);
    put_u8(f, static_cast<std::uint8_t>(m.k_init));
    put_u8(f, m.time_input ? 1 : 0);
    put_u64(f, m.window_len);
    put_u64(f, m.channels);
    put_u64(f, m.hidden);
    put_u64(f, m.num_classes);

    std::uint32_t count = 7 + (m.num_classes > 0 ? 2 : 0);
    put_bytes(f, &count, 4);
    const nn::MlpParams& p = m.mlp;
    std::size_t d2[2];
    d2[0] = p.w1.rows; d2[1] = p.w1.cols;
    put_tensor(f, "w1", {d2, 2}, p.w1.data);
    std::size_t d1 = p.b1.size();
    put_tensor(f, "b1", {&d1, 1}, p.b1);
    d2[0] = p.w2.rows; d2[1] = p.w2.cols;
    put_tensor(f, "w2", {d2, 2}, p.w2.data);
    d1 = p.b2.size();
    put_tensor(f, "b2", {&d1, 1}, p.b2);
    d2[0] = p.w3.rows; d2[1] = p.w3.cols;
    put_tensor(f, "w3", {d2, 2}, p.w3.data);
    d1 = p.b3.size();
    put_tensor(f, "b3", {&d1, 1}, p.b3);
    d2[0] = m.filter_k.rows; d2[1] = m.filter_k.cols;
    put_tensor(f, "filter_k", {d2, 2}, m.filter_k.data);
    if (m.num_classes > 0) {
      d2[0] = m.head_w.rows; d2[1] = m.head_w.cols;
      put_tensor(f, "head_w", {d2, 2}, m.head_w.data);
      d1 = m.head_b.size();
      put_tensor(f, "head_b", {&d1, 1}, m.head_b);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
}

FodeModel load_model(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  FodeModel m;
  try {
    char magic[8];
    get_bytes(f, magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("bad checkpoint magic");
    if (get_u8(f) != kVersion) throw std::runtime_error("unsupported checkpoint version");
    m.kind = get_u8(f) == 0 ? FieldKind::fode : FieldKind::node;
    m.use_filter = get_u8(f) != 0;
    m.k_init = static_cast<InitScheme>(get_u8(f));
    m.time_input = get_u8(f) != 0;
    m.window_len = get_u64(f);
    m.channels = get_u64(f);
    m.hidden = get_u64(f);
    m.num_classes = get_u64(f);

    std::uint32_t count;
    get_bytes(f, &count, 4);
    std::size_t fdim = m.feat_dim();
    m.mlp.in_dim = fdim + (m.time_input ? 1 : 0);
    m.mlp.hidden = m.hidden;
    m.mlp.out_dim = fdim;
    for (std::uint32_t i = 0; i < count; ++i) {
      TensorIn t = get_tensor(f);
      auto as_mat = [&](std::size_t rows, std::size_t cols) {
        if (t.dims.size() != 2 || t.dims[0] != rows || t.dims[1] != cols)
          throw std::runtime_error("checkpoint tensor shape mismatch: " + t.name);
        Mat mm(rows, cols);
        mm.data = t.data;
        return mm;
      };
      auto as_vec = [&](std::size_t len) {
        if (t.dims.size() != 1 || t.dims[0] != len)
          throw std::runtime_error("checkpoint tensor shape mismatch: " + t.name);
        return t.data;
      };
      if (t.name == "w1") m.mlp.w1 = as_mat(m.hidden, m.mlp.in_dim);
      else if (t.name == "b1") m.mlp.b1 = as_vec(m.hidden);
      else if (t.name == "w2") m.mlp.w2 = as_mat(m.hidden, m.hidden);
      else if (t.name == "b2") m.mlp.b2 = as_vec(m.hidden);
      else if (t.name == "w3") m.mlp.w3 = as_mat(fdim, m.hidden);
      else if (t.name == "b3") m.mlp.b3 = as_vec(fdim);
      else if (t.name == "filter_k") m.filter_k = as_mat(m.window_len, m.channels);
      else if (t.name == "head_w") m.head_w = as_mat(m.num_classes, m.channels);
      else if (t.name == "head_b") m.head_b = as_vec(m.num_classes);
      else throw std::runtime_error("unknown checkpoint tensor: " + t.name);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  m.pack_map = build_pack_map(m.window_len);
  m.synth_map = build_synth_map(m.window_len);
  return m;
}

}  // namespace fode
