#include "fode/spectral.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace fode::spectral {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

bool is_pow2(std::size_t n) { return std::has_single_bit(n); }

void check_nonempty(std::size_t n) {
  if (n == 0) throw std::invalid_argument("spectral: empty input");
}

}  // namespace

CSeq dft_naive(const CSeq& x) {
  check_nonempty(x.size());
  const std::size_t n = x.size();
  CSeq out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx acc{0.0, 0.0};
    for (std::size_t j = 0; j < n; ++j) {
      // reduce k*j mod N before forming the angle to keep it small
      double ang = -kTwoPi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      acc += x[j] * cplx{std::cos(ang), std::sin(ang)};
    }
    out[k] = acc;
  }
  return out;
}

CSeq fft(const CSeq& x) {
  check_nonempty(x.size());
  const std::size_t n = x.size();
  if (!is_pow2(n)) return dft_naive(x);
  CSeq a = x;
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t j = 0; j < half; ++j) {
      double ang = -kTwoPi * static_cast<double>(j) / static_cast<double>(len);
      cplx w{std::cos(ang), std::sin(ang)};
      for (std::size_t i = j; i < n; i += len) {
        cplx u = a[i];
        cplx v = a[i + half] * w;
        a[i] = u + v;
        a[i + half] = u - v;
      }
    }
  }
  return a;
}

CSeq ifft(const CSeq& X) {
  check_nonempty(X.size());
  const std::size_t n = X.size();
  CSeq c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = std::conj(X[i]);
  c = fft(c);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = std::conj(c[i]) * inv;
  return c;
}

HalfSpectrum rfft_half(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("rfft_half: need N >= 2");
  const std::size_t n = x.size();
  CSeq cx(n);
  for (std::size_t i = 0; i < n; ++i) cx[i] = cplx{x[i], 0.0};
  CSeq X = fft(cx);
  HalfSpectrum h;
  h.full_length = n;
  h.values.assign(X.begin(), X.begin() + static_cast<std::ptrdiff_t>(half_bins(n)));
  // these are exactly zero in exact arithmetic; pin them so the invariant holds
  h.values[0] = cplx{h.values[0].real(), 0.0};
  if (n % 2 == 0) {
    cplx& ny = h.values[h.values.size() - 1];
    ny = cplx{ny.real(), 0.0};
  }
  return h;
}

void validate(const HalfSpectrum& Z) {
  const std::size_t n = Z.full_length;
  if (n < 1 || Z.values.size() != half_bins(n))
    throw std::invalid_argument("HalfSpectrum: bin count does not match full_length");
  for (const cplx& v : Z.values)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
      throw std::invalid_argument("HalfSpectrum: non-finite entry");
  if (Z.values[0].imag() != 0.0)
    throw std::invalid_argument("HalfSpectrum: nonzero imaginary part at bin 0");
  if (n % 2 == 0 && Z.values.back().imag() != 0.0)
    throw std::invalid_argument("HalfSpectrum: nonzero imaginary part at Nyquist bin");
}

std::vector<double> irfft_half(const HalfSpectrum& Z, double* imag_residue_out) {
  validate(Z);
  const std::size_t n = Z.full_length;
  const std::size_t m = half_bins(n);
  CSeq full(n);
  for (std::size_t k = 0; k < m; ++k) full[k] = Z.values[k];
  for (std::size_t k = m; k < n; ++k) full[k] = std::conj(Z.values[n - k]);
  CSeq z = ifft(full);
  double residue = 0.0;
  for (const cplx& v : z) residue = std::max(residue, std::fabs(v.imag()));
  if (imag_residue_out) *imag_residue_out = residue;
  if (residue >= 1e-12)
    throw std::runtime_error("irfft_half: imaginary residue " + std::to_string(residue));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = z[i].real();
  return out;
}

Spectrogram stft(std::span<const double> x, std::size_t window_len, std::size_t hop) {
  if (window_len < 2) throw std::invalid_argument("stft: window_len < 2");
  if (hop < 1) throw std::invalid_argument("stft: hop < 1");
  if (window_len > x.size()) throw std::invalid_argument("stft: window longer than signal");
  const std::size_t n_frames = (x.size() - window_len) / hop + 1;
  const std::size_t n_bins = half_bins(window_len);
  // periodic Hann
  std::vector<double> w(window_len);
  for (std::size_t i = 0; i < window_len; ++i)
    w[i] = 0.5 * (1.0 - std::cos(kTwoPi * static_cast<double>(i) / static_cast<double>(window_len)));
  Spectrogram s;
  s.window_len = window_len;
  s.hop = hop;
  s.frames = Mat(n_frames, n_bins);
  std::vector<double> frame(window_len);
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < window_len; ++i) frame[i] = x[start + i] * w[i];
    HalfSpectrum h = rfft_half(frame);
    for (std::size_t b = 0; b < n_bins; ++b) s.frames(f, b) = std::abs(h.values[b]);
  }
  return s;
}

void write_spectrogram_csv(const Spectrogram& s, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fprintf(f, "frame,bin,magnitude\n");
  for (std::size_t r = 0; r < s.frames.rows; ++r)
    for (std::size_t b = 0; b < s.frames.cols; ++b)
      std::fprintf(f, "%zu,%zu,%.17g\n", r, b, s.frames(r, b));
  std::fclose(f);
}

}  // namespace fode::spectral
