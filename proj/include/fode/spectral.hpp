#pragma once

#include <complex>
#include <span>
#include <vector>

#include "fode/mat.hpp"

namespace fode::spectral {

using cplx = std::complex<double>;
using CSeq = std::vector<cplx>;

// Bins 0..floor(N/2) of a real signal's DFT. The discarded half follows from
// X[N-k] = conj(X[k]).
struct HalfSpectrum {
  CSeq values;
  std::size_t full_length = 0;
};

struct Spectrogram {
  Mat frames;  // magnitudes, frame x frequency bin
  std::size_t window_len = 0;
  std::size_t hop = 0;
};

inline std::size_t half_bins(std::size_t n) { return n / 2 + 1; }

// Direct O(N^2) evaluation of X[k] = sum_n x[n] e^{-i 2 pi k n / N}.
// Oracle for fft().
CSeq dft_naive(const CSeq& x);

// Radix-2 iterative FFT for power-of-two N, dft_naive otherwise.
CSeq fft(const CSeq& x);

// x[n] = (1/N) sum_k X[k] e^{+i 2 pi k n / N}
CSeq ifft(const CSeq& X);

// Real input, N >= 2. Keeps bins 0..floor(N/2); imag parts at bin 0 and (for
// even N) Nyquist are exactly zero.
HalfSpectrum rfft_half(std::span<const double> x);

// Mirrors conjugates to full length, inverse transforms, returns real parts.
// Throws if the HalfSpectrum invariants are violated or if the residual
// imaginary magnitude reaches 1e-12. The residual is written to
// *imag_residue_out when given.
std::vector<double> irfft_half(const HalfSpectrum& Z, double* imag_residue_out = nullptr);

void validate(const HalfSpectrum& Z);

// Hann-windowed magnitude spectrogram. frame count = floor((len-window)/hop)+1.
Spectrogram stft(std::span<const double> x, std::size_t window_len, std::size_t hop);

void write_spectrogram_csv(const Spectrogram& s, const std::string& path);

}  // namespace fode::spectral
