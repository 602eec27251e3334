#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace magtach::fft {

using Complex = std::complex<double>;

/// Forward real-to-complex transform of `input` zero-padded to `nfft` points.
/// Unnormalized (matches the usual FFTW/numpy convention). Returns nfft/2+1 bins.
std::vector<Complex> rfft(std::span<const double> input, std::size_t nfft);

inline std::vector<Complex> rfft(std::span<const double> input) {
  return rfft(input, input.size());
}

/// Inverse of rfft for an `n`-point real signal, scaled by 1/n.
std::vector<double> irfft(std::span<const Complex> bins, std::size_t n);

/// Linear (non-circular) cross-correlation c[τ] = Σ_t a[t+τ]·b[t] for
/// τ ∈ [−max_lag, max_lag]; index 0 of the result is τ = −max_lag.
std::vector<double> cross_correlation(std::span<const double> a,
                                      std::span<const double> b,
                                      std::size_t max_lag);

} // namespace magtach::fft
