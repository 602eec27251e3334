#pragma once

#include "magtach/signal_model.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace magtach {

struct PowerSpectrum {
  std::vector<double> frequencies; // Hz, uniform
  std::vector<double> densities;   // power/Hz, or unitless in [0,1] when normalized
  double resolution_hz = 0.0;
  bool normalized = false;

  [[nodiscard]] std::size_t size() const { return densities.size(); }
};

/// Magnitude spectrum |FFT[n(t)]| of a background capture, one value per rfft
/// bin of a `signal_length`-sample signal.
struct NoiseReference {
  std::size_t signal_length = 0;
  std::vector<double> magnitudes;

  /// All-ones reference: spectral_denoise becomes the identity.
  static NoiseReference unit(std::size_t signal_length);
};

/// Averages |FFT| over consecutive `signal_length` frames of `background`.
NoiseReference make_noise_reference(std::span<const double> background,
                                    std::size_t signal_length);

/// IFFT(FFT[s] / max(|N|, 1)): divides by noise magnitude only, keeps phase.
std::vector<double> spectral_denoise(std::span<const double> channel, const NoiseReference &noise);

/// Lag τ ∈ [−max_lag, max_lag] maximizing Σ s_i(t+τ)·s_ref(t); shifting s_i by
/// τ aligns it to s_ref. Exact ties go to the smallest |τ|.
long long estimate_delay(std::span<const double> s_i, std::span<const double> s_ref,
                         std::size_t max_lag);

/// out[t] = s[t + lag], zero outside the input.
std::vector<double> shift_signal(std::span<const double> s, long long lag);

struct DelayAndSumResult {
  std::vector<double> enhanced;
  std::vector<long long> lags; // per channel, lags[0] == 0
};

/// Algorithm: denoise every channel, align each to channel 0, sum.
DelayAndSumResult delay_and_sum_detailed(const SensorTrace &trace, const NoiseReference &noise,
                                         std::size_t max_lag);

inline std::vector<double> delay_and_sum(const SensorTrace &trace, const NoiseReference &noise,
                                         std::size_t max_lag) {
  return delay_and_sum_detailed(trace, noise, max_lag).enhanced;
}

enum class Window { Hann, Rectangular };

Window parse_window(const std::string &name);
std::vector<double> make_window(Window window, std::size_t length);

/// One-sided Welch estimate with density scaling: each segment's periodogram is
/// |FFT(w·x)|² / (fs·Σw²), doubled off DC/Nyquist, then averaged.
/// resolution_hz = fs / segment_len.
PowerSpectrum welch_psd(std::span<const double> signal, double fs, std::size_t segment_len,
                        double overlap_fraction = 0.5, Window window = Window::Hann);

/// First `bins` bins of a spectrum.
PowerSpectrum crop_spectrum(const PowerSpectrum &psd, std::size_t bins);

/// log(d + ε) then min-max to [0,1]. ε defaults to 1e-12·max(d); a constant
/// spectrum maps to all zeros.
PowerSpectrum log_normalize(const PowerSpectrum &psd);
PowerSpectrum log_normalize(const PowerSpectrum &psd, double epsilon);

/// Band-limited (Kaiser-windowed sinc) resampling to round(n·factor) samples.
/// Read at the original sample rate, a tone at f moves to f/factor.
std::vector<double> resample(std::span<const double> signal, double factor);

/// Welch-averaged periodogram (same segmentation/window/scaling as welch_psd)
/// evaluated at arbitrary frequencies via a direct DTFT per segment.
std::vector<double> welch_at(std::span<const double> signal, double fs, std::size_t segment_len,
                             double overlap_fraction, Window window,
                             std::span<const double> frequencies_hz);

} // namespace magtach
