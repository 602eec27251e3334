#include "magtach/dsp.hpp"

#include "magtach/error.hpp"
#include "magtach/fft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

namespace magtach {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Segmentation {
  std::size_t step = 0;
  std::size_t count = 0;
};

Segmentation segment_signal(std::size_t length, std::size_t segment_len, double overlap) {
  require(segment_len > 0, "Welch segment length must be positive");
  require(overlap >= 0.0 && overlap < 1.0, "Welch overlap must lie in [0,1)");
  require(length >= segment_len, "signal of " + std::to_string(length) +
                                     " samples is shorter than one Welch segment of " +
                                     std::to_string(segment_len));
  const auto noverlap =
      static_cast<std::size_t>(std::llround(overlap * static_cast<double>(segment_len)));
  const auto step = std::max<std::size_t>(segment_len - std::min(noverlap, segment_len - 1), 1);
  return {step, (length - segment_len) / step + 1};
}

double window_power(std::span<const double> w) {
  double acc = 0.0;
  for (double v : w) {
    acc += v * v;
  }
  return acc;
}

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double t = 1.0 - x * x;
  if (t <= 0.0) {
    return 0.0;
  }
  return std::cyl_bessel_i(0.0, beta * std::sqrt(t)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) {
    return 1.0;
  }
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

} // namespace

NoiseReference NoiseReference::unit(std::size_t signal_length) {
  return {signal_length, std::vector<double>(signal_length / 2 + 1, 1.0)};
}

NoiseReference make_noise_reference(std::span<const double> background,
                                    std::size_t signal_length) {
  require(signal_length > 0, "noise reference length must be positive");
  require(background.size() >= signal_length,
          "background capture is shorter than the signal length");
  const auto frames = background.size() / signal_length;
  NoiseReference ref{signal_length, std::vector<double>(signal_length / 2 + 1, 0.0)};
  for (std::size_t f = 0; f < frames; ++f) {
    const auto spec = fft::rfft(background.subspan(f * signal_length, signal_length));
    for (std::size_t k = 0; k < spec.size(); ++k) {
      ref.magnitudes[k] += std::abs(spec[k]);
    }
  }
  for (auto &m : ref.magnitudes) {
    m /= static_cast<double>(frames);
  }
  return ref;
}

std::vector<double> spectral_denoise(std::span<const double> channel, const NoiseReference &noise) {
  require(channel.size() == noise.signal_length &&
              noise.magnitudes.size() == noise.signal_length / 2 + 1,
          "noise reference built for " + std::to_string(noise.signal_length) +
              " samples cannot denoise a " + std::to_string(channel.size()) + "-sample signal");
  auto spec = fft::rfft(channel);
  for (std::size_t k = 0; k < spec.size(); ++k) {
    // spectral floor: magnitudes below 1 count as 1
    spec[k] /= std::max(noise.magnitudes[k], 1.0);
  }
  return fft::irfft(spec, channel.size());
}

long long estimate_delay(std::span<const double> s_i, std::span<const double> s_ref,
                         std::size_t max_lag) {
  require(s_i.size() == s_ref.size(), "delay estimation needs equal-length signals");
  require(2 * max_lag < s_i.size(), "max_lag must be below half the signal length");
  const auto energy = [](std::span<const double> s) {
    double e = 0.0;
    for (double v : s) {
      e += v * v;
    }
    return e;
  };
  if (!(energy(s_i) > 0.0) || !(energy(s_ref) > 0.0)) {
    fail(ErrorKind::InvalidInput, "delay estimation on a zero-energy signal");
  }
  const auto corr = fft::cross_correlation(s_i, s_ref, max_lag);
  const double best = *std::max_element(corr.begin(), corr.end());
  const double tol = 1e-12 * std::max(std::abs(best), 1e-300);
  long long chosen = 0;
  bool found = false;
  const auto lag_of = [&](std::size_t idx) {
    return static_cast<long long>(idx) - static_cast<long long>(max_lag);
  };
  for (std::size_t idx = 0; idx < corr.size(); ++idx) {
    if (corr[idx] < best - tol) {
      continue;
    }
    const auto lag = lag_of(idx);
    // scan runs from negative to positive lags, so equal |lag| keeps the negative one
    if (!found || std::llabs(lag) < std::llabs(chosen)) {
      chosen = lag;
      found = true;
    }
  }
  return chosen;
}

std::vector<double> shift_signal(std::span<const double> s, long long lag) {
  const auto n = static_cast<long long>(s.size());
  std::vector<double> out(s.size(), 0.0);
  for (long long t = 0; t < n; ++t) {
    const long long src = t + lag;
    if (src >= 0 && src < n) {
      out[static_cast<std::size_t>(t)] = s[static_cast<std::size_t>(src)];
    }
  }
  return out;
}

DelayAndSumResult delay_and_sum_detailed(const SensorTrace &trace, const NoiseReference &noise,
                                         std::size_t max_lag) {
  trace.validate();
  require(trace.channel_count() >= 1, "delay-and-sum needs at least one channel");
  std::vector<std::vector<double>> denoised;
  denoised.reserve(trace.channel_count());
  for (const auto &ch : trace.channels) {
    denoised.push_back(spectral_denoise(ch, noise));
  }
  DelayAndSumResult result;
  result.enhanced = denoised[0];
  result.lags.push_back(0);
  for (std::size_t i = 1; i < denoised.size(); ++i) {
    const auto lag = estimate_delay(denoised[i], denoised[0], max_lag);
    result.lags.push_back(lag);
    const auto aligned = shift_signal(denoised[i], lag);
    for (std::size_t t = 0; t < aligned.size(); ++t) {
      result.enhanced[t] += aligned[t];
    }
  }
  return result;
}

Window parse_window(const std::string &name) {
  if (name == "hann") {
    return Window::Hann;
  }
  if (name == "rect" || name == "rectangular" || name == "boxcar") {
    return Window::Rectangular;
  }
  fail(ErrorKind::Config, "unknown window '" + name + "'");
}

std::vector<double> make_window(Window window, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (window == Window::Hann && length > 1) {
    // periodic Hann, the usual spectral-analysis choice
    for (std::size_t n = 0; n < length; ++n) {
      w[n] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / static_cast<double>(length));
    }
  }
  return w;
}

PowerSpectrum welch_psd(std::span<const double> signal, double fs, std::size_t segment_len,
                        double overlap_fraction, Window window) {
  require(fs > 0.0, "sample rate must be positive");
  const auto seg = segment_signal(signal.size(), segment_len, overlap_fraction);
  const auto w = make_window(window, segment_len);
  const double scale = 1.0 / (fs * window_power(w));
  const auto bins = segment_len / 2 + 1;

  PowerSpectrum psd;
  psd.resolution_hz = fs / static_cast<double>(segment_len);
  psd.frequencies.resize(bins);
  psd.densities.assign(bins, 0.0);
  for (std::size_t k = 0; k < bins; ++k) {
    psd.frequencies[k] = static_cast<double>(k) * psd.resolution_hz;
  }
  std::vector<double> buf(segment_len);
  for (std::size_t s = 0; s < seg.count; ++s) {
    const auto *x = signal.data() + s * seg.step;
    for (std::size_t n = 0; n < segment_len; ++n) {
      buf[n] = w[n] * x[n];
    }
    const auto spec = fft::rfft(buf);
    for (std::size_t k = 0; k < bins; ++k) {
      psd.densities[k] += std::norm(spec[k]);
    }
  }
  const bool even = segment_len % 2 == 0;
  for (std::size_t k = 0; k < bins; ++k) {
    double v = psd.densities[k] * scale / static_cast<double>(seg.count);
    const bool edge = k == 0 || (even && k == bins - 1);
    psd.densities[k] = edge ? v : 2.0 * v;
  }
  return psd;
}

PowerSpectrum crop_spectrum(const PowerSpectrum &psd, std::size_t bins) {
  require(bins <= psd.size(), "cannot crop a spectrum of " + std::to_string(psd.size()) +
                                  " bins to " + std::to_string(bins));
  PowerSpectrum out = psd;
  out.frequencies.resize(bins);
  out.densities.resize(bins);
  return out;
}

PowerSpectrum log_normalize(const PowerSpectrum &psd) {
  double peak = 0.0;
  for (double d : psd.densities) {
    peak = std::max(peak, d);
  }
  return log_normalize(psd, 1e-12 * peak);
}

PowerSpectrum log_normalize(const PowerSpectrum &psd, double epsilon) {
  PowerSpectrum out = psd;
  out.normalized = true;
  if (out.densities.empty()) {
    return out;
  }
  for (double d : psd.densities) {
    require(d >= 0.0, "log_normalize needs non-negative densities");
  }
  double peak = *std::max_element(psd.densities.begin(), psd.densities.end());
  if (!(peak + epsilon > 0.0)) {
    std::fill(out.densities.begin(), out.densities.end(), 0.0);
    return out;
  }
  // zeros with ε = 0 would give −∞; clamp them to the smallest positive log
  double floor_log = std::numeric_limits<double>::infinity();
  for (double d : psd.densities) {
    if (d + epsilon > 0.0) {
      floor_log = std::min(floor_log, std::log(d + epsilon));
    }
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (auto &d : out.densities) {
    d = d + epsilon > 0.0 ? std::log(d + epsilon) : floor_log;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  const double range = hi - lo;
  for (auto &d : out.densities) {
    d = range > 0.0 ? (d - lo) / range : 0.0;
  }
  return out;
}

std::vector<double> resample(std::span<const double> signal, double factor) {
  require(factor > 0.0 && std::isfinite(factor), "resample factor must be positive");
  if (factor == 1.0) {
    return {signal.begin(), signal.end()};
  }
  constexpr int kZeroCrossings = 32;
  constexpr int kTableDensity = 4096; // table entries per zero crossing
  constexpr double kBeta = 8.6;
  // h(u) = sinc(u)·kaiser(u/Z) for u in zero-crossing units, tabulated once
  static const std::vector<double> table = [] {
    std::vector<double> t(kZeroCrossings * kTableDensity + 2, 0.0);
    for (std::size_t i = 0; i + 1 < t.size(); ++i) {
      const double u = static_cast<double>(i) / kTableDensity;
      t[i] = sinc(u) * kaiser(u / kZeroCrossings, kBeta);
    }
    return t;
  }();
  const auto kernel = [](double u) {
    const double pos = std::abs(u) * kTableDensity;
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= table.size()) {
      return 0.0;
    }
    const double frac = pos - static_cast<double>(i);
    return table[i] + frac * (table[i + 1] - table[i]);
  };

  const auto n_in = static_cast<long long>(signal.size());
  const auto n_out =
      static_cast<std::size_t>(std::llround(static_cast<double>(signal.size()) * factor));
  const double cutoff = std::min(1.0, factor); // anti-alias when shrinking
  const double half_width = kZeroCrossings / cutoff;
  std::vector<double> out(n_out, 0.0);
  for (std::size_t j = 0; j < n_out; ++j) {
    const double x = static_cast<double>(j) / factor;
    const auto first = std::max(0LL, static_cast<long long>(std::ceil(x - half_width)));
    const auto last = std::min(n_in - 1, static_cast<long long>(std::floor(x + half_width)));
    double acc = 0.0;
    for (long long n = first; n <= last; ++n) {
      const double d = x - static_cast<double>(n);
      acc += signal[static_cast<std::size_t>(n)] * kernel(cutoff * d);
    }
    out[j] = cutoff * acc;
  }
  return out;
}

std::vector<double> welch_at(std::span<const double> signal, double fs, std::size_t segment_len,
                             double overlap_fraction, Window window,
                             std::span<const double> frequencies_hz) {
  require(fs > 0.0, "sample rate must be positive");
  const auto seg = segment_signal(signal.size(), segment_len, overlap_fraction);
  const auto w = make_window(window, segment_len);
  const double scale = 1.0 / (fs * window_power(w));
  std::vector<double> out(frequencies_hz.size(), 0.0);
  std::vector<double> buf(segment_len);
  for (std::size_t s = 0; s < seg.count; ++s) {
    const auto *x = signal.data() + s * seg.step;
    for (std::size_t n = 0; n < segment_len; ++n) {
      buf[n] = w[n] * x[n];
    }
    for (std::size_t q = 0; q < frequencies_hz.size(); ++q) {
      const double omega = kTwoPi * frequencies_hz[q] / fs;
      // phasor recurrence, re-anchored every block to bound rounding drift
      constexpr std::size_t kBlock = 1024;
      std::complex<double> acc = 0.0;
      const std::complex<double> step = std::polar(1.0, -omega);
      for (std::size_t b = 0; b < segment_len; b += kBlock) {
        std::complex<double> z = std::polar(1.0, -omega * static_cast<double>(b));
        const auto end = std::min(segment_len, b + kBlock);
        for (std::size_t n = b; n < end; ++n) {
          acc += buf[n] * z;
          z *= step;
        }
      }
      out[q] += std::norm(acc);
    }
  }
  for (std::size_t q = 0; q < out.size(); ++q) {
    const double f = frequencies_hz[q];
    const bool interior = f > 0.0 && f < fs / 2.0;
    out[q] *= scale / static_cast<double>(seg.count) * (interior ? 2.0 : 1.0);
  }
  return out;
}

} // namespace magtach
