#include "magtach/signal_model.hpp"

#include "magtach/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <string>

namespace magtach {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double highest_frequency(const MotorProfile &p) {
  return static_cast<double>(p.max_harmonic()) / p.period_s;
}

void check_sampling(const MotorProfile &profile, double duration_s, double fs) {
  profile.validate();
  require(duration_s > 0.0, "duration must be positive");
  require(fs > 0.0, "sample rate must be positive");
  require(fs > 2.0 * highest_frequency(profile),
          "sample rate " + std::to_string(fs) + " Hz violates Nyquist for harmonic at " +
              std::to_string(highest_frequency(profile)) + " Hz");
}

double rms(std::span<const double> s) {
  double acc = 0.0;
  for (double v : s) {
    acc += v * v;
  }
  return s.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(s.size()));
}

} // namespace

double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

int MotorProfile::max_harmonic() const {
  int m = 0;
  for (const auto &h : harmonics) {
    m = std::max(m, h.k);
  }
  return m;
}

void MotorProfile::validate() const {
  require(period_s > 0.0 && std::isfinite(period_s), "motor period must be positive");
  require(pole_count >= 1, "pole count must be at least 1");
  std::set<int> seen;
  for (const auto &h : harmonics) {
    require(h.k >= 1, "harmonic multiple k must be >= 1");
    require(seen.insert(h.k).second, "duplicate harmonic multiple k=" + std::to_string(h.k));
    require(std::isfinite(h.amplitude) && std::isfinite(h.phase), "harmonic values must be finite");
  }
}

void CoilParams::validate() const {
  require(mu0 > 0.0 && mu_r > 0.0 && turns > 0 && area_m2 > 0.0,
          "coil parameters must be strictly positive");
}

void ArrayGeometry::validate() const {
  require(!sensors.empty(), "array needs at least one sensor");
  require(effective_speed_cm_s > 0.0, "effective propagation speed must be positive");
  require(reference_distance_cm > 0.0, "reference distance must be positive");
  require(falloff_exponent >= 2.0, "amplitude falloff exponent must be >= 2");
  require(min_distance_cm > 0.0, "minimum distance must be positive");
}

void NoiseProfile::validate() const {
  for (const auto &m : mains) {
    require(m.frequency_hz > 0.0, "mains frequency must be positive");
  }
  require(broadband_sigma >= 0.0, "broadband sigma must be non-negative");
  require(shared_fraction >= 0.0 && shared_fraction <= 1.0, "shared fraction must lie in [0,1]");
}

double NoiseProfile::analytic_rms() const {
  double power = broadband_sigma * broadband_sigma;
  for (const auto &m : mains) {
    power += 0.5 * m.amplitude * m.amplitude;
  }
  return std::sqrt(power);
}

void SensorTrace::validate() const {
  require(sample_rate_hz > 0.0, "trace sample rate must be positive");
  for (const auto &c : channels) {
    require(c.size() == length(), "trace channels must share one length");
  }
}

std::size_t sample_count(double duration_s, double fs) {
  return static_cast<std::size_t>(std::llround(duration_s * fs));
}

std::vector<double> synthesize_field(const MotorProfile &profile, double duration_s, double fs) {
  check_sampling(profile, duration_s, fs);
  const auto n = sample_count(duration_s, fs);
  std::vector<double> out(n, profile.dc_offset);
  for (const auto &h : profile.harmonics) {
    const double w = kTwoPi * h.k / profile.period_s;
    for (std::size_t j = 0; j < n; ++j) {
      const double t = static_cast<double>(j) / fs;
      out[j] += h.amplitude * std::cos(w * t - h.phase);
    }
  }
  return out;
}

std::vector<double> induce_voltage_delayed(const MotorProfile &profile, const CoilParams &coil,
                                           std::size_t count, double fs,
                                           long long delay_samples, double gain) {
  coil.validate();
  std::vector<double> out(count, 0.0);
  const double c = coil.gain() * gain;
  for (const auto &h : profile.harmonics) {
    const double w = kTwoPi * h.k / profile.period_s;
    const double amp = c * h.amplitude * w;
    if (amp == 0.0) {
      continue;
    }
    for (std::size_t j = 0; j < count; ++j) {
      const double t =
          static_cast<double>(static_cast<long long>(j) - delay_samples) / fs;
      out[j] += amp * std::sin(w * t - h.phase);
    }
  }
  return out;
}

std::vector<double> induce_voltage(const MotorProfile &profile, const CoilParams &coil,
                                   double duration_s, double fs) {
  check_sampling(profile, duration_s, fs);
  return induce_voltage_delayed(profile, coil, sample_count(duration_s, fs), fs, 0, 1.0);
}

double apply_path_loss(double amplitude, double distance_cm, const ArrayGeometry &geometry) {
  require(distance_cm > 0.0, "path loss distance must be positive");
  return amplitude *
         std::pow(geometry.reference_distance_cm / distance_cm, geometry.falloff_exponent);
}

std::vector<double> sensor_delays(const MotorProfile &source, const ArrayGeometry &geometry) {
  geometry.validate();
  std::vector<double> delays;
  const double d0 =
      std::max(distance(source.position, geometry.sensors[0]), geometry.min_distance_cm);
  for (const auto &s : geometry.sensors) {
    const double d = std::max(distance(source.position, s), geometry.min_distance_cm);
    delays.push_back((d - d0) / geometry.effective_speed_cm_s);
  }
  return delays;
}

double calibrate_effective_speed(const ArrayGeometry &geometry, Point2 point, double delay_s) {
  require(geometry.sensors.size() >= 2, "calibration needs two sensors");
  require(delay_s != 0.0, "calibration delay must be nonzero");
  const double diff =
      distance(point, geometry.sensors[1]) - distance(point, geometry.sensors[0]);
  require(diff / delay_s > 0.0, "calibration point and delay imply a non-positive speed");
  return diff / delay_s;
}

SensorTrace simulate_array(std::span<const MotorProfile> sources, const ArrayGeometry &geometry,
                           const NoiseProfile &noise, const CoilParams &coil, double duration_s,
                           double fs, std::uint64_t seed) {
  geometry.validate();
  noise.validate();
  coil.validate();
  require(duration_s > 0.0 && fs > 0.0, "duration and sample rate must be positive");
  for (const auto &src : sources) {
    check_sampling(src, duration_s, fs);
  }
  const auto n = sample_count(duration_s, fs);
  const auto m = geometry.sensors.size();

  SensorTrace trace;
  trace.sample_rate_hz = fs;
  trace.channels.assign(m, std::vector<double>(n, 0.0));

  for (const auto &src : sources) {
    const auto delays = sensor_delays(src, geometry);
    for (std::size_t i = 0; i < m; ++i) {
      const double d =
          std::max(distance(src.position, geometry.sensors[i]), geometry.min_distance_cm);
      const double gain = apply_path_loss(1.0, d, geometry);
      const auto shift = std::llround(delays[i] * fs);
      const auto v = induce_voltage_delayed(src, coil, n, fs, shift, gain);
      for (std::size_t j = 0; j < n; ++j) {
        trace.channels[i][j] += v[j];
      }
    }
  }

  // Draw order is fixed: mains phases, shared noise, then per-channel noise.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase_dist(0.0, kTwoPi);
  std::vector<double> mains(n, 0.0);
  for (const auto &tone : noise.mains) {
    const double phase = phase_dist(rng);
    const double w = kTwoPi * tone.frequency_hz;
    for (std::size_t j = 0; j < n; ++j) {
      mains[j] += tone.amplitude * std::sin(w * static_cast<double>(j) / fs + phase);
    }
  }
  if (noise.broadband_sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double shared_scale = noise.broadband_sigma * std::sqrt(noise.shared_fraction);
    const double own_scale = noise.broadband_sigma * std::sqrt(1.0 - noise.shared_fraction);
    std::vector<double> shared(n);
    for (auto &v : shared) {
      v = shared_scale * gauss(rng);
    }
    for (std::size_t i = 0; i < m; ++i) {
      auto &ch = trace.channels[i];
      for (std::size_t j = 0; j < n; ++j) {
        ch[j] += mains[j] + shared[j] + own_scale * gauss(rng);
      }
    }
  } else if (!noise.mains.empty()) {
    for (auto &ch : trace.channels) {
      for (std::size_t j = 0; j < n; ++j) {
        ch[j] += mains[j];
      }
    }
  }
  return trace;
}

double compute_ser(std::span<const double> s1, std::span<const double> s2, double delta_t_s,
                   double fs) {
  require(s1.size() == s2.size(), "SER inputs must have equal length");
  require(fs > 0.0, "sample rate must be positive");
  const auto len = static_cast<long long>(s1.size());
  const auto shift = std::llround(delta_t_s * fs);
  require(std::llabs(shift) < len, "SER delay exceeds signal length");
  const long long begin = std::max(0LL, -shift);
  const long long end = std::min(len, len - shift);
  const auto count = static_cast<std::size_t>(end - begin);
  const auto a = s1.subspan(static_cast<std::size_t>(begin), count);
  const auto b = s2.subspan(static_cast<std::size_t>(begin + shift), count);
  std::vector<double> sum(count);
  for (std::size_t j = 0; j < count; ++j) {
    sum[j] = a[j] + b[j];
  }
  const double denom = rms(a) + rms(b);
  if (!(denom > 0.0)) {
    fail(ErrorKind::InvalidInput, "SER undefined: both signals have zero RMS");
  }
  return rms(sum) / denom;
}

double resonance_capacitance(double f_m_hz, double inductance_h) {
  require(f_m_hz > 0.0 && inductance_h > 0.0, "resonance inputs must be positive");
  return 1.0 / (4.0 * std::numbers::pi * std::numbers::pi * f_m_hz * f_m_hz * inductance_h);
}

} // namespace magtach
