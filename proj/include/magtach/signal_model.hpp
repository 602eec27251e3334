#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace magtach {

struct Point2 {
  double x = 0.0; // cm
  double y = 0.0; // cm
};

double distance(Point2 a, Point2 b);

struct Harmonic {
  int k = 1;            // integer multiple of the rotation frequency
  double amplitude = 0; // D_k, field units
  double phase = 0;     // φ_k, radians
};

/// Ground-truth rotating source. The field seen by a sensor is
/// B(t) = dc_offset + Σ D_k cos(2πk t / P − φ_k).
struct MotorProfile {
  double period_s = 1.0 / 94.0;
  double dc_offset = 0.0;
  std::vector<Harmonic> harmonics;
  int pole_count = 1;
  Point2 position;

  [[nodiscard]] double fundamental_hz() const { return 1.0 / period_s; }
  [[nodiscard]] double rpm() const { return 60.0 / period_s; }
  [[nodiscard]] int max_harmonic() const;

  /// Throws InvalidInput when an invariant does not hold.
  void validate() const;
};

struct CoilParams {
  double mu0 = 1.25663706212e-6; // H/m
  double mu_r = 200.0;
  int turns = 3500;
  double area_m2 = 3.1415e-4;

  [[nodiscard]] double gain() const { return mu0 * mu_r * turns * area_m2; }
  void validate() const;
};

struct ArrayGeometry {
  std::vector<Point2> sensors;
  double effective_speed_cm_s = 1143.5;
  double reference_distance_cm = 5.0;
  double falloff_exponent = 2.0;
  // Source-sensor distances are clamped to at least this (sensor housing).
  double min_distance_cm = 0.5;

  void validate() const;
};

struct MainsComponent {
  double frequency_hz = 60.0;
  double amplitude = 0.0;
};

struct NoiseProfile {
  std::vector<MainsComponent> mains;
  double broadband_sigma = 0.0;
  double shared_fraction = 0.0;

  void validate() const;
  /// RMS of one channel of pure noise: sqrt(σ² + Σ a²/2).
  [[nodiscard]] double analytic_rms() const;
};

/// Multi-channel capture; channels all share one length.
struct SensorTrace {
  std::vector<std::vector<double>> channels;
  double sample_rate_hz = 44100.0;

  [[nodiscard]] std::size_t channel_count() const { return channels.size(); }
  [[nodiscard]] std::size_t length() const {
    return channels.empty() ? 0 : channels.front().size();
  }
  void validate() const;
};

std::size_t sample_count(double duration_s, double fs);

/// B_m(t) sampled at t = j/fs. Rejects fs ≤ 2·(highest harmonic frequency).
std::vector<double> synthesize_field(const MotorProfile &profile, double duration_s, double fs);

/// Voltage induced by the field: −μ0μr·n·A·dB/dt, evaluated analytically.
std::vector<double> induce_voltage(const MotorProfile &profile, const CoilParams &coil,
                                   double duration_s, double fs);

/// Same as induce_voltage but with the time origin moved by `delay_samples`
/// (output[j] = v((j − delay_samples)/fs)), scaled by `gain`.
std::vector<double> induce_voltage_delayed(const MotorProfile &profile, const CoilParams &coil,
                                           std::size_t count, double fs,
                                           long long delay_samples, double gain);

double apply_path_loss(double amplitude, double distance_cm, const ArrayGeometry &geometry);

/// Channel i carries every source's induced voltage, delayed by
/// (path_i − path_0)/effective_speed (rounded to whole samples) and attenuated
/// by path loss, plus mains tones and shared/independent white noise.
SensorTrace simulate_array(std::span<const MotorProfile> sources, const ArrayGeometry &geometry,
                           const NoiseProfile &noise, const CoilParams &coil, double duration_s,
                           double fs, std::uint64_t seed);

inline SensorTrace simulate_array(const MotorProfile &source, const ArrayGeometry &geometry,
                                  const NoiseProfile &noise, const CoilParams &coil,
                                  double duration_s, double fs, std::uint64_t seed) {
  return simulate_array(std::span<const MotorProfile>(&source, 1), geometry, noise, coil,
                        duration_s, fs, seed);
}

/// Per-sensor delay in seconds of `source` relative to sensor 0.
std::vector<double> sensor_delays(const MotorProfile &source, const ArrayGeometry &geometry);

/// Effective speed that makes a source at `point` arrive `delay_s` later at
/// sensor 1 than at sensor 0.
double calibrate_effective_speed(const ArrayGeometry &geometry, Point2 point, double delay_s);

/// Signal enhancement ratio RMS[s1(t) + s2(t + ΔT)] / (RMS[s1] + RMS[s2]) over
/// the overlap; ΔT is the lag of s2 behind s1, rounded to whole samples.
double compute_ser(std::span<const double> s1, std::span<const double> s2, double delta_t_s,
                   double fs);

/// Parallel capacitance that resonates a coil of inductance L at f_m.
double resonance_capacitance(double f_m_hz, double inductance_h);

} // namespace magtach
