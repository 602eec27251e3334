#pragma once

// Scenario files: "[section]" headers followed by "key = value" lines.
// Keys are addressed as section.key; --set overrides use the same names and
// are applied after the file is parsed, in command-line order.

#include "magtach/detector.hpp"
#include "magtach/estimator.hpp"
#include "magtach/signal_model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace magtach {

struct CaptureSettings {
  double fs = 44100.0;
  double duration_s = 1.0;
  double volts_per_count = 1e-4; // WAV full scale = 32767 counts
  std::size_t background_frames = 4;
};

struct TrainSettings {
  std::size_t base_traces = 64;
  std::vector<double> distances_cm{5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  double rpm_min = 1500.0;
  double rpm_max = 9000.0;
  std::vector<double> alphas{0.5, 0.75, 1.0, 1.25, 1.5};
  std::size_t epochs = 30;
  double learning_rate = 2e-3;
  std::size_t batch_size = 8;
  double duration_s = 2.0;
  double prior_precision = 1.0;
  double amplitude_jitter = 0.3; // relative, per harmonic
};

struct SweepSettings {
  std::vector<double> distances_cm; // default 5:105:5
  std::vector<double> speeds_rpm{2000, 3500, 5000, 6500, 8000};
  std::size_t trials = 20; // per distance, cycling through speeds
  std::size_t workers = 1;
  double baseline_f_min_hz = 5.0;
  double baseline_f_max_hz = 512.0;

  SweepSettings();
};

struct SerMapSettings {
  std::vector<Point2> sensors{{-8.0, 0.0}, {8.0, 0.0}};
  double x_min_cm = -8.0;
  double x_max_cm = 8.0;
  double y_min_cm = 0.0;
  double y_max_cm = 15.0;
  double step_cm = 1.0;
  std::vector<double> delays_ms{0.0, 4.0};
  double duration_s = 0.25;
  bool with_noise = false;
  bool calibrate = true;
  Point2 calibrate_point{-4.0, 11.0};
  double calibrate_delay_ms = 4.0;
};

struct Scenario {
  CaptureSettings capture;
  std::vector<MotorProfile> motors;
  ArrayGeometry geometry;
  NoiseProfile noise;
  CoilParams coil;
  PipelineConfig pipeline;
  PpspConfig detector;
  std::size_t m_harmonics = 8;
  TrainSettings train;
  SweepSettings sweep;
  SerMapSettings sermap;

  Scenario();
  void validate() const;
  /// PPSP configuration with input_bins taken from the pipeline.
  [[nodiscard]] PpspConfig detector_config() const;
};

Scenario parse_scenario(std::string_view text, const std::string &source_name);
Scenario load_scenario(const std::filesystem::path &path);

/// Applies one "key=value" override; throws a Config error naming the key.
void apply_override(Scenario &scenario, std::string_view assignment);
void set_value(Scenario &scenario, std::string_view key, std::string_view value,
               const std::string &where);

/// Sorted "key = value" lines covering every honored key.
std::string canonical_dump(const Scenario &scenario);
/// FNV-1a 64 of the canonical dump, as 16 hex digits.
std::string fingerprint(const Scenario &scenario);

struct KeyHelp {
  std::string key;
  std::string help;
};
std::vector<KeyHelp> scenario_keys();

} // namespace magtach
