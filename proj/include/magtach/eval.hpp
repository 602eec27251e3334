#pragma once

#include "magtach/config.hpp"
#include "magtach/detector.hpp"
#include "magtach/dsp.hpp"
#include "magtach/estimator.hpp"
#include "magtach/signal_model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace magtach {

/// Mean of |est − truth| / truth, in percent.
double rmae(std::span<const double> estimates, std::span<const double> truths);

/// RPM from the biased autocorrelation peak over lags [min_lag, max_lag] (inclusive).
double autocorrelation_baseline(std::span<const double> signal, double fs, std::size_t min_lag,
                                std::size_t max_lag);

/// RPM = 60 × frequency of the largest density in [f_lo, f_hi]; ties go to the lowest bin.
double peak_detection_baseline(const PowerSpectrum &psd, double f_lo_hz, double f_hi_hz);

double spearman(std::span<const double> x, std::span<const double> y);

std::uint64_t splitmix64(std::uint64_t x);
/// Seed for trial i of a run started from `seed`.
std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t index);

struct Capture {
  SensorTrace trace;
  NoiseReference noise;
};

/// Simulates the scenario's motors plus a noise-only background capture
/// (capture.background_frames frames) for the noise reference.
Capture simulate_capture(const Scenario &scenario, std::uint64_t seed);
Capture simulate_capture(const Scenario &scenario, std::span<const MotorProfile> motors,
                         double duration_s, std::uint64_t seed);

// ---- training from a scenario ---------------------------------------------

struct TrainingData {
  std::vector<RawSample> raw;          // enhanced base traces
  std::vector<TrainingSample> samples; // after augmentation
};

TrainingData build_training_data(const Scenario &scenario, std::uint64_t seed);

struct ScenarioTraining {
  TrainResult result;
  HarmonicWeights harmonics;
  std::size_t sample_count = 0;
};

ScenarioTraining train_scenario(const Scenario &scenario, std::uint64_t seed,
                                const std::function<void(std::size_t, double)> &on_epoch = {});

/// Harmonic weights regressed on the detector's outputs for `samples`.
HarmonicWeights fit_harmonics_for(const PpspWeights *weights, std::span<const TrainingSample> samples,
                                  const Scenario &scenario);

// ---- distance sweep ---------------------------------------------------------

struct TrialRecord {
  double distance_cm = 0.0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double true_rpm = 0.0;
  double magtach_rpm = 0.0;
  double autocorr_rpm = 0.0;
  double peak_rpm = 0.0;
  bool magtach_failed = false;
  bool low_confidence = false;
  std::string failure;
};

struct DistanceAggregate {
  double distance_cm = 0.0;
  std::size_t trials = 0;
  double magtach_rmae = 0.0;
  double autocorr_rmae = 0.0;
  double peak_rmae = 0.0;
  std::size_t magtach_dropped = 0;
};

struct BenchResult {
  std::vector<TrialRecord> trials;
  std::vector<DistanceAggregate> aggregates;
  std::uint64_t seed = 0;
  std::string fingerprint;
};

/// Error contribution of one estimate, in percent; failures count as 100%.
double trial_error_pct(double estimate, double truth, bool failed);

BenchResult run_distance_sweep(const Scenario &scenario, const PpspWeights *detector,
                               const HarmonicWeights &harmonics, std::uint64_t seed);

/// trials.csv, aggregate.csv and summary.json under `dir`.
void write_bench(const BenchResult &result, const std::filesystem::path &dir);

// ---- SER map ------------------------------------------------------------------

struct SerMap {
  std::vector<double> xs; // cm, columns
  std::vector<double> ys; // cm, rows
  std::vector<double> delays_ms;
  std::vector<std::vector<std::vector<double>>> grids; // [delay][row][col]
  double effective_speed_cm_s = 0.0;
  std::string fingerprint;
};

SerMap run_ser_map(const Scenario &scenario, std::uint64_t seed);
/// One ser_<delay>ms.csv matrix per delay.
void write_ser_map(const SerMap &map, const std::filesystem::path &dir);

} // namespace magtach
