#pragma once

#include "magtach/detector.hpp"
#include "magtach/dsp.hpp"
#include "magtach/signal_model.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace magtach {

struct FuzzyLikelihood {
  std::vector<double> candidates; // Hz, uniform at delta_f_hz
  std::vector<double> y;
  double delta_f_hz = 1.0;

  [[nodiscard]] std::size_t size() const { return y.size(); }
};

/// β_k for k = 1..M, shared by every candidate.
struct HarmonicWeights {
  std::vector<double> beta;
  double intercept = 0.0;
  double off_harmonic_penalty = 0.0; // β₀ in y −= β₀·mean off-harmonic detection
  std::string fit_info;              // free-form provenance of a fitted set

  /// β_k = 1/k.
  static HarmonicWeights inverse_k(std::size_t m_harmonics);
  [[nodiscard]] std::size_t m() const { return beta.size(); }
  [[nodiscard]] double beta_sum() const;
  void validate() const;
};

void save_harmonic_weights(const HarmonicWeights &w, const std::filesystem::path &path);
HarmonicWeights load_harmonic_weights(const std::filesystem::path &path);

struct SpeedEstimate {
  double fine_hz = 0.0;
  double coarse_hz = 0.0;
  double rpm = 0.0;
  double confidence = 0.0; // y(f′) / Σβ
  bool low_confidence = false;
  bool shortfall = false;
};

std::string speed_estimate_csv_header();
std::string to_csv_row(const SpeedEstimate &e);
std::string to_json(const SpeedEstimate &e);

/// Candidate band [f_min, f_max]; f_max = 0 means half the detection band.
struct CandidateBand {
  double f_min_hz = 5.0;
  double f_max_hz = 0.0;
};

/// Max detection probability over bins within ±delta_f of g; 0 when g lies
/// outside the map.
double fuzzy_detection(const DetectionMap &map, double g_hz, double delta_f_hz);

FuzzyLikelihood compute_likelihood(const DetectionMap &detection, const HarmonicWeights &weights,
                                   double delta_f_hz, CandidateBand band = {});

/// Ridge / Gaussian-prior posterior mean with an unpenalized intercept.
/// Rows of `x` are feature vectors.
HarmonicWeights fit_beta_design(const std::vector<std::vector<double>> &x,
                                std::span<const double> y, double prior_precision,
                                bool fit_intercept = true);

struct LabeledDetection {
  DetectionMap map;
  double fundamental_hz = 0.0;
};

/// Positive row at the true fundamental; negatives at sub/super-harmonics,
/// near misses and every 8th grid candidate.
HarmonicWeights fit_beta(std::span<const LabeledDetection> training, std::size_t m_harmonics,
                         double prior_precision, double delta_f_hz = 1.0, CandidateBand band = {});

struct CoarseResult {
  double frequency_hz = 0.0;
  std::size_t index = 0;
  double score = 0.0;
  bool low_confidence = false; // every candidate was removed
  std::vector<bool> removed;
};

/// Harmonic-support removal then argmax. n_support caps the multiples checked
/// at min(n_support, band/f); multiples outside the map never count.
CoarseResult coarse_estimate(const FuzzyLikelihood &likelihood, const DetectionMap &detection,
                             int n_support, double detection_threshold = 0.5);

struct FineSettings {
  std::size_t segment_len = 44100;
  double overlap = 0.5;
  Window window = Window::Hann;
};

/// Peak of the Welch spectrum evaluated on [f′ − Δf, f′ + Δf] at spacing Δf/γ.
double fine_estimate(std::span<const double> enhanced, double fs, double coarse_hz, int gamma,
                     double delta_f_hz, const FineSettings &settings = {});

enum class DetectorKind { Ppsp, Threshold };

struct PipelineConfig {
  SpectrumSettings spectrum;
  double max_lag_s = 0.01;
  double delta_f_hz = 1.0;
  int gamma = 50;
  int n_support = 4;
  CandidateBand band;
  double detection_threshold = 0.5;
  DetectorKind detector = DetectorKind::Ppsp;
  double threshold_quantile = 0.99;

  void validate() const;
};

/// Intermediate products of one pipeline run.
struct PipelineTrace {
  DelayAndSumResult enhanced;
  PowerSpectrum spectrum;
  DetectionMap detection;
  FuzzyLikelihood likelihood;
};

/// weights may be null when config.detector == Threshold.
DetectionMap run_detector(const PowerSpectrum &spectrum, const PpspWeights *weights,
                          const PipelineConfig &config);

SpeedEstimate estimate_rpm(const SensorTrace &trace, const NoiseReference &noise,
                           const PpspWeights *detector, const HarmonicWeights &harmonics,
                           const PipelineConfig &config, PipelineTrace *debug = nullptr);

/// Picks up to k fundamentals; after each pick its multiples are cleared from
/// the detection map before the next search.
std::vector<SpeedEstimate> estimate_rpm_multi(const SensorTrace &trace,
                                              const NoiseReference &noise,
                                              const PpspWeights *detector,
                                              const HarmonicWeights &harmonics,
                                              const PipelineConfig &config,
                                              std::size_t k_sources);

} // namespace magtach
