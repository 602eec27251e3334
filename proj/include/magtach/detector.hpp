#pragma once

#include "magtach/dsp.hpp"
#include "magtach/nn.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace magtach {

/// Per-bin probability that a signal harmonic occupies that bin.
struct DetectionMap {
  std::vector<double> probabilities;
  std::vector<double> frequencies; // Hz
  double resolution_hz = 1.0;

  [[nodiscard]] std::size_t size() const { return probabilities.size(); }
};

struct PpspConfig {
  std::size_t input_bins = 1024;
  std::size_t encoder_levels = 9;
  std::size_t filters = 64;
  std::size_t conv_kernel = 3;
  std::size_t pool_kernel = 2;
  std::vector<std::size_t> multiscale_widths{3, 7, 15};
  std::vector<std::size_t> pyramid_bins{1, 2, 4};
  std::size_t pyramid_channels = 0; // 0 → max(1, filters / 4)
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t pyramid_width() const;
  void validate() const;
};

bool operator==(const PpspConfig &a, const PpspConfig &b);

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

/// Trainable tensors in a fixed order plus the batch-norm running statistics.
struct PpspWeights {
  PpspConfig config;
  std::vector<NamedTensor> params;
  std::vector<double> running_mean{0.0};
  std::vector<double> running_var{1.0};

  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] const NamedTensor &find(const std::string &name) const;
};

/// Gradients share PpspWeights::params' order and shapes.
using PpspGradients = std::vector<std::vector<double>>;

/// Fan-in-scaled uniform initialization from config.seed.
PpspWeights init_weights(const PpspConfig &config);

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;
constexpr double kDiceSmooth = 1.0;

/// Inference pass (batch norm uses running statistics).
DetectionMap ppsp_forward(std::span<const double> spectrum, const PpspWeights &weights);
DetectionMap ppsp_forward(const PowerSpectrum &spectrum, const PpspWeights &weights);

struct TrainingSample {
  std::vector<double> spectrum;   // normalized coarse PSD
  std::vector<double> label_mask; // 0/1 per bin
  double fundamental_hz = 0.0;
};

struct BatchLoss {
  double loss = 0.0;          // mean dice over the batch
  PpspGradients gradients;    // of `loss`
  std::vector<double> batch_mean; // per-channel statistics the BN layer saw
  std::vector<double> batch_var;  // unbiased
};

/// Training-mode pass over a batch: mean dice loss and its exact gradient.
BatchLoss ppsp_loss_and_gradients(std::span<const TrainingSample> batch, const PpspWeights &weights,
                                  double dice_smooth = kDiceSmooth);

/// Training-mode loss only (used for finite differences).
double ppsp_training_loss(std::span<const TrainingSample> batch, const PpspWeights &weights,
                          double dice_smooth = kDiceSmooth);

inline PpspGradients ppsp_backward(const TrainingSample &sample, const PpspWeights &weights) {
  return ppsp_loss_and_gradients(std::span<const TrainingSample>(&sample, 1), weights).gradients;
}

struct TrainOptions {
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::function<void(std::size_t epoch, double loss)> on_epoch; // optional progress hook
};

struct TrainResult {
  PpspWeights weights;
  std::vector<double> loss_history; // one mean training loss per epoch
};

/// Adam over mean dice loss. Reports divergence as a Pipeline error naming the epoch.
TrainResult train(std::span<const TrainingSample> dataset, const PpspWeights &initial,
                  const TrainOptions &options);
TrainResult train(std::span<const TrainingSample> dataset, const PpspConfig &config,
                  const TrainOptions &options);

/// Bin b is set iff |freq(b) − k·f0| ≤ Δf for some k in 1..n_harmonics.
std::vector<double> build_label_mask(double fundamental_hz, int n_harmonics, double delta_f_hz,
                                     std::span<const double> bin_frequencies);

/// How a time-domain signal becomes network input.
struct SpectrumSettings {
  std::size_t segment_len = 44100;
  double overlap = 0.5;
  Window window = Window::Hann;
  std::size_t input_bins = 1024;
};

/// Cropped, log-normalized coarse spectrum of `signal`.
PowerSpectrum coarse_spectrum(std::span<const double> signal, double fs,
                              const SpectrumSettings &settings);

struct RawSample {
  std::vector<double> signal; // enhanced (delay-and-summed) capture
  double sample_rate_hz = 44100.0;
  double fundamental_hz = 0.0;
  int n_harmonics = 1;
};

TrainingSample make_training_sample(const RawSample &raw, const SpectrumSettings &settings,
                                    double delta_f_hz);

/// Stretches the signal so the fundamental becomes α·f0, then rebuilds the
/// spectrum and mask. Returns nullopt for samples that leave the band or no
/// longer fill a Welch segment.
std::optional<TrainingSample> augment(const RawSample &raw, double alpha,
                                      const SpectrumSettings &settings, double delta_f_hz);

/// Binary map: 1 where density ≥ the `quantile` (linear interpolation) of all densities.
DetectionMap threshold_detector(const PowerSpectrum &spectrum, double quantile);

void save_weights(const PpspWeights &weights, const std::filesystem::path &path);
PpspWeights load_weights(const std::filesystem::path &path);

/// Dataset directory: sample_NNNNN.spectrum.csv / .mask.csv / .meta.json.
void save_dataset(std::span<const TrainingSample> samples, const std::filesystem::path &dir);
std::vector<TrainingSample> load_dataset(const std::filesystem::path &dir);

} // namespace magtach
