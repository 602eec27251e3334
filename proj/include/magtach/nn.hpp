#pragma once

// Building blocks of the spectrum-parsing network. Feature maps are
// channels × length, row-major. Every forward has a matching backward that
// returns the gradient w.r.t. its inputs and accumulates parameter gradients.

#include <cstddef>
#include <span>
#include <vector>

namespace magtach::nn {

struct Tensor {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t c, std::size_t l, double fill = 0.0)
      : channels(c), length(l), data(c * l, fill) {}

  double *row(std::size_t c) { return data.data() + c * length; }
  [[nodiscard]] const double *row(std::size_t c) const { return data.data() + c * length; }
  double &at(std::size_t c, std::size_t t) { return data[c * length + t]; }
  [[nodiscard]] double at(std::size_t c, std::size_t t) const { return data[c * length + t]; }
};

/// "Same"-padded 1D convolution. weight is [out][in][width], width odd.
Tensor conv1d(const Tensor &in, std::span<const double> weight, std::span<const double> bias,
              std::size_t out_channels, std::size_t width);
Tensor conv1d_backward(const Tensor &in, const Tensor &grad_out, std::span<const double> weight,
                       std::size_t width, std::span<double> grad_weight,
                       std::span<double> grad_bias);

Tensor elu(const Tensor &in);
/// Takes the ELU *output*; the derivative is 1 above zero and out+1 below.
Tensor elu_backward(const Tensor &out, const Tensor &grad_out);

struct PoolResult {
  Tensor out;
  std::vector<std::size_t> argmax; // flat index into the input per output cell
};
PoolResult max_pool(const Tensor &in, std::size_t kernel);
Tensor max_pool_backward(const Tensor &in_shape, const PoolResult &pool, const Tensor &grad_out);

/// Linear interpolation resize with half-pixel centers (align_corners = false).
Tensor upsample_linear(const Tensor &in, std::size_t out_length);
Tensor upsample_linear_backward(const Tensor &grad_out, std::size_t in_length);

/// Adaptive average pooling to `out_length` cells, bins [⌊iL/n⌋, ⌈(i+1)L/n⌉).
Tensor adaptive_avg_pool(const Tensor &in, std::size_t out_length);
Tensor adaptive_avg_pool_backward(const Tensor &grad_out, std::size_t in_length);

Tensor concat(std::span<const Tensor *const> parts);
std::vector<Tensor> split(const Tensor &grad, std::span<const std::size_t> channel_counts);

double sigmoid(double x);
Tensor sigmoid(const Tensor &in);
Tensor sigmoid_backward(const Tensor &out, const Tensor &grad_out);

/// Training-mode batch norm over every (sample, position) of each channel.
struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> var; // biased
  std::vector<Tensor> normalized;
};
std::vector<Tensor> batch_norm_train(std::span<const Tensor> batch, std::span<const double> gamma,
                                     std::span<const double> beta, double eps,
                                     BatchNormCache &cache);
std::vector<Tensor> batch_norm_backward(const BatchNormCache &cache,
                                        std::span<const Tensor> grad_out,
                                        std::span<const double> gamma, double eps,
                                        std::span<double> grad_gamma,
                                        std::span<double> grad_beta);
Tensor batch_norm_infer(const Tensor &in, std::span<const double> gamma,
                        std::span<const double> beta, std::span<const double> running_mean,
                        std::span<const double> running_var, double eps);

/// 1 − (2·Σŷy + ε)/(Σŷ + Σy + ε).
double dice_loss(std::span<const double> prediction, std::span<const double> label,
                 double smooth);
std::vector<double> dice_loss_grad(std::span<const double> prediction,
                                   std::span<const double> label, double smooth);

} // namespace magtach::nn
