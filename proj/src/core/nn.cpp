#include "magtach/nn.hpp"

#include "magtach/error.hpp"

#include <algorithm>
#include <cmath>

namespace magtach::nn {

Tensor conv1d(const Tensor &in, std::span<const double> weight, std::span<const double> bias,
              std::size_t out_channels, std::size_t width) {
  require(width % 2 == 1, "convolution width must be odd");
  require(weight.size() == out_channels * in.channels * width, "convolution weight shape mismatch");
  require(bias.size() == out_channels, "convolution bias shape mismatch");
  const auto len = static_cast<long long>(in.length);
  const auto pad = static_cast<long long>(width / 2);
  Tensor out(out_channels, in.length);
  for (std::size_t o = 0; o < out_channels; ++o) {
    double *dst = out.row(o);
    std::fill(dst, dst + in.length, bias[o]);
    for (std::size_t i = 0; i < in.channels; ++i) {
      const double *src = in.row(i);
      const double *w = weight.data() + (o * in.channels + i) * width;
      for (std::size_t k = 0; k < width; ++k) {
        const long long s = static_cast<long long>(k) - pad;
        const long long t0 = std::max(0LL, -s);
        const long long t1 = std::min(len, len - s);
        const double wk = w[k];
        for (long long t = t0; t < t1; ++t) {
          dst[t] += wk * src[t + s];
        }
      }
    }
  }
  return out;
}

Tensor conv1d_backward(const Tensor &in, const Tensor &grad_out, std::span<const double> weight,
                       std::size_t width, std::span<double> grad_weight,
                       std::span<double> grad_bias) {
  const auto out_channels = grad_out.channels;
  const auto len = static_cast<long long>(in.length);
  const auto pad = static_cast<long long>(width / 2);
  Tensor grad_in(in.channels, in.length);
  for (std::size_t o = 0; o < out_channels; ++o) {
    const double *g = grad_out.row(o);
    double gb = 0.0;
    for (long long t = 0; t < len; ++t) {
      gb += g[t];
    }
    grad_bias[o] += gb;
    for (std::size_t i = 0; i < in.channels; ++i) {
      const double *src = in.row(i);
      double *gi = grad_in.row(i);
      const std::size_t base = (o * in.channels + i) * width;
      for (std::size_t k = 0; k < width; ++k) {
        const long long s = static_cast<long long>(k) - pad;
        const long long t0 = std::max(0LL, -s);
        const long long t1 = std::min(len, len - s);
        const double wk = weight[base + k];
        double gw = 0.0;
        for (long long t = t0; t < t1; ++t) {
          gw += g[t] * src[t + s];
          gi[t + s] += wk * g[t];
        }
        grad_weight[base + k] += gw;
      }
    }
  }
  return grad_in;
}

Tensor elu(const Tensor &in) {
  Tensor out = in;
  for (auto &v : out.data) {
    v = v > 0.0 ? v : std::expm1(v);
  }
  return out;
}

Tensor elu_backward(const Tensor &out, const Tensor &grad_out) {
  Tensor g = grad_out;
  for (std::size_t j = 0; j < g.data.size(); ++j) {
    const double y = out.data[j];
    g.data[j] *= y > 0.0 ? 1.0 : y + 1.0;
  }
  return g;
}

PoolResult max_pool(const Tensor &in, std::size_t kernel) {
  require(kernel >= 1 && in.length % kernel == 0, "max pool kernel must divide the length");
  PoolResult r;
  r.out = Tensor(in.channels, in.length / kernel);
  r.argmax.resize(r.out.data.size());
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double *src = in.row(c);
    for (std::size_t t = 0; t < r.out.length; ++t) {
      std::size_t best = t * kernel;
      for (std::size_t k = 1; k < kernel; ++k) {
        if (src[t * kernel + k] > src[best]) {
          best = t * kernel + k;
        }
      }
      r.out.at(c, t) = src[best];
      r.argmax[c * r.out.length + t] = c * in.length + best;
    }
  }
  return r;
}

Tensor max_pool_backward(const Tensor &in_shape, const PoolResult &pool, const Tensor &grad_out) {
  Tensor g(in_shape.channels, in_shape.length);
  for (std::size_t j = 0; j < grad_out.data.size(); ++j) {
    g.data[pool.argmax[j]] += grad_out.data[j];
  }
  return g;
}

namespace {

struct LerpTap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};

std::vector<LerpTap> lerp_taps(std::size_t in_length, std::size_t out_length) {
  std::vector<LerpTap> taps(out_length);
  const double scale = static_cast<double>(in_length) / static_cast<double>(out_length);
  for (std::size_t j = 0; j < out_length; ++j) {
    double src = (static_cast<double>(j) + 0.5) * scale - 0.5;
    src = std::max(src, 0.0);
    auto lo = static_cast<std::size_t>(src);
    lo = std::min(lo, in_length - 1);
    const auto hi = std::min(lo + 1, in_length - 1);
    taps[j] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

} // namespace

Tensor upsample_linear(const Tensor &in, std::size_t out_length) {
  require(in.length > 0, "cannot upsample an empty feature map");
  const auto taps = lerp_taps(in.length, out_length);
  Tensor out(in.channels, out_length);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double *src = in.row(c);
    double *dst = out.row(c);
    for (std::size_t j = 0; j < out_length; ++j) {
      const auto &tp = taps[j];
      dst[j] = (1.0 - tp.frac) * src[tp.lo] + tp.frac * src[tp.hi];
    }
  }
  return out;
}

Tensor upsample_linear_backward(const Tensor &grad_out, std::size_t in_length) {
  const auto taps = lerp_taps(in_length, grad_out.length);
  Tensor g(grad_out.channels, in_length);
  for (std::size_t c = 0; c < grad_out.channels; ++c) {
    const double *src = grad_out.row(c);
    double *dst = g.row(c);
    for (std::size_t j = 0; j < grad_out.length; ++j) {
      const auto &tp = taps[j];
      dst[tp.lo] += (1.0 - tp.frac) * src[j];
      dst[tp.hi] += tp.frac * src[j];
    }
  }
  return g;
}

namespace {

std::pair<std::size_t, std::size_t> pool_bin(std::size_t i, std::size_t in_length,
                                             std::size_t out_length) {
  const auto start = (i * in_length) / out_length;
  const auto end = ((i + 1) * in_length + out_length - 1) / out_length;
  return {start, end};
}

} // namespace

Tensor adaptive_avg_pool(const Tensor &in, std::size_t out_length) {
  require(out_length >= 1 && out_length <= in.length, "adaptive pool size out of range");
  Tensor out(in.channels, out_length);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double *src = in.row(c);
    for (std::size_t i = 0; i < out_length; ++i) {
      const auto [start, end] = pool_bin(i, in.length, out_length);
      double acc = 0.0;
      for (auto t = start; t < end; ++t) {
        acc += src[t];
      }
      out.at(c, i) = acc / static_cast<double>(end - start);
    }
  }
  return out;
}

Tensor adaptive_avg_pool_backward(const Tensor &grad_out, std::size_t in_length) {
  Tensor g(grad_out.channels, in_length);
  for (std::size_t c = 0; c < grad_out.channels; ++c) {
    double *dst = g.row(c);
    for (std::size_t i = 0; i < grad_out.length; ++i) {
      const auto [start, end] = pool_bin(i, in_length, grad_out.length);
      const double share = grad_out.at(c, i) / static_cast<double>(end - start);
      for (auto t = start; t < end; ++t) {
        dst[t] += share;
      }
    }
  }
  return g;
}

Tensor concat(std::span<const Tensor *const> parts) {
  require(!parts.empty(), "concat of nothing");
  const auto len = parts.front()->length;
  std::size_t channels = 0;
  for (const auto *p : parts) {
    require(p->length == len, "concat inputs must share a length");
    channels += p->channels;
  }
  Tensor out(channels, len);
  auto it = out.data.begin();
  for (const auto *p : parts) {
    it = std::copy(p->data.begin(), p->data.end(), it);
  }
  return out;
}

std::vector<Tensor> split(const Tensor &grad, std::span<const std::size_t> channel_counts) {
  std::vector<Tensor> parts;
  std::size_t offset = 0;
  for (auto c : channel_counts) {
    Tensor t(c, grad.length);
    std::copy_n(grad.data.begin() + static_cast<std::ptrdiff_t>(offset * grad.length),
                c * grad.length, t.data.begin());
    offset += c;
    parts.push_back(std::move(t));
  }
  require(offset == grad.channels, "split channel counts do not cover the tensor");
  return parts;
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor &in) {
  Tensor out = in;
  for (auto &v : out.data) {
    v = sigmoid(v);
  }
  return out;
}

Tensor sigmoid_backward(const Tensor &out, const Tensor &grad_out) {
  Tensor g = grad_out;
  for (std::size_t j = 0; j < g.data.size(); ++j) {
    const double p = out.data[j];
    g.data[j] *= p * (1.0 - p);
  }
  return g;
}

std::vector<Tensor> batch_norm_train(std::span<const Tensor> batch, std::span<const double> gamma,
                                     std::span<const double> beta, double eps,
                                     BatchNormCache &cache) {
  require(!batch.empty(), "batch norm needs a non-empty batch");
  const auto channels = batch.front().channels;
  const auto len = batch.front().length;
  const double count = static_cast<double>(batch.size() * len);
  cache.mean.assign(channels, 0.0);
  cache.var.assign(channels, 0.0);
  for (const auto &x : batch) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double *r = x.row(c);
      for (std::size_t t = 0; t < len; ++t) {
        cache.mean[c] += r[t];
      }
    }
  }
  for (auto &m : cache.mean) {
    m /= count;
  }
  for (const auto &x : batch) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double *r = x.row(c);
      for (std::size_t t = 0; t < len; ++t) {
        const double d = r[t] - cache.mean[c];
        cache.var[c] += d * d;
      }
    }
  }
  for (auto &v : cache.var) {
    v /= count;
  }
  cache.normalized.clear();
  std::vector<Tensor> out;
  for (const auto &x : batch) {
    Tensor xn(channels, len);
    Tensor y(channels, len);
    for (std::size_t c = 0; c < channels; ++c) {
      const double inv = 1.0 / std::sqrt(cache.var[c] + eps);
      for (std::size_t t = 0; t < len; ++t) {
        const double n = (x.at(c, t) - cache.mean[c]) * inv;
        xn.at(c, t) = n;
        y.at(c, t) = gamma[c] * n + beta[c];
      }
    }
    cache.normalized.push_back(std::move(xn));
    out.push_back(std::move(y));
  }
  return out;
}

std::vector<Tensor> batch_norm_backward(const BatchNormCache &cache,
                                        std::span<const Tensor> grad_out,
                                        std::span<const double> gamma, double eps,
                                        std::span<double> grad_gamma,
                                        std::span<double> grad_beta) {
  const auto channels = cache.mean.size();
  const auto len = grad_out.front().length;
  const double count = static_cast<double>(grad_out.size() * len);
  std::vector<double> sum_dy(channels, 0.0);
  std::vector<double> sum_dy_xn(channels, 0.0);
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < len; ++t) {
        const double dy = grad_out[b].at(c, t);
        sum_dy[c] += dy;
        sum_dy_xn[c] += dy * cache.normalized[b].at(c, t);
      }
    }
  }
  for (std::size_t c = 0; c < channels; ++c) {
    grad_gamma[c] += sum_dy_xn[c];
    grad_beta[c] += sum_dy[c];
  }
  std::vector<Tensor> grad_in;
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    Tensor g(channels, len);
    for (std::size_t c = 0; c < channels; ++c) {
      const double k = gamma[c] / (count * std::sqrt(cache.var[c] + eps));
      for (std::size_t t = 0; t < len; ++t) {
        g.at(c, t) = k * (count * grad_out[b].at(c, t) - sum_dy[c] -
                          cache.normalized[b].at(c, t) * sum_dy_xn[c]);
      }
    }
    grad_in.push_back(std::move(g));
  }
  return grad_in;
}

Tensor batch_norm_infer(const Tensor &in, std::span<const double> gamma,
                        std::span<const double> beta, std::span<const double> running_mean,
                        std::span<const double> running_var, double eps) {
  Tensor out(in.channels, in.length);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double inv = 1.0 / std::sqrt(running_var[c] + eps);
    for (std::size_t t = 0; t < in.length; ++t) {
      out.at(c, t) = gamma[c] * (in.at(c, t) - running_mean[c]) * inv + beta[c];
    }
  }
  return out;
}

double dice_loss(std::span<const double> prediction, std::span<const double> label,
                 double smooth) {
  require(prediction.size() == label.size(), "dice loss inputs must have equal length");
  double inter = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    inter += prediction[i] * label[i];
    total += prediction[i] + label[i];
  }
  const double denom = total + smooth;
  if (denom == 0.0) {
    return 0.0; // both empty: perfect agreement
  }
  return 1.0 - (2.0 * inter + smooth) / denom;
}

std::vector<double> dice_loss_grad(std::span<const double> prediction,
                                   std::span<const double> label, double smooth) {
  require(prediction.size() == label.size(), "dice loss inputs must have equal length");
  double inter = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    inter += prediction[i] * label[i];
    total += prediction[i] + label[i];
  }
  const double denom = total + smooth;
  std::vector<double> g(prediction.size(), 0.0);
  if (denom == 0.0) {
    return g;
  }
  const double numer = 2.0 * inter + smooth;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    g[i] = -(2.0 * label[i] * denom - numer) / (denom * denom);
  }
  return g;
}

} // namespace magtach::nn
