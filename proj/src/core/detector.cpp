#include "magtach/detector.hpp"

#include "magtach/error.hpp"
#include "magtach/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace magtach {

using nn::Tensor;

std::size_t PpspConfig::pyramid_width() const {
  return pyramid_channels > 0 ? pyramid_channels : std::max<std::size_t>(1, filters / 4);
}

void PpspConfig::validate() const {
  require(input_bins > 0 && filters > 0, "PPSP input bins and filters must be positive");
  require(pool_kernel >= 2, "PPSP pool kernel must be at least 2");
  require(conv_kernel % 2 == 1, "PPSP conv kernel must be odd");
  require(!multiscale_widths.empty(), "PPSP needs at least one multi-scale width");
  for (auto w : multiscale_widths) {
    require(w % 2 == 1, "PPSP multi-scale widths must be odd");
  }
  std::size_t div = 1;
  for (std::size_t l = 0; l < encoder_levels; ++l) {
    div *= pool_kernel;
  }
  require(encoder_levels >= 1 && input_bins % div == 0,
          "PPSP input bins must be divisible by pool_kernel^encoder_levels");
  for (auto b : pyramid_bins) {
    require(b >= 1 && b <= input_bins, "PPSP pyramid bins must lie in [1, input_bins]");
  }
}

bool operator==(const PpspConfig &a, const PpspConfig &b) {
  return a.input_bins == b.input_bins && a.encoder_levels == b.encoder_levels &&
         a.filters == b.filters && a.conv_kernel == b.conv_kernel &&
         a.pool_kernel == b.pool_kernel && a.multiscale_widths == b.multiscale_widths &&
         a.pyramid_bins == b.pyramid_bins && a.pyramid_width() == b.pyramid_width() &&
         a.seed == b.seed;
}

std::size_t PpspWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto &p : params) {
    n += p.values.size();
  }
  return n;
}

const NamedTensor &PpspWeights::find(const std::string &name) const {
  for (const auto &p : params) {
    if (p.name == name) {
      return p;
    }
  }
  fail(ErrorKind::InvalidInput, "no PPSP tensor named '" + name + "'");
}

namespace {

// Indices into PpspWeights::params for each piece of the network.
struct Layout {
  struct Conv {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };
  std::vector<std::vector<Conv>> enc_branch; // [level][width]
  std::vector<Conv> enc_proj;
  std::vector<Conv> dec; // by level
  std::vector<Conv> pyramid;
  Conv final_conv;
  std::size_t bn_gamma = 0;
  std::size_t bn_beta = 0;
};

std::size_t product(const std::vector<std::size_t> &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Builds the parameter list (zero-filled) in canonical order and its layout.
Layout make_layout(const PpspConfig &cfg, std::vector<NamedTensor> *params) {
  Layout layout;
  std::size_t index = 0;
  const auto add = [&](std::string name, std::vector<std::size_t> shape) {
    if (params != nullptr) {
      NamedTensor t;
      t.name = std::move(name);
      t.values.assign(product(shape), 0.0);
      t.shape = std::move(shape);
      params->push_back(std::move(t));
    }
    return index++;
  };
  const auto conv = [&](const std::string &prefix, std::size_t out, std::size_t in,
                        std::size_t width) {
    Layout::Conv c;
    c.weight = add(prefix + ".weight", {out, in, width});
    c.bias = add(prefix + ".bias", {out});
    return c;
  };
  const auto F = cfg.filters;
  const auto nw = cfg.multiscale_widths.size();
  layout.enc_branch.resize(cfg.encoder_levels);
  for (std::size_t l = 0; l < cfg.encoder_levels; ++l) {
    const auto in = l == 0 ? 1 : F;
    const auto prefix = "enc" + std::to_string(l);
    for (auto w : cfg.multiscale_widths) {
      layout.enc_branch[l].push_back(conv(prefix + ".ms" + std::to_string(w), F, in, w));
    }
    layout.enc_proj.push_back(conv(prefix + ".proj", F, F * nw, 1));
  }
  layout.dec.resize(cfg.encoder_levels);
  for (std::size_t l = cfg.encoder_levels; l-- > 0;) {
    layout.dec[l] = conv("dec" + std::to_string(l), F, 2 * F, cfg.conv_kernel);
  }
  const auto R = cfg.pyramid_width();
  for (auto b : cfg.pyramid_bins) {
    layout.pyramid.push_back(conv("pp" + std::to_string(b), R, F, 1));
  }
  layout.final_conv = conv("final", 1, F + cfg.pyramid_bins.size() * R, cfg.conv_kernel);
  layout.bn_gamma = add("bn.gamma", {1});
  layout.bn_beta = add("bn.beta", {1});
  return layout;
}

struct EncCache {
  Tensor input;
  std::vector<Tensor> branches; // post-activation
  Tensor cat;
  Tensor out; // post-activation, also the skip connection
  nn::PoolResult pool;
};

struct DecCache {
  std::size_t in_length = 0;
  Tensor cat;
  Tensor out;
};

struct PyramidCache {
  std::vector<Tensor> pooled;
  std::vector<Tensor> conv; // post-activation
};

struct SampleCache {
  std::vector<EncCache> enc;
  std::vector<DecCache> dec;
  Tensor top; // decoder output fed to pyramid pooling
  PyramidCache pyramid;
  Tensor final_cat;
};

class Network {
public:
  explicit Network(const PpspWeights &w) : w_(w), cfg_(w.config), layout_(make_layout(cfg_, nullptr)) {}

  std::span<const double> p(std::size_t i) const { return w_.params[i].values; }

  Tensor logits(std::span<const double> spectrum, SampleCache &c) const {
    const auto F = cfg_.filters;
    const auto L = cfg_.encoder_levels;
    c.enc.assign(L, {});
    c.dec.assign(L, {});
    Tensor x(1, cfg_.input_bins);
    std::copy(spectrum.begin(), spectrum.end(), x.data.begin());
    for (std::size_t l = 0; l < L; ++l) {
      auto &e = c.enc[l];
      e.input = std::move(x);
      std::vector<const Tensor *> parts;
      for (std::size_t b = 0; b < cfg_.multiscale_widths.size(); ++b) {
        const auto &cv = layout_.enc_branch[l][b];
        e.branches.push_back(
            nn::elu(nn::conv1d(e.input, p(cv.weight), p(cv.bias), F, cfg_.multiscale_widths[b])));
      }
      for (const auto &t : e.branches) {
        parts.push_back(&t);
      }
      e.cat = nn::concat(parts);
      const auto &pr = layout_.enc_proj[l];
      e.out = nn::elu(nn::conv1d(e.cat, p(pr.weight), p(pr.bias), F, 1));
      e.pool = nn::max_pool(e.out, cfg_.pool_kernel);
      x = e.pool.out;
    }
    for (std::size_t l = L; l-- > 0;) {
      auto &d = c.dec[l];
      d.in_length = x.length;
      const Tensor up = nn::upsample_linear(x, c.enc[l].out.length);
      const Tensor *parts[] = {&up, &c.enc[l].out};
      d.cat = nn::concat(parts);
      const auto &cv = layout_.dec[l];
      d.out = nn::elu(nn::conv1d(d.cat, p(cv.weight), p(cv.bias), F, cfg_.conv_kernel));
      x = d.out;
    }
    c.top = x;
    const auto R = cfg_.pyramid_width();
    std::vector<Tensor> ups;
    c.pyramid = {};
    for (std::size_t b = 0; b < cfg_.pyramid_bins.size(); ++b) {
      c.pyramid.pooled.push_back(nn::adaptive_avg_pool(c.top, cfg_.pyramid_bins[b]));
      const auto &cv = layout_.pyramid[b];
      c.pyramid.conv.push_back(
          nn::elu(nn::conv1d(c.pyramid.pooled.back(), p(cv.weight), p(cv.bias), R, 1)));
      ups.push_back(nn::upsample_linear(c.pyramid.conv.back(), cfg_.input_bins));
    }
    std::vector<const Tensor *> parts{&c.top};
    for (const auto &u : ups) {
      parts.push_back(&u);
    }
    c.final_cat = nn::concat(parts);
    const auto &fc = layout_.final_conv;
    return nn::conv1d(c.final_cat, p(fc.weight), p(fc.bias), 1, cfg_.conv_kernel);
  }

  void backward(const SampleCache &c, const Tensor &grad_logits, PpspGradients &g) const {
    const auto F = cfg_.filters;
    const auto L = cfg_.encoder_levels;
    const auto R = cfg_.pyramid_width();
    const auto &fc = layout_.final_conv;
    Tensor dcat = nn::conv1d_backward(c.final_cat, grad_logits, p(fc.weight), cfg_.conv_kernel,
                                      g[fc.weight], g[fc.bias]);
    std::vector<std::size_t> counts{F};
    counts.insert(counts.end(), cfg_.pyramid_bins.size(), R);
    auto parts = nn::split(dcat, counts);
    Tensor dx = std::move(parts[0]);
    for (std::size_t b = 0; b < cfg_.pyramid_bins.size(); ++b) {
      const auto &cv = layout_.pyramid[b];
      const Tensor du = nn::upsample_linear_backward(parts[b + 1], cfg_.pyramid_bins[b]);
      const Tensor dpre = nn::elu_backward(c.pyramid.conv[b], du);
      const Tensor dpool = nn::conv1d_backward(c.pyramid.pooled[b], dpre, p(cv.weight), 1,
                                               g[cv.weight], g[cv.bias]);
      const Tensor dtop = nn::adaptive_avg_pool_backward(dpool, cfg_.input_bins);
      for (std::size_t j = 0; j < dx.data.size(); ++j) {
        dx.data[j] += dtop.data[j];
      }
    }
    std::vector<Tensor> dskip(L);
    for (std::size_t l = 0; l < L; ++l) {
      const auto &d = c.dec[l];
      const auto &cv = layout_.dec[l];
      const Tensor dpre = nn::elu_backward(d.out, dx);
      const Tensor dc = nn::conv1d_backward(d.cat, dpre, p(cv.weight), cfg_.conv_kernel,
                                            g[cv.weight], g[cv.bias]);
      const std::size_t halves[] = {F, F};
      auto s = nn::split(dc, halves);
      dskip[l] = std::move(s[1]);
      dx = nn::upsample_linear_backward(s[0], d.in_length);
    }
    // dx is now the gradient of the deepest pooled map
    for (std::size_t l = L; l-- > 0;) {
      const auto &e = c.enc[l];
      Tensor dout = nn::max_pool_backward(e.out, e.pool, dx);
      for (std::size_t j = 0; j < dout.data.size(); ++j) {
        dout.data[j] += dskip[l].data[j];
      }
      const auto &pr = layout_.enc_proj[l];
      const Tensor dproj = nn::elu_backward(e.out, dout);
      const Tensor dcat_e =
          nn::conv1d_backward(e.cat, dproj, p(pr.weight), 1, g[pr.weight], g[pr.bias]);
      std::vector<std::size_t> bc(cfg_.multiscale_widths.size(), F);
      const auto dbranch = nn::split(dcat_e, bc);
      Tensor din(e.input.channels, e.input.length);
      for (std::size_t b = 0; b < bc.size(); ++b) {
        const auto &cv = layout_.enc_branch[l][b];
        const Tensor dpre = nn::elu_backward(e.branches[b], dbranch[b]);
        const Tensor di = nn::conv1d_backward(e.input, dpre, p(cv.weight),
                                              cfg_.multiscale_widths[b], g[cv.weight], g[cv.bias]);
        for (std::size_t j = 0; j < din.data.size(); ++j) {
          din.data[j] += di.data[j];
        }
      }
      dx = std::move(din);
    }
  }

  const Layout &layout() const { return layout_; }

private:
  const PpspWeights &w_;
  const PpspConfig &cfg_;
  Layout layout_;
};

void check_spectrum(std::span<const double> spectrum, const PpspConfig &cfg) {
  require(spectrum.size() == cfg.input_bins,
          "PPSP expects " + std::to_string(cfg.input_bins) + " bins, got " +
              std::to_string(spectrum.size()));
}

struct BatchForward {
  std::vector<SampleCache> caches;
  nn::BatchNormCache bn;
  std::vector<Tensor> probs;
  double loss = 0.0;
};

BatchForward batch_forward(const Network &net, std::span<const TrainingSample> batch,
                           const PpspWeights &weights, double smooth) {
  require(!batch.empty(), "empty training batch");
  BatchForward f;
  f.caches.resize(batch.size());
  std::vector<Tensor> logits;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    check_spectrum(batch[b].spectrum, weights.config);
    require(batch[b].label_mask.size() == weights.config.input_bins, "label mask length mismatch");
    logits.push_back(net.logits(batch[b].spectrum, f.caches[b]));
  }
  const auto &lay = net.layout();
  const auto y = nn::batch_norm_train(logits, net.p(lay.bn_gamma), net.p(lay.bn_beta),
                                      kBatchNormEps, f.bn);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    f.probs.push_back(nn::sigmoid(y[b]));
    f.loss += nn::dice_loss(f.probs[b].data, batch[b].label_mask, smooth);
  }
  f.loss /= static_cast<double>(batch.size());
  return f;
}

} // namespace

PpspWeights init_weights(const PpspConfig &config) {
  config.validate();
  PpspWeights w;
  w.config = config;
  const auto layout = make_layout(config, &w.params);
  std::mt19937_64 rng(config.seed);
  for (auto &t : w.params) {
    if (t.name == "bn.gamma") {
      t.values = {1.0};
      continue;
    }
    if (t.shape.size() != 3) {
      continue; // biases and bn.beta start at zero
    }
    const double fan_in = static_cast<double>(t.shape[1] * t.shape[2]);
    std::uniform_real_distribution<double> dist(-std::sqrt(3.0 / fan_in), std::sqrt(3.0 / fan_in));
    for (auto &v : t.values) {
      v = dist(rng);
    }
  }
  (void)layout;
  return w;
}

DetectionMap ppsp_forward(std::span<const double> spectrum, const PpspWeights &weights) {
  const auto &cfg = weights.config;
  check_spectrum(spectrum, cfg);
  for (double v : spectrum) {
    require(std::isfinite(v), "PPSP input must be finite");
  }
  Network net(weights);
  SampleCache cache;
  const Tensor z = net.logits(spectrum, cache);
  const auto &lay = net.layout();
  const Tensor y = nn::batch_norm_infer(z, net.p(lay.bn_gamma), net.p(lay.bn_beta),
                                        weights.running_mean, weights.running_var, kBatchNormEps);
  DetectionMap map;
  map.probabilities = nn::sigmoid(y).data;
  map.frequencies.resize(map.probabilities.size());
  for (std::size_t b = 0; b < map.frequencies.size(); ++b) {
    map.frequencies[b] = static_cast<double>(b);
  }
  return map;
}

DetectionMap ppsp_forward(const PowerSpectrum &spectrum, const PpspWeights &weights) {
  auto map = ppsp_forward(std::span<const double>(spectrum.densities), weights);
  map.frequencies = spectrum.frequencies;
  map.resolution_hz = spectrum.resolution_hz;
  return map;
}

double ppsp_training_loss(std::span<const TrainingSample> batch, const PpspWeights &weights,
                          double dice_smooth) {
  Network net(weights);
  return batch_forward(net, batch, weights, dice_smooth).loss;
}

BatchLoss ppsp_loss_and_gradients(std::span<const TrainingSample> batch, const PpspWeights &weights,
                                  double dice_smooth) {
  Network net(weights);
  auto f = batch_forward(net, batch, weights, dice_smooth);
  BatchLoss out;
  out.loss = f.loss;
  out.gradients.resize(weights.params.size());
  for (std::size_t i = 0; i < weights.params.size(); ++i) {
    out.gradients[i].assign(weights.params[i].values.size(), 0.0);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  std::vector<Tensor> dy;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto g = nn::dice_loss_grad(f.probs[b].data, batch[b].label_mask, dice_smooth);
    Tensor gp(1, g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      gp.data[j] = g[j] * inv_batch;
    }
    dy.push_back(nn::sigmoid_backward(f.probs[b], gp));
  }
  const auto &lay = net.layout();
  const auto dz = nn::batch_norm_backward(f.bn, dy, net.p(lay.bn_gamma), kBatchNormEps,
                                          out.gradients[lay.bn_gamma], out.gradients[lay.bn_beta]);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    net.backward(f.caches[b], dz[b], out.gradients);
  }
  const double count = static_cast<double>(batch.size() * weights.config.input_bins);
  out.batch_mean = f.bn.mean;
  out.batch_var = f.bn.var;
  for (auto &v : out.batch_var) {
    v = count > 1.0 ? v * count / (count - 1.0) : v;
  }
  return out;
}

TrainResult train(std::span<const TrainingSample> dataset, const PpspConfig &config,
                  const TrainOptions &options) {
  return train(dataset, init_weights(config), options);
}

TrainResult train(std::span<const TrainingSample> dataset, const PpspWeights &initial,
                  const TrainOptions &options) {
  require(!dataset.empty(), "training needs a non-empty dataset");
  require(options.batch_size >= 1, "batch size must be at least 1");
  require(options.learning_rate > 0.0, "learning rate must be positive");
  TrainResult result{initial, {}};
  auto &w = result.weights;
  std::vector<std::vector<double>> m(w.params.size());
  std::vector<std::vector<double>> v(w.params.size());
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    m[i].assign(w.params[i].values.size(), 0.0);
    v[i].assign(w.params[i].values.size(), 0.0);
  }
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;
  std::vector<TrainingSample> batch;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const auto end = std::min(order.size(), start + options.batch_size);
      batch.clear();
      for (auto j = start; j < end; ++j) {
        batch.push_back(dataset[order[j]]);
      }
      auto bl = ppsp_loss_and_gradients(batch, w);
      if (!std::isfinite(bl.loss)) {
        fail(ErrorKind::Pipeline, "training diverged at epoch " + std::to_string(epoch));
      }
      epoch_loss += bl.loss * static_cast<double>(batch.size());
      ++step;
      const double c1 = 1.0 - std::pow(options.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(options.adam_beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < w.params.size(); ++i) {
        auto &vals = w.params[i].values;
        const auto &g = bl.gradients[i];
        for (std::size_t j = 0; j < vals.size(); ++j) {
          m[i][j] = options.adam_beta1 * m[i][j] + (1.0 - options.adam_beta1) * g[j];
          v[i][j] = options.adam_beta2 * v[i][j] + (1.0 - options.adam_beta2) * g[j] * g[j];
          vals[j] -= options.learning_rate * (m[i][j] / c1) /
                     (std::sqrt(v[i][j] / c2) + options.adam_eps);
        }
      }
      for (std::size_t c = 0; c < w.running_mean.size(); ++c) {
        w.running_mean[c] = (1.0 - kBatchNormMomentum) * w.running_mean[c] +
                            kBatchNormMomentum * bl.batch_mean[c];
        w.running_var[c] = (1.0 - kBatchNormMomentum) * w.running_var[c] +
                           kBatchNormMomentum * bl.batch_var[c];
      }
    }
    epoch_loss /= static_cast<double>(dataset.size());
    if (!std::isfinite(epoch_loss)) {
      fail(ErrorKind::Pipeline, "training diverged at epoch " + std::to_string(epoch));
    }
    result.loss_history.push_back(epoch_loss);
    if (options.on_epoch) {
      options.on_epoch(epoch, epoch_loss);
    }
  }
  return result;
}

std::vector<double> build_label_mask(double fundamental_hz, int n_harmonics, double delta_f_hz,
                                     std::span<const double> bin_frequencies) {
  require(fundamental_hz > 0.0, "label fundamental must be positive");
  std::vector<double> mask(bin_frequencies.size(), 0.0);
  if (bin_frequencies.empty()) {
    return mask;
  }
  const double res = bin_frequencies.size() > 1 ? bin_frequencies[1] - bin_frequencies[0] : 1.0;
  const double band_top = bin_frequencies.back() + 0.5 * res;
  constexpr double kTol = 1e-9;
  for (int k = 1; k <= n_harmonics; ++k) {
    const double h = k * fundamental_hz;
    if (h > band_top) {
      break;
    }
    for (std::size_t b = 0; b < bin_frequencies.size(); ++b) {
      if (std::abs(bin_frequencies[b] - h) <= delta_f_hz + kTol) {
        mask[b] = 1.0;
      }
    }
  }
  return mask;
}

PowerSpectrum coarse_spectrum(std::span<const double> signal, double fs,
                              const SpectrumSettings &settings) {
  const auto psd = welch_psd(signal, fs, settings.segment_len, settings.overlap, settings.window);
  return log_normalize(crop_spectrum(psd, settings.input_bins));
}

TrainingSample make_training_sample(const RawSample &raw, const SpectrumSettings &settings,
                                    double delta_f_hz) {
  const auto spec = coarse_spectrum(raw.signal, raw.sample_rate_hz, settings);
  TrainingSample s;
  s.spectrum = spec.densities;
  s.label_mask = build_label_mask(raw.fundamental_hz, raw.n_harmonics, delta_f_hz, spec.frequencies);
  s.fundamental_hz = raw.fundamental_hz;
  return s;
}

std::optional<TrainingSample> augment(const RawSample &raw, double alpha,
                                      const SpectrumSettings &settings, double delta_f_hz) {
  require(alpha >= 0.1 - 1e-12 && alpha <= 2.0 + 1e-12, "augmentation alpha must lie in [0.1, 2]");
  const double band_top = static_cast<double>(settings.input_bins) * raw.sample_rate_hz /
                          static_cast<double>(settings.segment_len);
  const double f0 = alpha * raw.fundamental_hz;
  if (f0 >= band_top) {
    return std::nullopt;
  }
  RawSample stretched = raw;
  stretched.fundamental_hz = f0;
  if (alpha != 1.0) {
    stretched.signal = resample(raw.signal, 1.0 / alpha);
  }
  if (stretched.signal.size() < settings.segment_len) {
    return std::nullopt;
  }
  auto s = make_training_sample(stretched, settings, delta_f_hz);
  if (std::none_of(s.label_mask.begin(), s.label_mask.end(), [](double v) { return v > 0.0; })) {
    return std::nullopt;
  }
  return s;
}

DetectionMap threshold_detector(const PowerSpectrum &spectrum, double quantile) {
  require(quantile >= 0.0 && quantile <= 1.0, "quantile must lie in [0,1]");
  DetectionMap map;
  map.frequencies = spectrum.frequencies;
  map.resolution_hz = spectrum.resolution_hz;
  map.probabilities.assign(spectrum.size(), 0.0);
  if (spectrum.size() == 0) {
    return map;
  }
  auto sorted = spectrum.densities;
  std::sort(sorted.begin(), sorted.end());
  const double pos = quantile * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double level = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  for (std::size_t b = 0; b < spectrum.size(); ++b) {
    map.probabilities[b] = spectrum.densities[b] >= level ? 1.0 : 0.0;
  }
  return map;
}

// ---- persistence -----------------------------------------------------------

namespace {

constexpr const char *kWeightsMagic = "magtach-ppsp-weights";
constexpr int kWeightsVersion = 1;

std::string join(const std::vector<std::size_t> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += (i ? "," : "") + std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> split_sizes(const std::string &s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  return out;
}

} // namespace

void save_weights(const PpspWeights &weights, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) {
    fail(ErrorKind::Io, "cannot write weights file " + path.string());
  }
  const auto &c = weights.config;
  out << kWeightsMagic << ' ' << kWeightsVersion << '\n';
  out << "config input_bins " << c.input_bins << '\n';
  out << "config encoder_levels " << c.encoder_levels << '\n';
  out << "config filters " << c.filters << '\n';
  out << "config conv_kernel " << c.conv_kernel << '\n';
  out << "config pool_kernel " << c.pool_kernel << '\n';
  out << "config multiscale_widths " << join(c.multiscale_widths) << '\n';
  out << "config pyramid_bins " << join(c.pyramid_bins) << '\n';
  out << "config pyramid_channels " << c.pyramid_width() << '\n';
  out << "config seed " << c.seed << '\n';
  const auto write_row = [&](const std::string &name, const std::vector<std::size_t> &shape,
                             const std::vector<double> &values) {
    out << "tensor " << name << ' ' << join(shape) << '\n';
    for (std::size_t i = 0; i < values.size(); ++i) {
      out << (i ? " " : "") << format_double(values[i]);
    }
    out << '\n';
  };
  for (const auto &p : weights.params) {
    write_row(p.name, p.shape, p.values);
  }
  write_row("bn.running_mean", {weights.running_mean.size()}, weights.running_mean);
  write_row("bn.running_var", {weights.running_var.size()}, weights.running_var);
  out << "end\n";
  if (!out) {
    fail(ErrorKind::Io, "failed writing weights file " + path.string());
  }
}

PpspWeights load_weights(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorKind::Io, "cannot open weights file " + path.string());
  }
  const auto where = path.string();
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kWeightsMagic || version != kWeightsVersion) {
    fail(ErrorKind::Io, where + ": not a version-1 PPSP weights file");
  }
  PpspConfig cfg;
  std::vector<NamedTensor> tensors;
  std::string tag;
  while (in >> tag) {
    if (tag == "end") {
      break;
    }
    if (tag == "config") {
      std::string key;
      std::string value;
      in >> key >> value;
      if (key == "input_bins") {
        cfg.input_bins = std::stoull(value);
      } else if (key == "encoder_levels") {
        cfg.encoder_levels = std::stoull(value);
      } else if (key == "filters") {
        cfg.filters = std::stoull(value);
      } else if (key == "conv_kernel") {
        cfg.conv_kernel = std::stoull(value);
      } else if (key == "pool_kernel") {
        cfg.pool_kernel = std::stoull(value);
      } else if (key == "multiscale_widths") {
        cfg.multiscale_widths = split_sizes(value);
      } else if (key == "pyramid_bins") {
        cfg.pyramid_bins = split_sizes(value);
      } else if (key == "pyramid_channels") {
        cfg.pyramid_channels = std::stoull(value);
      } else if (key == "seed") {
        cfg.seed = std::stoull(value);
      } else {
        fail(ErrorKind::Io, where + ": unknown config key '" + key + "'");
      }
    } else if (tag == "tensor") {
      NamedTensor t;
      std::string shape;
      in >> t.name >> shape;
      t.shape = split_sizes(shape);
      t.values.resize(product(t.shape));
      for (auto &v : t.values) {
        std::string tok;
        in >> tok;
        v = parse_double(tok, where);
      }
      tensors.push_back(std::move(t));
    } else {
      fail(ErrorKind::Io, where + ": unexpected token '" + tag + "'");
    }
  }
  if (tag != "end") {
    fail(ErrorKind::Io, where + ": truncated weights file");
  }
  PpspWeights w = init_weights(cfg);
  for (auto &p : w.params) {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const NamedTensor &t) { return t.name == p.name; });
    if (it == tensors.end() || it->shape != p.shape) {
      fail(ErrorKind::Io, where + ": missing or misshapen tensor '" + p.name + "'");
    }
    p.values = it->values;
  }
  const auto take = [&](const std::string &name, std::vector<double> &dst) {
    auto it = std::find_if(tensors.begin(), tensors.end(),
                           [&](const NamedTensor &t) { return t.name == name; });
    if (it == tensors.end() || it->values.size() != dst.size()) {
      fail(ErrorKind::Io, where + ": missing tensor '" + name + "'");
    }
    dst = it->values;
  };
  take("bn.running_mean", w.running_mean);
  take("bn.running_var", w.running_var);
  return w;
}

void save_dataset(std::span<const TrainingSample> samples, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream stem;
    stem << "sample_" << std::setw(5) << std::setfill('0') << i;
    const auto base = dir / stem.str();
    const auto write_column = [&](const std::filesystem::path &p, const std::vector<double> &v,
                                  const char *header) {
      std::ofstream out(p);
      if (!out) {
        fail(ErrorKind::Io, "cannot write " + p.string());
      }
      out << "bin," << header << '\n';
      for (std::size_t b = 0; b < v.size(); ++b) {
        out << b << ',' << format_double(v[b]) << '\n';
      }
    };
    write_column(base.string() + ".spectrum.csv", samples[i].spectrum, "density");
    write_column(base.string() + ".mask.csv", samples[i].label_mask, "label");
    nlohmann::json meta{{"fundamental_hz", samples[i].fundamental_hz},
                        {"bins", samples[i].spectrum.size()}};
    std::ofstream(base.string() + ".meta.json") << meta.dump(2) << '\n';
  }
}

std::vector<TrainingSample> load_dataset(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir)) {
    fail(ErrorKind::Io, "dataset directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> metas;
  for (const auto &entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > 10 && name.ends_with(".meta.json")) {
      metas.push_back(entry.path());
    }
  }
  std::sort(metas.begin(), metas.end());
  const auto read_column = [](const std::string &p) {
    std::ifstream in(p);
    if (!in) {
      fail(ErrorKind::Io, "cannot read " + p);
    }
    std::vector<double> v;
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) {
        continue;
      }
      v.push_back(parse_double(line.substr(comma + 1), p));
    }
    return v;
  };
  std::vector<TrainingSample> out;
  for (const auto &meta_path : metas) {
    auto stem = meta_path.string();
    stem.resize(stem.size() - std::string(".meta.json").size());
    TrainingSample s;
    std::ifstream in(meta_path);
    const auto meta = nlohmann::json::parse(in);
    s.fundamental_hz = meta.at("fundamental_hz").get<double>();
    s.spectrum = read_column(stem + ".spectrum.csv");
    s.label_mask = read_column(stem + ".mask.csv");
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace magtach
