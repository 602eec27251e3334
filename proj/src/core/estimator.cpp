#include "magtach/estimator.hpp"

#include "magtach/error.hpp"
#include "magtach/text.hpp"

#include "json.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace magtach {

namespace {

constexpr double kTol = 1e-9;

double resolution_of(const DetectionMap &map) {
  if (map.frequencies.size() > 1) {
    return map.frequencies[1] - map.frequencies[0];
  }
  return map.resolution_hz > 0.0 ? map.resolution_hz : 1.0;
}

bool in_band(const DetectionMap &map, double g) {
  return !map.frequencies.empty() && g >= map.frequencies.front() - kTol &&
         g <= map.frequencies.back() + kTol;
}

// Runs one pipeline stage, prefixing any error with the stage name.
template <class F> auto stage(const char *name, F &&f) {
  try {
    return f();
  } catch (const Error &e) {
    fail(e.kind(), std::string(name) + ": " + e.what());
  } catch (const std::exception &e) {
    fail(ErrorKind::Pipeline, std::string(name) + ": " + e.what());
  }
}

double upper_candidate(const DetectionMap &map, double delta_f, const CandidateBand &band) {
  if (band.f_max_hz > 0.0) {
    return band.f_max_hz;
  }
  const double half = map.frequencies.back() / 2.0;
  return std::floor(half / delta_f + kTol) * delta_f;
}

std::vector<double> features(const DetectionMap &map, double f, std::size_t m, double delta_f) {
  std::vector<double> row(m);
  for (std::size_t k = 1; k <= m; ++k) {
    row[k - 1] = fuzzy_detection(map, static_cast<double>(k) * f, delta_f);
  }
  return row;
}

// Mean detection over bins not within ±Δf of any of the first M multiples.
double off_harmonic_mean(const DetectionMap &map, double f, std::size_t m, double delta_f) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < map.size(); ++b) {
    const double fb = map.frequencies[b];
    const double k = std::round(fb / f);
    const bool near = k >= 1.0 && k <= static_cast<double>(m) && std::abs(fb - k * f) <= delta_f + kTol;
    if (!near) {
      sum += map.probabilities[b];
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double exact_bin_score(const DetectionMap &map, double f) {
  const double res = resolution_of(map);
  double s = 0.0;
  for (int k = 1; in_band(map, k * f); ++k) {
    const auto b = static_cast<std::size_t>(std::llround((k * f - map.frequencies.front()) / res));
    if (b < map.size()) {
      s += map.probabilities[b] / k;
    }
  }
  return s;
}

} // namespace

HarmonicWeights HarmonicWeights::inverse_k(std::size_t m_harmonics) {
  require(m_harmonics >= 1, "harmonic count must be at least 1");
  HarmonicWeights w;
  for (std::size_t k = 1; k <= m_harmonics; ++k) {
    w.beta.push_back(1.0 / static_cast<double>(k));
  }
  return w;
}

double HarmonicWeights::beta_sum() const {
  double s = 0.0;
  for (double b : beta) {
    s += b;
  }
  return s;
}

void HarmonicWeights::validate() const {
  require(!beta.empty(), "harmonic weights need at least one coefficient");
  for (double b : beta) {
    require(std::isfinite(b), "harmonic weights must be finite");
  }
  require(std::isfinite(intercept) && std::isfinite(off_harmonic_penalty),
          "harmonic weights must be finite");
}

void save_harmonic_weights(const HarmonicWeights &w, const std::filesystem::path &path) {
  w.validate();
  std::ofstream out(path);
  if (!out) {
    fail(ErrorKind::Io, "cannot write harmonic weights " + path.string());
  }
  out << "magtach-harmonic-weights 1\n";
  out << "intercept " << format_double(w.intercept) << '\n';
  out << "off_harmonic_penalty " << format_double(w.off_harmonic_penalty) << '\n';
  out << "fit " << (w.fit_info.empty() ? "default" : w.fit_info) << '\n';
  for (std::size_t k = 0; k < w.beta.size(); ++k) {
    out << "beta " << k + 1 << ' ' << format_double(w.beta[k]) << '\n';
  }
  if (!out) {
    fail(ErrorKind::Io, "failed writing harmonic weights " + path.string());
  }
}

HarmonicWeights load_harmonic_weights(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorKind::Io, "cannot open harmonic weights " + path.string());
  }
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || trim(line) != "magtach-harmonic-weights 1") {
    fail(ErrorKind::Io, path.string() + ":1: not a harmonic weights file");
  }
  HarmonicWeights w;
  w.fit_info.clear();
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = path.string() + ":" + std::to_string(lineno);
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') {
      continue;
    }
    const auto sp = t.find(' ');
    const auto key = t.substr(0, sp);
    const auto rest = sp == std::string_view::npos ? std::string_view{} : trim(t.substr(sp));
    if (key == "intercept") {
      w.intercept = parse_double(rest, where);
    } else if (key == "off_harmonic_penalty") {
      w.off_harmonic_penalty = parse_double(rest, where);
    } else if (key == "fit") {
      w.fit_info = std::string(rest);
    } else if (key == "beta") {
      const auto sp2 = rest.find(' ');
      if (sp2 == std::string_view::npos) {
        fail(ErrorKind::Io, where + ": expected 'beta k value'");
      }
      const auto k = parse_int(rest.substr(0, sp2), where);
      if (k != static_cast<long long>(w.beta.size()) + 1) {
        fail(ErrorKind::Io, where + ": harmonic indices must run 1..M in order");
      }
      w.beta.push_back(parse_double(rest.substr(sp2), where));
    } else {
      fail(ErrorKind::Io, where + ": unknown key '" + std::string(key) + "'");
    }
  }
  if (w.beta.empty()) {
    fail(ErrorKind::Io, path.string() + ": no beta coefficients");
  }
  return w;
}

std::string speed_estimate_csv_header() {
  return "fine_hz,coarse_hz,rpm,confidence,low_confidence,shortfall";
}

std::string to_csv_row(const SpeedEstimate &e) {
  return format_double(e.fine_hz) + ',' + format_double(e.coarse_hz) + ',' +
         format_double(e.rpm) + ',' + format_double(e.confidence) + ',' +
         (e.low_confidence ? "1" : "0") + ',' + (e.shortfall ? "1" : "0");
}

std::string to_json(const SpeedEstimate &e) {
  nlohmann::ordered_json j{{"fine_hz", e.fine_hz},
                           {"coarse_hz", e.coarse_hz},
                           {"rpm", e.rpm},
                           {"confidence", e.confidence},
                           {"low_confidence", e.low_confidence},
                           {"shortfall", e.shortfall}};
  return j.dump();
}

double fuzzy_detection(const DetectionMap &map, double g_hz, double delta_f_hz) {
  if (!in_band(map, g_hz)) {
    return 0.0;
  }
  const double res = resolution_of(map);
  const double f0 = map.frequencies.front();
  const auto lo = static_cast<long long>(std::ceil((g_hz - delta_f_hz - f0) / res - kTol));
  const auto hi = static_cast<long long>(std::floor((g_hz + delta_f_hz - f0) / res + kTol));
  const auto n = static_cast<long long>(map.size());
  double best = 0.0;
  for (auto b = std::max(0LL, lo); b <= std::min(n - 1, hi); ++b) {
    best = std::max(best, map.probabilities[static_cast<std::size_t>(b)]);
  }
  return best;
}

FuzzyLikelihood compute_likelihood(const DetectionMap &detection, const HarmonicWeights &weights,
                                   double delta_f_hz, CandidateBand band) {
  weights.validate();
  require(delta_f_hz > 0.0, "delta_f must be positive");
  require(detection.probabilities.size() == detection.frequencies.size(),
          "detection map frequencies and probabilities differ in length");
  require(!detection.frequencies.empty(), "empty detection map");
  const double f_max = upper_candidate(detection, delta_f_hz, band);
  FuzzyLikelihood out;
  out.delta_f_hz = delta_f_hz;
  for (std::size_t i = 0;; ++i) {
    const double f = band.f_min_hz + static_cast<double>(i) * delta_f_hz;
    if (f > f_max + kTol) {
      break;
    }
    if (f <= 0.0) {
      continue;
    }
    double y = weights.intercept;
    for (std::size_t k = 1; k <= weights.m(); ++k) {
      y += weights.beta[k - 1] * fuzzy_detection(detection, static_cast<double>(k) * f, delta_f_hz);
    }
    if (weights.off_harmonic_penalty != 0.0) {
      y -= weights.off_harmonic_penalty * off_harmonic_mean(detection, f, weights.m(), delta_f_hz);
    }
    out.candidates.push_back(f);
    out.y.push_back(y);
  }
  require(!out.candidates.empty(), "empty candidate grid");
  return out;
}

HarmonicWeights fit_beta_design(const std::vector<std::vector<double>> &x,
                                std::span<const double> y, double prior_precision,
                                bool fit_intercept) {
  require(!x.empty() && x.size() == y.size(), "fit_beta needs one target per feature row");
  require(prior_precision >= 0.0 && std::isfinite(prior_precision),
          "prior precision must be non-negative");
  const auto n = static_cast<Eigen::Index>(x.size());
  const auto m = static_cast<Eigen::Index>(x.front().size());
  require(m >= 1, "fit_beta needs at least one feature");
  Eigen::MatrixXd X(n, m);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(static_cast<Eigen::Index>(x[i].size()) == m, "ragged feature rows");
    for (Eigen::Index j = 0; j < m; ++j) {
      X(i, j) = x[i][j];
    }
    Y(i) = y[i];
  }
  require(X.cwiseAbs().maxCoeff() > 0.0, "degenerate design: all features are zero");
  Eigen::RowVectorXd mean_x = Eigen::RowVectorXd::Zero(m);
  double mean_y = 0.0;
  if (fit_intercept) {
    mean_x = X.colwise().mean();
    mean_y = Y.mean();
    X.rowwise() -= mean_x;
    Y.array() -= mean_y;
  }
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += prior_precision;
  const Eigen::VectorXd rhs = X.transpose() * Y;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success) {
    fail(ErrorKind::InvalidInput, "degenerate design: normal equations are singular");
  }
  const Eigen::VectorXd beta = ldlt.solve(rhs);
  const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  if (!beta.allFinite() || (A * beta - rhs).norm() > 1e-8 * scale * (1.0 + rhs.norm())) {
    fail(ErrorKind::InvalidInput, "degenerate design: normal equations are singular");
  }
  HarmonicWeights w;
  w.beta.assign(beta.data(), beta.data() + m);
  w.intercept = fit_intercept ? mean_y - mean_x.dot(beta) : 0.0;
  std::ostringstream info;
  info << "rows=" << n << " lambda=" << format_double(prior_precision);
  w.fit_info = info.str();
  return w;
}

HarmonicWeights fit_beta(std::span<const LabeledDetection> training, std::size_t m_harmonics,
                         double prior_precision, double delta_f_hz, CandidateBand band) {
  require(m_harmonics >= 1, "harmonic count must be at least 1");
  require(training.size() >= m_harmonics + 1, "fit_beta needs at least M+1 training pairs");
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto &pair : training) {
    const auto &map = pair.map;
    require(!map.frequencies.empty(), "empty detection map in training set");
    const double f0 = pair.fundamental_hz;
    require(f0 > 0.0, "training fundamental must be positive");
    const double f_max = upper_candidate(map, delta_f_hz, band);
    const auto usable = [&](double f) { return f >= band.f_min_hz - kTol && f <= f_max + kTol; };
    x.push_back(features(map, f0, m_harmonics, delta_f_hz));
    y.push_back(1.0);
    std::vector<double> negatives{f0 / 3.0, f0 / 2.0, 2.0 * f0, 3.0 * f0, f0 - 3.0 * delta_f_hz,
                                  f0 + 3.0 * delta_f_hz};
    std::size_t i = 0;
    for (double f = band.f_min_hz; f <= f_max + kTol; f += delta_f_hz, ++i) {
      if (i % 8 == 0 && std::abs(f - f0) > 2.0 * delta_f_hz) {
        negatives.push_back(f);
      }
    }
    for (double f : negatives) {
      if (usable(f)) {
        x.push_back(features(map, f, m_harmonics, delta_f_hz));
        y.push_back(0.0);
      }
    }
  }
  auto w = fit_beta_design(x, y, prior_precision, true);
  w.fit_info = "pairs=" + std::to_string(training.size()) + " " + w.fit_info;
  return w;
}

CoarseResult coarse_estimate(const FuzzyLikelihood &likelihood, const DetectionMap &detection,
                             int n_support, double detection_threshold) {
  require(!likelihood.y.empty(), "empty likelihood");
  const double df = likelihood.delta_f_hz;
  CoarseResult r;
  r.removed.assign(likelihood.size(), false);
  for (std::size_t i = 0; i < likelihood.size(); ++i) {
    const double f = likelihood.candidates[i];
    bool any_checked = false;
    bool supported = false;
    for (int m = 2; m <= n_support; ++m) {
      if (!in_band(detection, m * f)) {
        break;
      }
      any_checked = true;
      if (fuzzy_detection(detection, m * f, df) >= detection_threshold) {
        supported = true;
        break;
      }
    }
    r.removed[i] = any_checked && !supported;
  }
  const auto pick = [&](bool use_removal) {
    std::size_t best = likelihood.size();
    double best_exact = 0.0;
    for (std::size_t i = 0; i < likelihood.size(); ++i) {
      if (use_removal && r.removed[i]) {
        continue;
      }
      if (best == likelihood.size() || likelihood.y[i] > likelihood.y[best]) {
        best = i;
        best_exact = exact_bin_score(detection, likelihood.candidates[i]);
      } else if (likelihood.y[i] == likelihood.y[best]) {
        const double e = exact_bin_score(detection, likelihood.candidates[i]);
        if (e > best_exact) {
          best = i;
          best_exact = e;
        }
      }
    }
    return best;
  };
  auto best = pick(true);
  if (best == likelihood.size()) {
    best = pick(false);
    r.low_confidence = true;
  }
  r.index = best;
  r.frequency_hz = likelihood.candidates[best];
  r.score = likelihood.y[best];
  return r;
}

double fine_estimate(std::span<const double> enhanced, double fs, double coarse_hz, int gamma,
                     double delta_f_hz, const FineSettings &settings) {
  require(gamma >= 1, "gamma must be at least 1");
  require(delta_f_hz > 0.0, "delta_f must be positive");
  require(coarse_hz > 0.0 && coarse_hz < fs / 2.0, "coarse estimate outside the signal band");
  std::vector<double> freqs;
  const double step = delta_f_hz / gamma;
  for (int i = -gamma; i <= gamma; ++i) {
    const double f = coarse_hz + i * step;
    if (f > 0.0 && f < fs / 2.0) {
      freqs.push_back(f);
    }
  }
  require(!freqs.empty(), "fine search window is empty");
  const auto p = welch_at(enhanced, fs, settings.segment_len, settings.overlap, settings.window, freqs);
  const auto it = std::max_element(p.begin(), p.end());
  return freqs[static_cast<std::size_t>(it - p.begin())];
}

void PipelineConfig::validate() const {
  require(max_lag_s >= 0.0, "pipeline.max_lag_s must be non-negative");
  require(delta_f_hz > 0.0, "pipeline.delta_f must be positive");
  require(gamma >= 1, "pipeline.gamma must be at least 1");
  require(n_support >= 2, "pipeline.n_support must be at least 2");
  require(band.f_min_hz > 0.0, "pipeline.f_min must be positive");
  require(detection_threshold > 0.0 && detection_threshold <= 1.0,
          "pipeline.detection_threshold must lie in (0,1]");
  require(spectrum.segment_len >= 2 && spectrum.input_bins >= 2, "invalid spectrum settings");
}

DetectionMap run_detector(const PowerSpectrum &spectrum, const PpspWeights *weights,
                          const PipelineConfig &config) {
  if (config.detector == DetectorKind::Threshold) {
    return threshold_detector(spectrum, config.threshold_quantile);
  }
  if (weights == nullptr) {
    fail(ErrorKind::Config, "PPSP detector selected but no weights were supplied");
  }
  return ppsp_forward(spectrum, *weights);
}

namespace {

struct Prepared {
  PipelineTrace trace;
  FineSettings fine;
  double fs = 0.0;
};

Prepared prepare(const SensorTrace &trace, const NoiseReference &noise, const PpspWeights *detector,
                 const PipelineConfig &config) {
  config.validate();
  Prepared p;
  p.fs = trace.sample_rate_hz;
  p.fine = {config.spectrum.segment_len, config.spectrum.overlap, config.spectrum.window};
  p.trace.enhanced = stage("delay_and_sum", [&] {
    trace.validate();
    const auto lag = static_cast<std::size_t>(std::llround(config.max_lag_s * trace.sample_rate_hz));
    return delay_and_sum_detailed(trace, noise, lag);
  });
  p.trace.spectrum = stage("welch", [&] {
    return coarse_spectrum(p.trace.enhanced.enhanced, trace.sample_rate_hz, config.spectrum);
  });
  p.trace.detection = stage("detector", [&] { return run_detector(p.trace.spectrum, detector, config); });
  return p;
}

SpeedEstimate finish(const Prepared &p, const DetectionMap &map, const HarmonicWeights &harmonics,
                     const PipelineConfig &config, FuzzyLikelihood *likelihood_out,
                     bool *all_removed) {
  auto lik = stage("likelihood", [&] {
    return compute_likelihood(map, harmonics, config.delta_f_hz, config.band);
  });
  const auto coarse = stage("coarse_estimate", [&] {
    return coarse_estimate(lik, map, config.n_support, config.detection_threshold);
  });
  SpeedEstimate e;
  e.coarse_hz = coarse.frequency_hz;
  e.fine_hz = stage("fine_estimate", [&] {
    return fine_estimate(p.trace.enhanced.enhanced, p.fs, coarse.frequency_hz, config.gamma,
                         config.delta_f_hz, p.fine);
  });
  e.rpm = 60.0 * e.fine_hz;
  const double norm = harmonics.beta_sum();
  e.confidence = norm > 0.0 ? coarse.score / norm : coarse.score;
  e.low_confidence = coarse.low_confidence;
  if (all_removed != nullptr) {
    *all_removed = coarse.low_confidence;
  }
  if (likelihood_out != nullptr) {
    *likelihood_out = std::move(lik);
  }
  return e;
}

} // namespace

SpeedEstimate estimate_rpm(const SensorTrace &trace, const NoiseReference &noise,
                           const PpspWeights *detector, const HarmonicWeights &harmonics,
                           const PipelineConfig &config, PipelineTrace *debug) {
  auto p = prepare(trace, noise, detector, config);
  auto e = finish(p, p.trace.detection, harmonics, config, &p.trace.likelihood, nullptr);
  if (debug != nullptr) {
    *debug = std::move(p.trace);
  }
  return e;
}

std::vector<SpeedEstimate> estimate_rpm_multi(const SensorTrace &trace,
                                              const NoiseReference &noise,
                                              const PpspWeights *detector,
                                              const HarmonicWeights &harmonics,
                                              const PipelineConfig &config,
                                              std::size_t k_sources) {
  require(k_sources >= 1, "k_sources must be at least 1");
  const auto p = prepare(trace, noise, detector, config);
  DetectionMap residual = p.trace.detection;
  std::vector<SpeedEstimate> out;
  bool shortfall = false;
  const double radius = 2.0 * config.delta_f_hz;
  for (std::size_t s = 0; s < k_sources; ++s) {
    bool all_removed = false;
    auto e = finish(p, residual, harmonics, config, nullptr, &all_removed);
    if (all_removed && !out.empty()) {
      shortfall = true;
      break;
    }
    out.push_back(e);
    if (all_removed) {
      shortfall = k_sources > 1;
      break;
    }
    for (std::size_t b = 0; b < residual.size(); ++b) {
      const double fb = residual.frequencies[b];
      const double k = std::max(1.0, std::round(fb / e.fine_hz));
      if (std::abs(fb - k * e.fine_hz) <= radius + kTol) {
        residual.probabilities[b] = 0.0;
      }
    }
  }
  if (shortfall) {
    for (auto &e : out) {
      e.shortfall = true;
    }
  }
  return out;
}

} // namespace magtach
