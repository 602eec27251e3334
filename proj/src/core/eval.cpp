#include "magtach/eval.hpp"

#include "magtach/error.hpp"
#include "magtach/fft.hpp"
#include "magtach/text.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace magtach {

double rmae(std::span<const double> estimates, std::span<const double> truths) {
  require(estimates.size() == truths.size(), "rmae needs equally long lists");
  require(!truths.empty(), "rmae needs at least one pair");
  double sum = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    require(truths[i] != 0.0, "rmae truth values must be nonzero");
    sum += std::abs(estimates[i] - truths[i]) / std::abs(truths[i]);
  }
  return 100.0 * sum / static_cast<double>(truths.size());
}

double autocorrelation_baseline(std::span<const double> signal, double fs, std::size_t min_lag,
                                std::size_t max_lag) {
  require(fs > 0.0, "sample rate must be positive");
  require(min_lag >= 1 && min_lag <= max_lag, "lag bounds must satisfy 1 <= min <= max");
  require(max_lag < signal.size(), "max lag must be shorter than the signal");
  const double energy = std::inner_product(signal.begin(), signal.end(), signal.begin(), 0.0);
  require(energy > 0.0, "autocorrelation baseline needs a nonzero signal");
  const auto c = fft::cross_correlation(signal, signal, max_lag);
  std::size_t best = min_lag;
  for (auto lag = min_lag; lag <= max_lag; ++lag) {
    if (c[max_lag + lag] > c[max_lag + best]) {
      best = lag;
    }
  }
  return 60.0 * fs / static_cast<double>(best);
}

double peak_detection_baseline(const PowerSpectrum &psd, double f_lo_hz, double f_hi_hz) {
  std::size_t best = psd.size();
  for (std::size_t b = 0; b < psd.size(); ++b) {
    const double f = psd.frequencies[b];
    if (f < f_lo_hz || f > f_hi_hz) {
      continue;
    }
    if (best == psd.size() || psd.densities[b] > psd.densities[best]) {
      best = b;
    }
  }
  require(best != psd.size(), "peak detection band contains no bins");
  return 60.0 * psd.frequencies[best];
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    auto j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
      ++j;
    }
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (auto k = i; k <= j; ++k) {
      r[idx[k]] = avg;
    }
    i = j + 1;
  }
  return r;
}

} // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman needs two equal lists of length >= 2");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    return 0.0;
  }
  return sxy / std::sqrt(sxx * syy);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index));
}

Capture simulate_capture(const Scenario &scenario, std::span<const MotorProfile> motors,
                         double duration_s, std::uint64_t seed) {
  const auto &cap = scenario.capture;
  Capture c;
  c.trace = simulate_array(motors, scenario.geometry, scenario.noise, scenario.coil, duration_s,
                           cap.fs, seed);
  const auto n = c.trace.length();
  const double bg_duration = static_cast<double>(n * cap.background_frames) / cap.fs;
  const auto background = simulate_array(std::span<const MotorProfile>{}, scenario.geometry,
                                         scenario.noise, scenario.coil, bg_duration, cap.fs,
                                         splitmix64(seed ^ 0x6e6f697365726566ULL));
  c.noise = make_noise_reference(background.channels.front(), n);
  return c;
}

Capture simulate_capture(const Scenario &scenario, std::uint64_t seed) {
  return simulate_capture(scenario, scenario.motors, scenario.capture.duration_s, seed);
}

namespace {

Point2 array_center(const ArrayGeometry &g) {
  Point2 c;
  for (const auto &s : g.sensors) {
    c.x += s.x;
    c.y += s.y;
  }
  c.x /= static_cast<double>(g.sensors.size());
  c.y /= static_cast<double>(g.sensors.size());
  return c;
}

std::size_t max_lag_samples(const Scenario &s) {
  return static_cast<std::size_t>(std::llround(s.pipeline.max_lag_s * s.capture.fs));
}

template <class Fn> void parallel_for(std::size_t count, std::size_t workers, Fn &&fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      fn(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (auto i = next++; i < count; i = next++) {
          fn(i);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto &t : pool) {
    t.join();
  }
  for (auto &e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

} // namespace

TrainingData build_training_data(const Scenario &scenario, std::uint64_t seed) {
  scenario.validate();
  const auto &tr = scenario.train;
  const auto center = array_center(scenario.geometry);
  TrainingData data;
  data.raw.resize(tr.base_traces);
  parallel_for(tr.base_traces, scenario.sweep.workers, [&](std::size_t i) {
    const auto s = trial_seed(seed, i);
    std::mt19937_64 rng(s);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    MotorProfile m = scenario.motors.front();
    const double rpm = tr.rpm_min + (tr.rpm_max - tr.rpm_min) * unit(rng);
    m.period_s = 60.0 / rpm;
    const double d = tr.distances_cm[i % tr.distances_cm.size()];
    m.position = {center.x, center.y + d};
    for (auto &h : m.harmonics) {
      h.amplitude *= 1.0 + tr.amplitude_jitter * (2.0 * unit(rng) - 1.0);
      h.phase = 2.0 * std::acos(-1.0) * unit(rng);
    }
    const auto cap = simulate_capture(scenario, std::span<const MotorProfile>(&m, 1), tr.duration_s, s);
    RawSample raw;
    raw.signal = delay_and_sum(cap.trace, cap.noise, max_lag_samples(scenario));
    raw.sample_rate_hz = scenario.capture.fs;
    raw.fundamental_hz = m.fundamental_hz();
    raw.n_harmonics = m.max_harmonic();
    data.raw[i] = std::move(raw);
  });
  for (const auto &raw : data.raw) {
    for (double alpha : tr.alphas) {
      if (auto s = augment(raw, alpha, scenario.pipeline.spectrum, scenario.pipeline.delta_f_hz)) {
        data.samples.push_back(std::move(*s));
      }
    }
  }
  return data;
}

HarmonicWeights fit_harmonics_for(const PpspWeights *weights, std::span<const TrainingSample> samples,
                                  const Scenario &scenario) {
  const auto &spec = scenario.pipeline.spectrum;
  const double res = scenario.capture.fs / static_cast<double>(spec.segment_len);
  std::vector<LabeledDetection> pairs;
  for (const auto &s : samples) {
    PowerSpectrum psd;
    psd.densities = s.spectrum;
    psd.resolution_hz = res;
    psd.normalized = true;
    for (std::size_t b = 0; b < s.spectrum.size(); ++b) {
      psd.frequencies.push_back(static_cast<double>(b) * res);
    }
    pairs.push_back({run_detector(psd, weights, scenario.pipeline), s.fundamental_hz});
  }
  return fit_beta(pairs, scenario.m_harmonics, scenario.train.prior_precision,
                  scenario.pipeline.delta_f_hz, scenario.pipeline.band);
}

ScenarioTraining train_scenario(const Scenario &scenario, std::uint64_t seed,
                                const std::function<void(std::size_t, double)> &on_epoch) {
  const auto data = build_training_data(scenario, seed);
  if (data.samples.empty()) {
    fail(ErrorKind::Pipeline, "training scenario produced no usable samples");
  }
  auto cfg = scenario.detector_config();
  TrainOptions opt;
  opt.epochs = scenario.train.epochs;
  opt.learning_rate = scenario.train.learning_rate;
  opt.batch_size = scenario.train.batch_size;
  opt.seed = seed;
  opt.on_epoch = on_epoch;
  ScenarioTraining out;
  out.result = train(data.samples, init_weights(cfg), opt);
  out.sample_count = data.samples.size();
  out.harmonics = fit_harmonics_for(&out.result.weights, data.samples, scenario);
  return out;
}

double trial_error_pct(double estimate, double truth, bool failed) {
  if (failed || !std::isfinite(estimate)) {
    return 100.0;
  }
  return 100.0 * std::abs(estimate - truth) / truth;
}

BenchResult run_distance_sweep(const Scenario &scenario, const PpspWeights *detector,
                               const HarmonicWeights &harmonics, std::uint64_t seed) {
  scenario.validate();
  const auto &sw = scenario.sweep;
  const auto &cap = scenario.capture;
  BenchResult result;
  result.seed = seed;
  result.fingerprint = fingerprint(scenario);
  const auto center = array_center(scenario.geometry);
  const std::size_t total = sw.distances_cm.size() * sw.trials;
  result.trials.resize(total);
  parallel_for(total, sw.workers, [&](std::size_t g) {
    TrialRecord r;
    r.distance_cm = sw.distances_cm[g / std::max<std::size_t>(1, sw.trials)];
    r.trial = g % sw.trials;
    r.seed = trial_seed(seed, r.trial);
    std::mt19937_64 rng(r.seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::acos(-1.0));
    MotorProfile m = scenario.motors.front();
    r.true_rpm = sw.speeds_rpm[r.trial % sw.speeds_rpm.size()];
    m.period_s = 60.0 / r.true_rpm;
    m.position = {center.x, center.y + r.distance_cm};
    for (auto &h : m.harmonics) {
      h.phase = phase(rng);
    }
    const auto capture =
        simulate_capture(scenario, std::span<const MotorProfile>(&m, 1), cap.duration_s, r.seed);
    try {
      const auto e = estimate_rpm(capture.trace, capture.noise, detector, harmonics, scenario.pipeline);
      r.magtach_rpm = e.rpm;
      r.low_confidence = e.low_confidence;
    } catch (const Error &e) {
      r.magtach_failed = true;
      r.magtach_rpm = std::numeric_limits<double>::quiet_NaN();
      r.failure = e.what();
    }
    const auto &raw = capture.trace.channels.front();
    const auto min_lag = static_cast<std::size_t>(std::floor(cap.fs / sw.baseline_f_max_hz));
    const auto max_lag = std::min(raw.size() - 1,
                                  static_cast<std::size_t>(std::ceil(cap.fs / sw.baseline_f_min_hz)));
    try {
      r.autocorr_rpm = autocorrelation_baseline(raw, cap.fs, std::max<std::size_t>(1, min_lag), max_lag);
    } catch (const Error &) {
      r.autocorr_rpm = std::numeric_limits<double>::quiet_NaN();
    }
    try {
      const auto &sp = scenario.pipeline.spectrum;
      const auto psd = welch_psd(raw, cap.fs, sp.segment_len, sp.overlap, sp.window);
      r.peak_rpm = peak_detection_baseline(psd, sw.baseline_f_min_hz, sw.baseline_f_max_hz);
    } catch (const Error &) {
      r.peak_rpm = std::numeric_limits<double>::quiet_NaN();
    }
    result.trials[g] = std::move(r);
  });
  for (std::size_t di = 0; di < sw.distances_cm.size() && sw.trials > 0; ++di) {
    DistanceAggregate a;
    a.distance_cm = sw.distances_cm[di];
    a.trials = sw.trials;
    for (std::size_t t = 0; t < sw.trials; ++t) {
      const auto &r = result.trials[di * sw.trials + t];
      a.magtach_rmae += trial_error_pct(r.magtach_rpm, r.true_rpm, r.magtach_failed);
      a.autocorr_rmae += trial_error_pct(r.autocorr_rpm, r.true_rpm, false);
      a.peak_rmae += trial_error_pct(r.peak_rpm, r.true_rpm, false);
      a.magtach_dropped += r.magtach_failed ? 1 : 0;
    }
    const auto n = static_cast<double>(sw.trials);
    a.magtach_rmae /= n;
    a.autocorr_rmae /= n;
    a.peak_rmae /= n;
    result.aggregates.push_back(a);
  }
  return result;
}

namespace {

std::ofstream open_csv(const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) {
    fail(ErrorKind::Io, "cannot write " + path.string());
  }
  return out;
}

} // namespace

void write_bench(const BenchResult &result, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  const auto tag = "# fingerprint=" + result.fingerprint + " seed=" + std::to_string(result.seed) + "\n";
  {
    auto out = open_csv(dir / "trials.csv");
    out << tag
        << "distance_cm,trial,seed,true_rpm,magtach_rpm,autocorr_rpm,peak_rpm,magtach_err_pct,"
           "autocorr_err_pct,peak_err_pct,magtach_failed,low_confidence\n";
    for (const auto &r : result.trials) {
      out << format_double(r.distance_cm) << ',' << r.trial << ',' << r.seed << ','
          << format_double(r.true_rpm) << ',' << format_double(r.magtach_rpm) << ','
          << format_double(r.autocorr_rpm) << ',' << format_double(r.peak_rpm) << ','
          << format_double(trial_error_pct(r.magtach_rpm, r.true_rpm, r.magtach_failed)) << ','
          << format_double(trial_error_pct(r.autocorr_rpm, r.true_rpm, false)) << ','
          << format_double(trial_error_pct(r.peak_rpm, r.true_rpm, false)) << ','
          << (r.magtach_failed ? 1 : 0) << ',' << (r.low_confidence ? 1 : 0) << '\n';
    }
    if (!out) {
      fail(ErrorKind::Io, "failed writing trials.csv");
    }
  }
  {
    auto out = open_csv(dir / "aggregate.csv");
    out << tag << "distance_cm,trials,magtach_rmae_pct,autocorr_rmae_pct,peak_rmae_pct,magtach_dropped\n";
    for (const auto &a : result.aggregates) {
      out << format_double(a.distance_cm) << ',' << a.trials << ',' << format_double(a.magtach_rmae)
          << ',' << format_double(a.autocorr_rmae) << ',' << format_double(a.peak_rmae) << ','
          << a.magtach_dropped << '\n';
    }
    if (!out) {
      fail(ErrorKind::Io, "failed writing aggregate.csv");
    }
  }
  nlohmann::ordered_json j;
  j["fingerprint"] = result.fingerprint;
  j["seed"] = result.seed;
  j["trials"] = result.trials.size();
  nlohmann::ordered_json rm;
  rm["magtach"] = nlohmann::ordered_json::object();
  rm["autocorrelation"] = nlohmann::ordered_json::object();
  rm["peak_detection"] = nlohmann::ordered_json::object();
  auto dropped = nlohmann::ordered_json::object();
  for (const auto &a : result.aggregates) {
    const auto key = format_double(a.distance_cm);
    rm["magtach"][key] = a.magtach_rmae;
    rm["autocorrelation"][key] = a.autocorr_rmae;
    rm["peak_detection"][key] = a.peak_rmae;
    dropped[key] = a.magtach_dropped;
  }
  j["rmae_pct"] = std::move(rm);
  j["magtach_dropped"] = std::move(dropped);
  std::ofstream out(dir / "summary.json");
  out << j.dump(2) << '\n';
  if (!out) {
    fail(ErrorKind::Io, "failed writing summary.json");
  }
}

SerMap run_ser_map(const Scenario &scenario, std::uint64_t seed) {
  scenario.validate();
  const auto &sm = scenario.sermap;
  const auto &cap = scenario.capture;
  ArrayGeometry geom = scenario.geometry;
  geom.sensors = sm.sensors;
  if (sm.calibrate) {
    geom.effective_speed_cm_s =
        calibrate_effective_speed(geom, sm.calibrate_point, sm.calibrate_delay_ms / 1000.0);
  }
  SerMap map;
  map.effective_speed_cm_s = geom.effective_speed_cm_s;
  map.delays_ms = sm.delays_ms;
  map.fingerprint = fingerprint(scenario);
  const auto axis = [&](double lo, double hi) {
    std::vector<double> v;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / sm.step_cm + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) {
      v.push_back(lo + static_cast<double>(i) * sm.step_cm);
    }
    return v;
  };
  map.xs = axis(sm.x_min_cm, sm.x_max_cm);
  map.ys = axis(sm.y_min_cm, sm.y_max_cm);
  map.grids.assign(sm.delays_ms.size(),
                   std::vector<std::vector<double>>(map.ys.size(), std::vector<double>(map.xs.size())));
  const NoiseProfile noise = sm.with_noise ? scenario.noise : NoiseProfile{};
  const std::size_t cells = map.xs.size() * map.ys.size();
  parallel_for(cells, scenario.sweep.workers, [&](std::size_t cell) {
    const auto row = cell / map.xs.size();
    const auto col = cell % map.xs.size();
    MotorProfile m = scenario.motors.front();
    m.position = {map.xs[col], map.ys[row]};
    const auto trace =
        simulate_array(m, geom, noise, scenario.coil, sm.duration_s, cap.fs, trial_seed(seed, cell));
    for (std::size_t d = 0; d < sm.delays_ms.size(); ++d) {
      map.grids[d][row][col] =
          compute_ser(trace.channels[0], trace.channels[1], sm.delays_ms[d] / 1000.0, cap.fs);
    }
  });
  return map;
}

void write_ser_map(const SerMap &map, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t d = 0; d < map.delays_ms.size(); ++d) {
    const auto name = "ser_" + format_double(map.delays_ms[d]) + "ms.csv";
    auto out = open_csv(dir / name);
    out << "# fingerprint=" << map.fingerprint << " delay_ms=" << format_double(map.delays_ms[d])
        << " effective_speed_cm_s=" << format_double(map.effective_speed_cm_s) << '\n';
    out << "y_cm";
    for (double x : map.xs) {
      out << ',' << format_double(x);
    }
    out << '\n';
    for (std::size_t r = 0; r < map.ys.size(); ++r) {
      out << format_double(map.ys[r]);
      for (std::size_t c = 0; c < map.xs.size(); ++c) {
        out << ',' << format_double(map.grids[d][r][c]);
      }
      out << '\n';
    }
    if (!out) {
      fail(ErrorKind::Io, "failed writing " + name);
    }
  }
}

} // namespace magtach
