#include "magtach/config.hpp"

#include "magtach/error.hpp"
#include "magtach/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace magtach {

namespace {

using Setter = std::function<void(Scenario &, std::string_view, const std::string &)>;
using Getter = std::function<std::string(const Scenario &)>;

struct Key {
  std::string name;
  std::string help;
  Setter set;
  Getter get;
  std::size_t motor_slot = 0; // 1-based when the key belongs to a motor section
};

[[noreturn]] void bad(const std::string &where, const std::string &msg) {
  fail(ErrorKind::Config, where + ": " + msg);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) {
      break;
    }
    start = pos + 1;
  }
  return out;
}

double to_double(std::string_view v, const std::string &where) {
  return parse_double(v, where, ErrorKind::Config);
}

std::size_t to_size(std::string_view v, const std::string &where) {
  const auto n = parse_int(v, where, ErrorKind::Config);
  if (n < 0) {
    bad(where, "expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return static_cast<std::size_t>(n);
}

bool to_bool(std::string_view v, const std::string &where) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    return true;
  }
  if (v == "false" || v == "0" || v == "no" || v == "off") {
    return false;
  }
  bad(where, "expected true/false, got '" + std::string(v) + "'");
}

// "a, b, c" or "start:stop:step" (inclusive).
std::vector<double> to_list(std::string_view v, const std::string &where) {
  std::vector<double> out;
  v = trim(v);
  if (v.empty()) {
    return out;
  }
  if (v.find(':') != std::string_view::npos && v.find(',') == std::string_view::npos) {
    const auto parts = split(v, ':');
    if (parts.size() != 3) {
      bad(where, "range must be start:stop:step");
    }
    const double a = to_double(parts[0], where);
    const double b = to_double(parts[1], where);
    const double step = to_double(parts[2], where);
    if (!(step > 0.0) || b < a) {
      bad(where, "range needs step > 0 and stop >= start");
    }
    const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) {
      out.push_back(a + static_cast<double>(i) * step);
    }
    return out;
  }
  for (auto item : split(v, ',')) {
    out.push_back(to_double(item, where));
  }
  return out;
}

std::vector<std::size_t> to_size_list(std::string_view v, const std::string &where) {
  std::vector<std::size_t> out;
  for (auto item : split(v, ',')) {
    out.push_back(to_size(item, where));
  }
  return out;
}

Point2 to_point(std::string_view v, const std::string &where) {
  const auto parts = split(v, ',');
  if (parts.size() != 2) {
    bad(where, "expected a point 'x, y', got '" + std::string(v) + "'");
  }
  return {to_double(parts[0], where), to_double(parts[1], where)};
}

std::vector<Point2> to_points(std::string_view v, const std::string &where) {
  std::vector<Point2> out;
  for (auto item : split(v, ';')) {
    if (!item.empty()) {
      out.push_back(to_point(item, where));
    }
  }
  return out;
}

std::vector<Harmonic> to_harmonics(std::string_view v, const std::string &where) {
  std::vector<Harmonic> out;
  if (trim(v).empty()) {
    return out;
  }
  for (auto item : split(v, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() < 2 || parts.size() > 3) {
      bad(where, "harmonic entries are k:amplitude[:phase], got '" + std::string(item) + "'");
    }
    Harmonic h;
    h.k = static_cast<int>(parse_int(parts[0], where, ErrorKind::Config));
    h.amplitude = to_double(parts[1], where);
    h.phase = parts.size() == 3 ? to_double(parts[2], where) : 0.0;
    out.push_back(h);
  }
  return out;
}

std::vector<MainsComponent> to_mains(std::string_view v, const std::string &where) {
  std::vector<MainsComponent> out;
  if (trim(v).empty()) {
    return out;
  }
  for (auto item : split(v, ',')) {
    const auto parts = split(item, ':');
    if (parts.size() != 2) {
      bad(where, "mains entries are frequency:amplitude, got '" + std::string(item) + "'");
    }
    out.push_back({to_double(parts[0], where), to_double(parts[1], where)});
  }
  return out;
}

std::string fmt(double v) { return format_double(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::size_t v) { return std::to_string(v); }

std::string fmt_list(const std::vector<double> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += (i ? ", " : "") + fmt(v[i]);
  }
  return s;
}

std::string fmt_sizes(const std::vector<std::size_t> &v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    s += (i ? ", " : "") + std::to_string(v[i]);
  }
  return s;
}

std::string fmt_point(Point2 p) { return fmt(p.x) + ", " + fmt(p.y); }

MotorProfile default_motor() {
  MotorProfile m;
  m.period_s = 1.0 / 94.0;
  m.position = {0.0, 10.0};
  const double phases[] = {0.0, 0.4, 1.1, 0.7, 2.1, 0.5, 1.7, 2.9};
  for (int k = 1; k <= 8; ++k) {
    m.harmonics.push_back({k, 1.0 / (k * k), phases[k - 1]});
  }
  return m;
}

MotorProfile &motor(Scenario &s, std::size_t slot) {
  if (s.motors.size() < slot) {
    s.motors.resize(slot, default_motor());
  }
  return s.motors[slot - 1];
}

std::vector<Key> build_registry() {
  std::vector<Key> keys;
  const auto add = [&](std::string name, std::string help, Setter set, Getter get,
                       std::size_t slot = 0) {
    keys.push_back({std::move(name), std::move(help), std::move(set), std::move(get), slot});
  };
#define MT_DOUBLE(name, help, field)                                                             \
  add(                                                                                           \
      name, help,                                                                                \
      [](Scenario &s, std::string_view v, const std::string &w) { s.field = to_double(v, w); }, \
      [](const Scenario &s) { return fmt(s.field); })
#define MT_SIZE(name, help, field)                                                               \
  add(                                                                                           \
      name, help,                                                                                \
      [](Scenario &s, std::string_view v, const std::string &w) { s.field = to_size(v, w); },   \
      [](const Scenario &s) { return fmt(static_cast<std::size_t>(s.field)); })
#define MT_BOOL(name, help, field)                                                               \
  add(                                                                                           \
      name, help,                                                                                \
      [](Scenario &s, std::string_view v, const std::string &w) { s.field = to_bool(v, w); },   \
      [](const Scenario &s) { return fmt(s.field); })
#define MT_LIST(name, help, field)                                                               \
  add(                                                                                           \
      name, help,                                                                                \
      [](Scenario &s, std::string_view v, const std::string &w) { s.field = to_list(v, w); },   \
      [](const Scenario &s) { return fmt_list(s.field); })

  MT_DOUBLE("capture.fs", "sample rate, Hz", capture.fs);
  MT_DOUBLE("capture.duration_s", "capture length, s", capture.duration_s);
  MT_DOUBLE("capture.volts_per_count", "WAV scale: volts per 16-bit count", capture.volts_per_count);
  MT_SIZE("capture.background_frames", "noise-only frames averaged into the noise reference",
          capture.background_frames);

  for (std::size_t slot = 1; slot <= 4; ++slot) {
    const std::string sec = slot == 1 ? "motor" : "motor" + std::to_string(slot);
    add(
        sec + ".rpm", "rotation speed, RPM (sets the period)",
        [slot](Scenario &s, std::string_view v, const std::string &w) {
          const double rpm = to_double(v, w);
          if (!(rpm > 0.0)) {
            bad(w, "rpm must be positive");
          }
          motor(s, slot).period_s = 60.0 / rpm;
        },
        [slot](const Scenario &s) { return fmt(s.motors[slot - 1].rpm()); }, slot);
    add(
        sec + ".dc_offset", "static field B(0), field units",
        [slot](Scenario &s, std::string_view v, const std::string &w) {
          motor(s, slot).dc_offset = to_double(v, w);
        },
        [slot](const Scenario &s) { return fmt(s.motors[slot - 1].dc_offset); }, slot);
    add(
        sec + ".harmonics", "k:amplitude:phase, ... (field units, radians)",
        [slot](Scenario &s, std::string_view v, const std::string &w) {
          motor(s, slot).harmonics = to_harmonics(v, w);
        },
        [slot](const Scenario &s) {
          std::string out;
          const auto &hs = s.motors[slot - 1].harmonics;
          for (std::size_t i = 0; i < hs.size(); ++i) {
            out += (i ? ", " : "") + std::to_string(hs[i].k) + ":" + fmt(hs[i].amplitude) + ":" +
                   fmt(hs[i].phase);
          }
          return out;
        },
        slot);
    add(
        sec + ".pole_count", "pole count",
        [slot](Scenario &s, std::string_view v, const std::string &w) {
          motor(s, slot).pole_count = static_cast<int>(parse_int(v, w, ErrorKind::Config));
        },
        [slot](const Scenario &s) { return std::to_string(s.motors[slot - 1].pole_count); }, slot);
    add(
        sec + ".position", "x, y in cm",
        [slot](Scenario &s, std::string_view v, const std::string &w) {
          motor(s, slot).position = to_point(v, w);
        },
        [slot](const Scenario &s) { return fmt_point(s.motors[slot - 1].position); }, slot);
  }

  add(
      "geometry.sensors", "sensor positions 'x, y; x, y; ...' in cm",
      [](Scenario &s, std::string_view v, const std::string &w) { s.geometry.sensors = to_points(v, w); },
      [](const Scenario &s) {
        std::string out;
        for (std::size_t i = 0; i < s.geometry.sensors.size(); ++i) {
          out += (i ? "; " : "") + fmt_point(s.geometry.sensors[i]);
        }
        return out;
      });
  MT_DOUBLE("geometry.effective_speed_cm_s", "path-difference to delay conversion, cm/s",
            geometry.effective_speed_cm_s);
  MT_DOUBLE("geometry.reference_distance_cm", "distance at which amplitudes are nominal, cm",
            geometry.reference_distance_cm);
  MT_DOUBLE("geometry.falloff_exponent", "amplitude falloff exponent (power falls twice as fast)",
            geometry.falloff_exponent);
  MT_DOUBLE("geometry.min_distance_cm", "source-sensor distances are clamped to at least this",
            geometry.min_distance_cm);

  add(
      "noise.mains", "narrowband tones 'frequency:amplitude, ...' (volts)",
      [](Scenario &s, std::string_view v, const std::string &w) { s.noise.mains = to_mains(v, w); },
      [](const Scenario &s) {
        std::string out;
        for (std::size_t i = 0; i < s.noise.mains.size(); ++i) {
          out += (i ? ", " : "") + fmt(s.noise.mains[i].frequency_hz) + ":" +
                 fmt(s.noise.mains[i].amplitude);
        }
        return out;
      });
  MT_DOUBLE("noise.broadband_sigma", "white noise standard deviation, volts", noise.broadband_sigma);
  MT_DOUBLE("noise.shared_fraction", "fraction of broadband power common to all channels",
            noise.shared_fraction);

  MT_DOUBLE("coil.mu0", "vacuum permeability, H/m", coil.mu0);
  MT_DOUBLE("coil.mu_r", "relative core permeability", coil.mu_r);
  add(
      "coil.turns", "winding turns",
      [](Scenario &s, std::string_view v, const std::string &w) {
        s.coil.turns = static_cast<int>(parse_int(v, w, ErrorKind::Config));
      },
      [](const Scenario &s) { return std::to_string(s.coil.turns); });
  MT_DOUBLE("coil.area_m2", "coil cross-section, m^2", coil.area_m2);

  MT_DOUBLE("pipeline.max_lag_s", "largest inter-sensor delay searched, s", pipeline.max_lag_s);
  MT_SIZE("pipeline.coarse_segment", "Welch segment length for the coarse spectrum, samples",
          pipeline.spectrum.segment_len);
  MT_DOUBLE("pipeline.overlap", "Welch segment overlap fraction", pipeline.spectrum.overlap);
  add(
      "pipeline.window", "Welch taper: hann | rectangular",
      [](Scenario &s, std::string_view v, const std::string &w) {
        try {
          s.pipeline.spectrum.window = parse_window(std::string(trim(v)));
        } catch (const Error &e) {
          bad(w, e.what());
        }
      },
      [](const Scenario &s) {
        return std::string(s.pipeline.spectrum.window == Window::Hann ? "hann" : "rectangular");
      });
  MT_SIZE("pipeline.input_bins", "coarse spectrum bins fed to the detector", pipeline.spectrum.input_bins);
  MT_DOUBLE("pipeline.delta_f", "candidate spacing and fuzzification radius, Hz", pipeline.delta_f_hz);
  add(
      "pipeline.gamma", "fine-estimate refinement factor",
      [](Scenario &s, std::string_view v, const std::string &w) {
        s.pipeline.gamma = static_cast<int>(parse_int(v, w, ErrorKind::Config));
      },
      [](const Scenario &s) { return std::to_string(s.pipeline.gamma); });
  add(
      "pipeline.n_support", "highest multiple checked by the harmonic-support rule",
      [](Scenario &s, std::string_view v, const std::string &w) {
        s.pipeline.n_support = static_cast<int>(parse_int(v, w, ErrorKind::Config));
      },
      [](const Scenario &s) { return std::to_string(s.pipeline.n_support); });
  MT_DOUBLE("pipeline.detection_threshold", "probability at which a bin counts as detected",
            pipeline.detection_threshold);
  MT_DOUBLE("pipeline.f_min", "lowest candidate fundamental, Hz", pipeline.band.f_min_hz);
  MT_DOUBLE("pipeline.f_max", "highest candidate fundamental, Hz (0: half the band)",
            pipeline.band.f_max_hz);
  MT_SIZE("pipeline.m_harmonics", "harmonics in the likelihood sum", m_harmonics);
  add(
      "pipeline.detector", "ppsp | threshold",
      [](Scenario &s, std::string_view v, const std::string &w) {
        v = trim(v);
        if (v == "ppsp") {
          s.pipeline.detector = DetectorKind::Ppsp;
        } else if (v == "threshold") {
          s.pipeline.detector = DetectorKind::Threshold;
        } else {
          bad(w, "detector must be ppsp or threshold");
        }
      },
      [](const Scenario &s) {
        return std::string(s.pipeline.detector == DetectorKind::Ppsp ? "ppsp" : "threshold");
      });
  MT_DOUBLE("pipeline.threshold_quantile", "threshold detector quantile", pipeline.threshold_quantile);

  MT_SIZE("detector.encoder_levels", "PPSP downsampling levels", detector.encoder_levels);
  MT_SIZE("detector.filters", "PPSP filters per convolution", detector.filters);
  MT_SIZE("detector.conv_kernel", "PPSP decoder/output kernel width", detector.conv_kernel);
  MT_SIZE("detector.pool_kernel", "PPSP max-pool width", detector.pool_kernel);
  add(
      "detector.multiscale_widths", "PPSP multi-scale branch widths",
      [](Scenario &s, std::string_view v, const std::string &w) {
        s.detector.multiscale_widths = to_size_list(v, w);
      },
      [](const Scenario &s) { return fmt_sizes(s.detector.multiscale_widths); });
  add(
      "detector.pyramid_bins", "PPSP pyramid pooling output lengths",
      [](Scenario &s, std::string_view v, const std::string &w) {
        s.detector.pyramid_bins = to_size_list(v, w);
      },
      [](const Scenario &s) { return fmt_sizes(s.detector.pyramid_bins); });
  MT_SIZE("detector.pyramid_channels", "PPSP channels per pyramid branch (0: filters/4)",
          detector.pyramid_channels);
  MT_SIZE("detector.seed", "PPSP initialization seed", detector.seed);

  MT_SIZE("train.base_traces", "simulated traces before augmentation", train.base_traces);
  MT_LIST("train.distances", "source distances cycled through, cm", train.distances_cm);
  MT_DOUBLE("train.rpm_min", "lowest training speed, RPM", train.rpm_min);
  MT_DOUBLE("train.rpm_max", "highest training speed, RPM", train.rpm_max);
  MT_LIST("train.alphas", "resampling factors applied to every trace", train.alphas);
  MT_SIZE("train.epochs", "training epochs", train.epochs);
  MT_DOUBLE("train.lr", "Adam learning rate", train.learning_rate);
  MT_SIZE("train.batch_size", "mini-batch size", train.batch_size);
  MT_DOUBLE("train.duration_s", "length of each training trace, s", train.duration_s);
  MT_DOUBLE("train.prior_precision", "harmonic-weight regression prior precision",
            train.prior_precision);
  MT_DOUBLE("train.amplitude_jitter", "relative per-harmonic amplitude jitter",
            train.amplitude_jitter);

  MT_LIST("sweep.distances", "source distances, cm (list or start:stop:step)", sweep.distances_cm);
  MT_LIST("sweep.speeds_rpm", "speeds cycled through the trials, RPM", sweep.speeds_rpm);
  MT_SIZE("sweep.trials", "trials per distance", sweep.trials);
  MT_SIZE("sweep.workers", "worker threads", sweep.workers);
  MT_DOUBLE("sweep.baseline_f_min", "baseline search band lower edge, Hz", sweep.baseline_f_min_hz);
  MT_DOUBLE("sweep.baseline_f_max", "baseline search band upper edge, Hz", sweep.baseline_f_max_hz);

  add(
      "sermap.sensors", "the two sensor positions 'x, y; x, y', cm",
      [](Scenario &s, std::string_view v, const std::string &w) { s.sermap.sensors = to_points(v, w); },
      [](const Scenario &s) {
        std::string out;
        for (std::size_t i = 0; i < s.sermap.sensors.size(); ++i) {
          out += (i ? "; " : "") + fmt_point(s.sermap.sensors[i]);
        }
        return out;
      });
  MT_DOUBLE("sermap.x_min", "grid x start, cm", sermap.x_min_cm);
  MT_DOUBLE("sermap.x_max", "grid x end, cm", sermap.x_max_cm);
  MT_DOUBLE("sermap.y_min", "grid y start, cm", sermap.y_min_cm);
  MT_DOUBLE("sermap.y_max", "grid y end, cm", sermap.y_max_cm);
  MT_DOUBLE("sermap.step", "grid spacing, cm", sermap.step_cm);
  MT_LIST("sermap.delays_ms", "delays to evaluate, ms", sermap.delays_ms);
  MT_DOUBLE("sermap.duration_s", "trace length per cell, s", sermap.duration_s);
  MT_BOOL("sermap.with_noise", "add the scenario noise to each cell", sermap.with_noise);
  MT_BOOL("sermap.calibrate", "derive the effective speed from the calibration point",
          sermap.calibrate);
  add(
      "sermap.calibrate_point", "calibration source position 'x, y', cm",
      [](Scenario &s, std::string_view v, const std::string &w) {
        s.sermap.calibrate_point = to_point(v, w);
      },
      [](const Scenario &s) { return fmt_point(s.sermap.calibrate_point); });
  MT_DOUBLE("sermap.calibrate_delay_ms", "delay at the calibration point, ms",
            sermap.calibrate_delay_ms);
#undef MT_DOUBLE
#undef MT_SIZE
#undef MT_BOOL
#undef MT_LIST
  std::sort(keys.begin(), keys.end(), [](const Key &a, const Key &b) { return a.name < b.name; });
  return keys;
}

const std::vector<Key> &registry() {
  static const std::vector<Key> keys = build_registry();
  return keys;
}

const Key *find_key(std::string_view name) {
  const auto &keys = registry();
  const auto it = std::lower_bound(keys.begin(), keys.end(), name,
                                   [](const Key &k, std::string_view n) { return k.name < n; });
  return it != keys.end() && it->name == name ? &*it : nullptr;
}

} // namespace

SweepSettings::SweepSettings() {
  for (int d = 5; d <= 105; d += 5) {
    distances_cm.push_back(d);
  }
}

Scenario::Scenario() {
  motors.push_back(default_motor());
  geometry.sensors = {{-8.0, 0.0}, {-3.0, 0.0}, {3.0, 0.0}, {8.0, 0.0}};
  noise.mains = {{60.0, 2e-3}, {120.0, 5e-4}};
  noise.broadband_sigma = 4e-3;
  noise.shared_fraction = 0.2;
}

PpspConfig Scenario::detector_config() const {
  PpspConfig c = detector;
  c.input_bins = pipeline.spectrum.input_bins;
  return c;
}

void Scenario::validate() const {
  const auto check = [](const char *section, auto &&fn) {
    try {
      fn();
    } catch (const Error &e) {
      fail(ErrorKind::Config, std::string(section) + ": " + e.what());
    }
  };
  check("capture", [&] {
    require(capture.fs > 0.0, "fs must be positive");
    require(capture.duration_s > 0.0, "duration_s must be positive");
    require(capture.volts_per_count > 0.0, "volts_per_count must be positive");
    require(capture.background_frames >= 1, "background_frames must be at least 1");
  });
  require(!motors.empty(), "scenario needs at least one motor");
  for (std::size_t i = 0; i < motors.size(); ++i) {
    check(i == 0 ? "motor" : ("motor" + std::to_string(i + 1)).c_str(), [&] { motors[i].validate(); });
  }
  check("geometry", [&] { geometry.validate(); });
  check("noise", [&] { noise.validate(); });
  check("coil", [&] { coil.validate(); });
  check("pipeline", [&] {
    pipeline.validate();
    require(m_harmonics >= 1, "m_harmonics must be at least 1");
  });
  check("detector", [&] { detector_config().validate(); });
  check("train", [&] {
    require(train.rpm_min > 0.0 && train.rpm_max >= train.rpm_min, "rpm range must be positive");
    require(!train.alphas.empty(), "alphas must not be empty");
    require(!train.distances_cm.empty(), "distances must not be empty");
    require(train.batch_size >= 1, "batch_size must be at least 1");
    require(train.duration_s > 0.0, "duration_s must be positive");
    require(train.learning_rate > 0.0, "lr must be positive");
  });
  check("sweep", [&] {
    for (double d : sweep.distances_cm) {
      require(d > 0.0, "distances must be positive");
    }
    require(!sweep.speeds_rpm.empty(), "speeds_rpm must not be empty");
    require(sweep.workers >= 1, "workers must be at least 1");
    require(sweep.baseline_f_min_hz > 0.0 && sweep.baseline_f_max_hz > sweep.baseline_f_min_hz,
            "baseline band must be increasing and positive");
  });
  check("sermap", [&] {
    require(sermap.sensors.size() == 2, "the SER map needs exactly two sensors");
    require(sermap.step_cm > 0.0, "step must be positive");
    require(sermap.x_max_cm >= sermap.x_min_cm && sermap.y_max_cm >= sermap.y_min_cm,
            "grid bounds must be increasing");
    require(sermap.duration_s > 0.0, "duration_s must be positive");
  });
}

void set_value(Scenario &scenario, std::string_view key, std::string_view value,
               const std::string &where) {
  const Key *k = find_key(trim(key));
  if (k == nullptr) {
    bad(where, "unknown key '" + std::string(trim(key)) + "'");
  }
  k->set(scenario, trim(value), where);
}

Scenario parse_scenario(std::string_view text, const std::string &source_name) {
  Scenario s;
  std::string section;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const auto where = source_name + ":" + std::to_string(lineno);
    auto line = raw;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') {
        bad(where, "unterminated section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) {
        bad(where, "empty section name");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      bad(where, "expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) {
      bad(where, "missing key before '='");
    }
    const auto full = section.empty() ? std::string(key) : section + "." + std::string(key);
    set_value(s, full, line.substr(eq + 1), where);
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorKind::Io, "cannot open config file " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.string());
}

void apply_override(Scenario &scenario, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    fail(ErrorKind::Config, "override '" + std::string(assignment) + "' is not key=value");
  }
  const auto key = trim(assignment.substr(0, eq));
  set_value(scenario, key, assignment.substr(eq + 1), "--set " + std::string(key));
}

std::string canonical_dump(const Scenario &scenario) {
  std::string out;
  for (const auto &k : registry()) {
    if (k.motor_slot > scenario.motors.size()) {
      continue;
    }
    out += k.name + " = " + k.get(scenario) + "\n";
  }
  return out;
}

std::string fingerprint(const Scenario &scenario) {
  // worker count changes scheduling only, never results
  Scenario s = scenario;
  s.sweep.workers = 1;
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canonical_dump(s)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<KeyHelp> scenario_keys() {
  std::vector<KeyHelp> out;
  for (const auto &k : registry()) {
    out.push_back({k.name, k.help});
  }
  return out;
}

} // namespace magtach
