#include "magtach/magtach.h"

#include "magtach/config.hpp"
#include "magtach/detector.hpp"
#include "magtach/dsp.hpp"
#include "magtach/error.hpp"
#include "magtach/estimator.hpp"
#include "magtach/eval.hpp"
#include "magtach/io.hpp"
#include "magtach/text.hpp"

#include "json.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <new>
#include <string>

struct mt_scenario {
  magtach::Scenario value;
};
struct mt_trace {
  magtach::SensorTrace value;
};
struct mt_noise_ref {
  magtach::NoiseReference value;
};
struct mt_detector {
  magtach::PpspWeights value;
};
struct mt_harmonic_weights {
  magtach::HarmonicWeights value;
};

namespace {

thread_local std::string g_last_error;

mt_status to_status(magtach::ErrorKind kind) {
  switch (kind) {
  case magtach::ErrorKind::InvalidInput:
    return MT_ERR_INVALID;
  case magtach::ErrorKind::Config:
    return MT_ERR_CONFIG;
  case magtach::ErrorKind::Io:
    return MT_ERR_IO;
  case magtach::ErrorKind::Pipeline:
    return MT_ERR_PIPELINE;
  }
  return MT_ERR_PIPELINE;
}

template <class F> mt_status guard(F &&f) {
  try {
    g_last_error.clear();
    f();
    return MT_OK;
  } catch (const magtach::Error &e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::filesystem::filesystem_error &e) {
    g_last_error = e.what();
    return MT_ERR_IO;
  } catch (const std::bad_alloc &) {
    g_last_error = "out of memory";
    return MT_ERR_PIPELINE;
  } catch (const std::exception &e) {
    g_last_error = e.what();
    return MT_ERR_PIPELINE;
  }
}

void need(const void *p, const char *what) {
  if (p == nullptr) {
    magtach::fail(magtach::ErrorKind::InvalidInput, std::string(what) + " must not be NULL");
  }
}

magtach::NoiseReference noise_or_unit(const mt_noise_ref *noise, const magtach::SensorTrace &t) {
  return noise != nullptr ? noise->value : magtach::NoiseReference::unit(t.length());
}

const magtach::PpspWeights *weights_of(const mt_detector *det) {
  return det != nullptr ? &det->value : nullptr;
}

void check_detector(const magtach::Scenario &s, const mt_detector *det) {
  if (s.pipeline.detector == magtach::DetectorKind::Ppsp) {
    if (det == nullptr) {
      magtach::fail(magtach::ErrorKind::Config,
                    "pipeline.detector = ppsp requires detector weights");
    }
    if (det->value.config.input_bins != s.pipeline.spectrum.input_bins) {
      magtach::fail(magtach::ErrorKind::Config,
                    "detector weights expect " + std::to_string(det->value.config.input_bins) +
                        " bins but pipeline.input_bins is " +
                        std::to_string(s.pipeline.spectrum.input_bins));
    }
  }
}

const std::vector<magtach::KeyHelp> &keys() {
  static const auto k = magtach::scenario_keys();
  return k;
}

} // namespace

extern "C" {

const char *mt_last_error(void) { return g_last_error.c_str(); }
const char *mt_version(void) { return "1.0.0"; }

mt_status mt_scenario_default(mt_scenario **out) {
  return guard([&] {
    need(out, "out");
    *out = new mt_scenario{};
  });
}

mt_status mt_scenario_load(const char *path, mt_scenario **out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new mt_scenario{magtach::load_scenario(path)};
  });
}

mt_status mt_scenario_set(mt_scenario *scn, const char *assignment) {
  return guard([&] {
    need(scn, "scenario");
    need(assignment, "assignment");
    magtach::apply_override(scn->value, assignment);
  });
}

mt_status mt_scenario_validate(const mt_scenario *scn) {
  return guard([&] {
    need(scn, "scenario");
    scn->value.validate();
  });
}

mt_status mt_scenario_fingerprint(const mt_scenario *scn, char *buf, size_t len) {
  return guard([&] {
    need(scn, "scenario");
    need(buf, "buf");
    const auto fp = magtach::fingerprint(scn->value);
    magtach::require(len > fp.size(), "fingerprint buffer too small");
    std::memcpy(buf, fp.c_str(), fp.size() + 1);
  });
}

double mt_scenario_sample_rate(const mt_scenario *scn) { return scn ? scn->value.capture.fs : 0.0; }
double mt_scenario_volts_per_count(const mt_scenario *scn) {
  return scn ? scn->value.capture.volts_per_count : 0.0;
}
size_t mt_scenario_m_harmonics(const mt_scenario *scn) { return scn ? scn->value.m_harmonics : 0; }
int mt_scenario_uses_ppsp(const mt_scenario *scn) {
  return scn && scn->value.pipeline.detector == magtach::DetectorKind::Ppsp ? 1 : 0;
}
void mt_scenario_free(mt_scenario *scn) { delete scn; }

size_t mt_config_key_count(void) { return keys().size(); }
const char *mt_config_key_name(size_t index) {
  return index < keys().size() ? keys()[index].key.c_str() : nullptr;
}
const char *mt_config_key_help(size_t index) {
  return index < keys().size() ? keys()[index].help.c_str() : nullptr;
}

mt_status mt_simulate(const mt_scenario *scn, uint64_t seed, mt_trace **trace,
                      mt_noise_ref **noise) {
  return guard([&] {
    need(scn, "scenario");
    need(trace, "trace");
    scn->value.validate();
    auto cap = magtach::simulate_capture(scn->value, seed);
    auto *t = new mt_trace{std::move(cap.trace)};
    if (noise != nullptr) {
      try {
        *noise = new mt_noise_ref{std::move(cap.noise)};
      } catch (...) {
        delete t;
        throw;
      }
    }
    *trace = t;
  });
}

mt_status mt_simulate_to_dir(const mt_scenario *scn, uint64_t seed, const char *out_dir,
                             int write_csv, size_t *clipped) {
  return guard([&] {
    need(scn, "scenario");
    need(out_dir, "out_dir");
    const auto &s = scn->value;
    s.validate();
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    const auto cap = magtach::simulate_capture(s, seed);
    const auto c = magtach::write_trace_wav(cap.trace, dir / "trace.wav", s.capture.volts_per_count);
    if (clipped != nullptr) {
      *clipped = c;
    }
    if (write_csv != 0) {
      magtach::write_trace_csv(cap.trace, dir / "trace.csv");
    }
    magtach::write_noise_reference(cap.noise, dir / "noise_ref.csv");
    nlohmann::ordered_json j;
    j["fingerprint"] = magtach::fingerprint(s);
    j["seed"] = seed;
    j["sample_rate_hz"] = s.capture.fs;
    j["duration_s"] = s.capture.duration_s;
    j["channels"] = cap.trace.channel_count();
    j["volts_per_count"] = s.capture.volts_per_count;
    j["clipped_samples"] = c;
    auto &motors = j["motors"];
    motors = nlohmann::ordered_json::array();
    for (const auto &m : s.motors) {
      nlohmann::ordered_json mj;
      mj["fundamental_hz"] = m.fundamental_hz();
      mj["rpm"] = m.rpm();
      mj["position_cm"] = {m.position.x, m.position.y};
      std::vector<double> dist;
      for (const auto &sensor : s.geometry.sensors) {
        dist.push_back(magtach::distance(m.position, sensor));
      }
      mj["sensor_distances_cm"] = dist;
      mj["sensor_delays_s"] = magtach::sensor_delays(m, s.geometry);
      motors.push_back(mj);
    }
    std::ofstream out(dir / "truth.json");
    out << j.dump(2) << '\n';
    if (!out) {
      magtach::fail(magtach::ErrorKind::Io, "failed writing " + (dir / "truth.json").string());
    }
  });
}

mt_status mt_trace_read(const char *path, double volts_per_count, mt_trace **out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new mt_trace{magtach::read_trace(path, volts_per_count)};
  });
}

mt_status mt_trace_write_wav(const mt_trace *trace, const char *path, double volts_per_count,
                             size_t *clipped) {
  return guard([&] {
    need(trace, "trace");
    need(path, "path");
    const auto c = magtach::write_trace_wav(trace->value, path, volts_per_count);
    if (clipped != nullptr) {
      *clipped = c;
    }
  });
}

mt_status mt_trace_write_csv(const mt_trace *trace, const char *path) {
  return guard([&] {
    need(trace, "trace");
    need(path, "path");
    magtach::write_trace_csv(trace->value, path);
  });
}

size_t mt_trace_channels(const mt_trace *trace) { return trace ? trace->value.channel_count() : 0; }
size_t mt_trace_length(const mt_trace *trace) { return trace ? trace->value.length() : 0; }
double mt_trace_sample_rate(const mt_trace *trace) {
  return trace ? trace->value.sample_rate_hz : 0.0;
}

mt_status mt_trace_channel(const mt_trace *trace, size_t channel, const double **data) {
  return guard([&] {
    need(trace, "trace");
    need(data, "data");
    magtach::require(channel < trace->value.channel_count(), "channel index out of range");
    *data = trace->value.channels[channel].data();
  });
}

void mt_trace_free(mt_trace *trace) { delete trace; }

mt_status mt_noise_ref_read(const char *path, mt_noise_ref **out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new mt_noise_ref{magtach::read_noise_reference(path)};
  });
}

mt_status mt_noise_ref_write(const mt_noise_ref *noise, const char *path) {
  return guard([&] {
    need(noise, "noise");
    need(path, "path");
    magtach::write_noise_reference(noise->value, path);
  });
}

void mt_noise_ref_free(mt_noise_ref *noise) { delete noise; }

mt_status mt_detector_load(const char *path, mt_detector **out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new mt_detector{magtach::load_weights(path)};
  });
}

mt_status mt_detector_save(const mt_detector *det, const char *path) {
  return guard([&] {
    need(det, "detector");
    need(path, "path");
    magtach::save_weights(det->value, path);
  });
}

void mt_detector_free(mt_detector *det) { delete det; }

mt_status mt_harmonic_weights_default(size_t m_harmonics, mt_harmonic_weights **out) {
  return guard([&] {
    need(out, "out");
    *out = new mt_harmonic_weights{magtach::HarmonicWeights::inverse_k(m_harmonics)};
  });
}

mt_status mt_harmonic_weights_load(const char *path, mt_harmonic_weights **out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new mt_harmonic_weights{magtach::load_harmonic_weights(path)};
  });
}

mt_status mt_harmonic_weights_save(const mt_harmonic_weights *hw, const char *path) {
  return guard([&] {
    need(hw, "weights");
    need(path, "path");
    magtach::save_harmonic_weights(hw->value, path);
  });
}

void mt_harmonic_weights_free(mt_harmonic_weights *hw) { delete hw; }

mt_status mt_enhance(const mt_scenario *scn, const mt_trace *trace, const mt_noise_ref *noise,
                     const char *enhanced_csv, const char *spectrum_csv) {
  return guard([&] {
    need(scn, "scenario");
    need(trace, "trace");
    const auto &s = scn->value;
    s.validate();
    const auto lag = static_cast<std::size_t>(std::llround(s.pipeline.max_lag_s * trace->value.sample_rate_hz));
    const auto das = magtach::delay_and_sum_detailed(trace->value, noise_or_unit(noise, trace->value), lag);
    if (enhanced_csv != nullptr) {
      magtach::SensorTrace single;
      single.sample_rate_hz = trace->value.sample_rate_hz;
      single.channels.push_back(das.enhanced);
      magtach::write_trace_csv(single, enhanced_csv);
    }
    if (spectrum_csv != nullptr) {
      magtach::write_spectrum_csv(
          magtach::coarse_spectrum(das.enhanced, trace->value.sample_rate_hz, s.pipeline.spectrum),
          spectrum_csv);
    }
  });
}

mt_status mt_detect(const mt_scenario *scn, const mt_trace *trace, const mt_noise_ref *noise,
                    const mt_detector *det, const char *detection_csv, const char *spectrum_csv) {
  return guard([&] {
    need(scn, "scenario");
    need(trace, "trace");
    const auto &s = scn->value;
    s.validate();
    check_detector(s, det);
    const auto lag = static_cast<std::size_t>(std::llround(s.pipeline.max_lag_s * trace->value.sample_rate_hz));
    const auto enhanced = magtach::delay_and_sum(trace->value, noise_or_unit(noise, trace->value), lag);
    const auto psd = magtach::coarse_spectrum(enhanced, trace->value.sample_rate_hz, s.pipeline.spectrum);
    const auto map = magtach::run_detector(psd, weights_of(det), s.pipeline);
    if (spectrum_csv != nullptr) {
      magtach::write_spectrum_csv(psd, spectrum_csv);
    }
    if (detection_csv != nullptr) {
      magtach::write_detection_csv(map, detection_csv);
    }
  });
}

mt_status mt_estimate(const mt_scenario *scn, const mt_trace *trace, const mt_noise_ref *noise,
                      const mt_detector *det, const mt_harmonic_weights *hw, size_t k_sources,
                      mt_speed_estimate *out, size_t capacity, size_t *count) {
  return guard([&] {
    need(scn, "scenario");
    need(trace, "trace");
    need(out, "out");
    need(count, "count");
    const auto &s = scn->value;
    s.validate();
    check_detector(s, det);
    const auto harmonics = hw != nullptr ? hw->value : magtach::HarmonicWeights::inverse_k(s.m_harmonics);
    const auto nref = noise_or_unit(noise, trace->value);
    std::vector<magtach::SpeedEstimate> est;
    if (k_sources <= 1) {
      est.push_back(magtach::estimate_rpm(trace->value, nref, weights_of(det), harmonics, s.pipeline));
    } else {
      est = magtach::estimate_rpm_multi(trace->value, nref, weights_of(det), harmonics, s.pipeline,
                                        k_sources);
    }
    *count = std::min(capacity, est.size());
    for (std::size_t i = 0; i < *count; ++i) {
      out[i] = {est[i].fine_hz,    est[i].coarse_hz,          est[i].rpm,
                est[i].confidence, est[i].low_confidence ? 1 : 0, est[i].shortfall ? 1 : 0};
    }
  });
}

mt_status mt_estimate_json(const mt_speed_estimate *e, char *buf, size_t len) {
  return guard([&] {
    need(e, "estimate");
    need(buf, "buf");
    magtach::SpeedEstimate s{e->fine_hz, e->coarse_hz, e->rpm, e->confidence, e->low_confidence != 0,
                             e->shortfall != 0};
    const auto j = magtach::to_json(s);
    magtach::require(len > j.size(), "JSON buffer too small");
    std::memcpy(buf, j.c_str(), j.size() + 1);
  });
}

mt_status mt_train(const mt_scenario *scn, uint64_t seed, const char *out_dir, mt_epoch_callback cb,
                   void *user) {
  return guard([&] {
    need(scn, "scenario");
    need(out_dir, "out_dir");
    const auto &s = scn->value;
    s.validate();
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    std::function<void(std::size_t, double)> hook;
    if (cb != nullptr) {
      hook = [cb, user](std::size_t epoch, double loss) { cb(epoch, loss, user); };
    }
    const auto t = magtach::train_scenario(s, seed, hook);
    magtach::save_weights(t.result.weights, dir / "ppsp.weights");
    auto hw = t.harmonics;
    hw.fit_info += " fingerprint=" + magtach::fingerprint(s);
    magtach::save_harmonic_weights(hw, dir / "harmonics.txt");
    std::ofstream out(dir / "loss_history.csv");
    out << "# fingerprint=" << magtach::fingerprint(s) << " seed=" << seed
        << " samples=" << t.sample_count << '\n'
        << "epoch,loss\n";
    for (std::size_t e = 0; e < t.result.loss_history.size(); ++e) {
      out << e << ',' << magtach::format_double(t.result.loss_history[e]) << '\n';
    }
    if (!out) {
      magtach::fail(magtach::ErrorKind::Io, "failed writing loss_history.csv");
    }
  });
}

mt_status mt_bench(const mt_scenario *scn, const mt_detector *det, const mt_harmonic_weights *hw,
                   uint64_t seed, const char *out_dir) {
  return guard([&] {
    need(scn, "scenario");
    need(out_dir, "out_dir");
    const auto &s = scn->value;
    s.validate();
    check_detector(s, det);
    const auto harmonics = hw != nullptr ? hw->value : magtach::HarmonicWeights::inverse_k(s.m_harmonics);
    const auto result = magtach::run_distance_sweep(s, weights_of(det), harmonics, seed);
    magtach::write_bench(result, out_dir);
  });
}

mt_status mt_sermap(const mt_scenario *scn, uint64_t seed, const char *out_dir, size_t *rows,
                    size_t *cols) {
  return guard([&] {
    need(scn, "scenario");
    need(out_dir, "out_dir");
    const auto map = magtach::run_ser_map(scn->value, seed);
    magtach::write_ser_map(map, out_dir);
    if (rows != nullptr) {
      *rows = map.ys.size();
    }
    if (cols != nullptr) {
      *cols = map.xs.size();
    }
  });
}

} // extern "C"
