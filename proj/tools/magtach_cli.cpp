// magtach command-line front end. Talks to the library only through magtach.h.

#include "magtach/magtach.h"

#include "CLI11.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Exit {
  int code;
};

int exit_code(mt_status s) {
  switch (s) {
  case MT_OK:
    return 0;
  case MT_ERR_CONFIG:
  case MT_ERR_INVALID:
    return 2;
  case MT_ERR_IO:
    return 3;
  case MT_ERR_PIPELINE:
    return 4;
  }
  return 4;
}

void check(mt_status s, const std::string &stage) {
  if (s != MT_OK) {
    std::cerr << "magtach: " << stage << ": " << mt_last_error() << '\n';
    throw Exit{exit_code(s)};
  }
}

template <class T, void (*Free)(T *)> struct Deleter {
  void operator()(T *p) const { Free(p); }
};
using ScenarioPtr = std::unique_ptr<mt_scenario, Deleter<mt_scenario, mt_scenario_free>>;
using TracePtr = std::unique_ptr<mt_trace, Deleter<mt_trace, mt_trace_free>>;
using NoisePtr = std::unique_ptr<mt_noise_ref, Deleter<mt_noise_ref, mt_noise_ref_free>>;
using DetectorPtr = std::unique_ptr<mt_detector, Deleter<mt_detector, mt_detector_free>>;
using HarmonicsPtr =
    std::unique_ptr<mt_harmonic_weights, Deleter<mt_harmonic_weights, mt_harmonic_weights_free>>;

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> inputs;
  std::string noise;
  std::string weights;
  std::string harmonics;
  std::string json_out;
  std::size_t multi = 1;
  bool write_csv = false;
};

ScenarioPtr load(const Common &c) {
  mt_scenario *raw = nullptr;
  if (c.config.empty()) {
    check(mt_scenario_default(&raw), "config");
  } else {
    check(mt_scenario_load(c.config.c_str(), &raw), "config");
  }
  ScenarioPtr scn(raw);
  for (const auto &o : c.overrides) {
    check(mt_scenario_set(scn.get(), o.c_str()), "config");
  }
  check(mt_scenario_validate(scn.get()), "config");
  return scn;
}

std::uint64_t need_seed(const Common &c) {
  if (!c.seed) {
    std::cerr << "magtach: --seed is required for this command\n";
    throw Exit{2};
  }
  return *c.seed;
}

NoisePtr load_noise(const Common &c) {
  if (c.noise.empty()) {
    return nullptr;
  }
  mt_noise_ref *raw = nullptr;
  check(mt_noise_ref_read(c.noise.c_str(), &raw), "noise reference " + c.noise);
  return NoisePtr(raw);
}

DetectorPtr load_detector(const Common &c, const mt_scenario *scn) {
  if (c.weights.empty()) {
    if (mt_scenario_uses_ppsp(scn) != 0) {
      std::cerr << "magtach: --weights is required when pipeline.detector = ppsp\n";
      throw Exit{2};
    }
    return nullptr;
  }
  mt_detector *raw = nullptr;
  check(mt_detector_load(c.weights.c_str(), &raw), "weights");
  return DetectorPtr(raw);
}

HarmonicsPtr load_harmonics(const Common &c, const mt_scenario *scn) {
  mt_harmonic_weights *raw = nullptr;
  if (c.harmonics.empty()) {
    check(mt_harmonic_weights_default(mt_scenario_m_harmonics(scn), &raw), "harmonic weights");
  } else {
    check(mt_harmonic_weights_load(c.harmonics.c_str(), &raw), "harmonic weights");
  }
  return HarmonicsPtr(raw);
}

TracePtr load_trace(const std::string &path, const mt_scenario *scn) {
  mt_trace *raw = nullptr;
  check(mt_trace_read(path.c_str(), mt_scenario_volts_per_count(scn), &raw), "trace");
  return TracePtr(raw);
}

std::string key_listing(const std::vector<std::string> &sections) {
  std::string out = "Config keys honored (set in --config or with --set key=value):\n";
  for (std::size_t i = 0; i < mt_config_key_count(); ++i) {
    const std::string name = mt_config_key_name(i);
    const auto dot = name.find('.');
    const auto sec = name.substr(0, dot);
    for (const auto &s : sections) {
      if (sec == s) {
        out += "  " + name + "  " + mt_config_key_help(i) + "\n";
        break;
      }
    }
  }
  return out;
}

std::string escape(const std::string &s) {
  std::string out;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') {
      out += '\\';
    }
    out += ch;
  }
  return out;
}

std::string out_dir(const Common &c) { return c.out.empty() ? std::string(".") : c.out; }

void cmd_simulate(const Common &c) {
  const auto seed = need_seed(c);
  auto scn = load(c);
  std::size_t clipped = 0;
  check(mt_simulate_to_dir(scn.get(), seed, out_dir(c).c_str(), c.write_csv ? 1 : 0, &clipped),
        "simulate");
  if (clipped > 0) {
    std::cerr << "magtach: warning: " << clipped << " samples clipped in trace.wav\n";
  }
}

void cmd_denoise(const Common &c) {
  auto scn = load(c);
  auto noise = load_noise(c);
  const auto dir = out_dir(c);
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    auto trace = load_trace(c.inputs[i], scn.get());
    const auto suffix = c.inputs.size() > 1 ? "_" + std::to_string(i) : std::string();
    const auto enhanced = dir + "/enhanced" + suffix + ".csv";
    const auto spectrum = dir + "/spectrum" + suffix + ".csv";
    check(mt_enhance(scn.get(), trace.get(), noise.get(), enhanced.c_str(), spectrum.c_str()),
          "denoise");
  }
}

void cmd_detect(const Common &c) {
  auto scn = load(c);
  auto noise = load_noise(c);
  auto det = load_detector(c, scn.get());
  const auto dir = out_dir(c);
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    auto trace = load_trace(c.inputs[i], scn.get());
    const auto suffix = c.inputs.size() > 1 ? "_" + std::to_string(i) : std::string();
    const auto detection = dir + "/detection" + suffix + ".csv";
    const auto spectrum = dir + "/spectrum" + suffix + ".csv";
    check(mt_detect(scn.get(), trace.get(), noise.get(), det.get(), detection.c_str(),
                    spectrum.c_str()),
          "detect");
  }
}

void cmd_estimate(const Common &c) {
  auto scn = load(c);
  auto noise = load_noise(c);
  auto det = load_detector(c, scn.get());
  auto hw = load_harmonics(c, scn.get());
  std::cout << "input,fine_hz,coarse_hz,rpm,confidence,low_confidence,shortfall\n";
  std::string json = "[";
  bool first = true;
  for (const auto &path : c.inputs) {
    auto trace = load_trace(path, scn.get());
    std::vector<mt_speed_estimate> est(std::max<std::size_t>(1, c.multi));
    std::size_t n = 0;
    check(mt_estimate(scn.get(), trace.get(), noise.get(), det.get(), hw.get(), c.multi,
                      est.data(), est.size(), &n),
          "estimate " + path);
    for (std::size_t i = 0; i < n; ++i) {
      const auto &e = est[i];
      std::printf("%s,%.6f,%.6f,%.4f,%.6f,%d,%d\n", path.c_str(), e.fine_hz, e.coarse_hz, e.rpm,
                  e.confidence, e.low_confidence, e.shortfall);
      char buf[512];
      check(mt_estimate_json(&e, buf, sizeof(buf)), "estimate");
      json += (first ? "" : ",") + std::string("{\"input\":\"") + escape(path) + "\"," +
              std::string(buf + 1);
      first = false;
    }
  }
  json += "]\n";
  std::fflush(stdout);
  if (!c.json_out.empty()) {
    std::ofstream out(c.json_out);
    out << json;
    if (!out) {
      std::cerr << "magtach: cannot write " << c.json_out << '\n';
      throw Exit{3};
    }
  }
}

void on_epoch(std::size_t epoch, double loss, void *) {
  std::fprintf(stderr, "epoch %zu loss %.6f\n", epoch, loss);
}

void cmd_train(const Common &c) {
  const auto seed = need_seed(c);
  auto scn = load(c);
  check(mt_train(scn.get(), seed, out_dir(c).c_str(), on_epoch, nullptr), "train");
}

void cmd_bench(const Common &c) {
  const auto seed = need_seed(c);
  auto scn = load(c);
  auto det = load_detector(c, scn.get());
  auto hw = load_harmonics(c, scn.get());
  check(mt_bench(scn.get(), det.get(), hw.get(), seed, out_dir(c).c_str()), "bench");
}

void cmd_sermap(const Common &c) {
  const auto seed = need_seed(c);
  auto scn = load(c);
  std::size_t rows = 0;
  std::size_t cols = 0;
  check(mt_sermap(scn.get(), seed, out_dir(c).c_str(), &rows, &cols), "sermap");
  std::cout << "grid " << cols << " x " << rows << '\n';
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"magtach: rotation speed from magnetic inductive sensor arrays"};
  app.require_subcommand(1);
  Common c;

  const auto common = [&](CLI::App *sub, bool seeded) {
    sub->add_option("--config", c.config, "scenario file");
    sub->add_option("--set", c.overrides, "override a config key (key=value), repeatable");
    sub->add_option("--out", c.out, "output directory");
    if (seeded) {
      sub->add_option("--seed", c.seed, "random seed (required)");
    }
  };
  const auto inputs = [&](CLI::App *sub) {
    sub->add_option("--input,input", c.inputs, "trace file(s), .wav or .csv")->required();
    sub->add_option("--noise", c.noise, "noise reference CSV");
  };

  auto *sim = app.add_subcommand("simulate", "synthesize a sensor-array capture");
  common(sim, true);
  sim->add_flag("--csv", c.write_csv, "also write trace.csv");
  sim->footer(key_listing({"capture", "motor", "motor2", "motor3", "motor4", "geometry", "noise", "coil"}));

  auto *den = app.add_subcommand("denoise", "spectral denoise + delay-and-sum, write enhanced signal");
  common(den, false);
  inputs(den);
  den->footer(key_listing({"capture", "pipeline"}));

  auto *det = app.add_subcommand("detect", "write coarse spectrum and harmonic detection map");
  common(det, false);
  inputs(det);
  det->add_option("--weights", c.weights, "PPSP weights file");
  det->footer(key_listing({"capture", "pipeline"}));

  auto *est = app.add_subcommand("estimate", "estimate rotation speed");
  common(est, false);
  inputs(est);
  est->add_option("--weights", c.weights, "PPSP weights file");
  est->add_option("--harmonics", c.harmonics, "harmonic weights file");
  est->add_option("--multi", c.multi, "number of sources to extract")->check(CLI::PositiveNumber);
  est->add_option("--json", c.json_out, "also write records to this JSON file");
  est->footer(key_listing({"capture", "pipeline"}));

  auto *trn = app.add_subcommand("train", "train the detector and harmonic weights");
  common(trn, true);
  trn->footer(key_listing({"capture", "motor", "geometry", "noise", "coil", "pipeline", "detector", "train", "sweep"}));

  auto *bch = app.add_subcommand("bench", "distance sweep against the baselines");
  common(bch, true);
  bch->add_option("--weights", c.weights, "PPSP weights file");
  bch->add_option("--harmonics", c.harmonics, "harmonic weights file");
  bch->footer(key_listing({"capture", "motor", "geometry", "noise", "coil", "pipeline", "sweep"}));

  auto *ser = app.add_subcommand("sermap", "signal enhancement ratio over a 2D grid");
  common(ser, true);
  ser->footer(key_listing({"capture", "motor", "geometry", "noise", "coil", "sermap", "sweep"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (sim->parsed()) {
      cmd_simulate(c);
    } else if (den->parsed()) {
      cmd_denoise(c);
    } else if (det->parsed()) {
      cmd_detect(c);
    } else if (est->parsed()) {
      cmd_estimate(c);
    } else if (trn->parsed()) {
      cmd_train(c);
    } else if (bch->parsed()) {
      cmd_bench(c);
    } else if (ser->parsed()) {
      cmd_sermap(c);
    }
  } catch (const Exit &e) {
    return e.code;
  }
  return 0;
}
