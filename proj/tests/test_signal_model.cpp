#include "doctest.h"

#include "magtach/error.hpp"
#include "magtach/signal_model.hpp"

#include <cmath>
#include <random>

using namespace magtach;

namespace {

constexpr double kPi = 3.14159265358979323846;

CoilParams unit_coil() {
  CoilParams c;
  c.mu0 = 1.0;
  c.mu_r = 1.0;
  c.turns = 1;
  c.area_m2 = 1.0;
  return c;
}

double peak_abs(const std::vector<double> &v) {
  double m = 0.0;
  for (double x : v) {
    m = std::max(m, std::abs(x));
  }
  return m;
}

double rms(const std::vector<double> &v) {
  double s = 0.0;
  for (double x : v) {
    s += x * x;
  }
  return std::sqrt(s / static_cast<double>(v.size()));
}

MotorProfile tone(double hz, std::vector<Harmonic> h) {
  MotorProfile m;
  m.period_s = 1.0 / hz;
  m.harmonics = std::move(h);
  return m;
}

} // namespace

TEST_CASE("motor profile validation") {
  auto m = tone(50.0, {{1, 1.0, 0.0}});
  CHECK_NOTHROW(m.validate());
  m.period_s = 0.0;
  CHECK_THROWS_AS(m.validate(), Error);
  m = tone(50.0, {{0, 1.0, 0.0}});
  CHECK_THROWS_AS(m.validate(), Error);
  m = tone(50.0, {{1, 1.0, 0.0}, {1, 0.5, 0.0}});
  CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("synthesize_field") {
  SUBCASE("dc only is constant") {
    MotorProfile m = tone(10.0, {});
    m.dc_offset = 0.7;
    for (double v : synthesize_field(m, 0.1, 1000.0)) {
      CHECK(v == doctest::Approx(0.7));
    }
  }
  SUBCASE("sampling too slow for the top harmonic is rejected") {
    auto m = tone(100.0, {{1, 1.0, 0.0}, {5, 1.0, 0.0}});
    CHECK_THROWS_AS(synthesize_field(m, 0.1, 1000.0), Error);
    CHECK_NOTHROW(synthesize_field(m, 0.1, 1001.0));
  }
  SUBCASE("single harmonic peaks at the amplitude") {
    auto m = tone(50.0, {{1, 2.5, 0.0}});
    CHECK(peak_abs(synthesize_field(m, 0.1, 10000.0)) == doctest::Approx(2.5).epsilon(1e-9));
  }
  SUBCASE("periodic with integer samples per period") {
    auto m = tone(100.0, {{1, 1.0, 0.3}, {2, 0.5, 1.1}, {3, 0.2, -0.4}});
    m.dc_offset = 0.1;
    const auto v = synthesize_field(m, 0.2, 10000.0);
    for (std::size_t j = 0; j + 100 < v.size(); ++j) {
      CHECK(v[j] == doctest::Approx(v[j + 100]).epsilon(1e-9));
    }
  }
}

TEST_CASE("induce_voltage amplitudes") {
  SUBCASE("equal D_k gives harmonic-2 twice harmonic-1") {
    const auto a = induce_voltage(tone(100.0, {{1, 1.0, 0.0}}), unit_coil(), 0.1, 40000.0);
    const auto b = induce_voltage(tone(100.0, {{2, 1.0, 0.0}}), unit_coil(), 0.1, 40000.0);
    CHECK(rms(b) / rms(a) == doctest::Approx(2.0).epsilon(1e-9));
  }
  SUBCASE("closed-form peak 200 pi") {
    const auto v = induce_voltage(tone(100.0, {{1, 1.0, 0.0}}), unit_coil(), 0.05, 44100.0);
    CHECK(peak_abs(v) == doctest::Approx(200.0 * kPi).epsilon(1e-3));
  }
  SUBCASE("matches the numerical derivative of the field") {
    auto m = tone(37.0, {{1, 1.0, 0.2}, {2, 0.4, 0.9}, {4, 0.1, 2.0}});
    const double fs = 44100.0;
    const auto coil = unit_coil();
    const auto b = synthesize_field(m, 0.1, fs);
    const auto v = induce_voltage(m, coil, 0.1, fs);
    double worst = 0.0;
    for (std::size_t j = 1; j + 1 < b.size(); ++j) {
      const double d = -(b[j + 1] - b[j - 1]) * fs / 2.0;
      worst = std::max(worst, std::abs(d - v[j]));
    }
    CHECK(worst / peak_abs(v) < 1e-3);
  }
  SUBCASE("dc offset induces nothing") {
    auto m = tone(30.0, {});
    m.dc_offset = 5.0;
    CHECK(peak_abs(induce_voltage(m, unit_coil(), 0.1, 1000.0)) == 0.0);
  }
}

TEST_CASE("apply_path_loss") {
  ArrayGeometry g;
  g.reference_distance_cm = 5.0;
  CHECK(apply_path_loss(3.0, 5.0, g) == doctest::Approx(3.0));
  const double near = apply_path_loss(1.0, 10.0, g);
  const double far = apply_path_loss(1.0, 20.0, g);
  CHECK((far * far) / (near * near) == doctest::Approx(1.0 / 16.0));
  CHECK(apply_path_loss(1.0, 50.0, g) == doctest::Approx(0.01));
  CHECK_THROWS_AS(apply_path_loss(1.0, 0.0, g), Error);
  CHECK_THROWS_AS(apply_path_loss(1.0, -2.0, g), Error);

  SUBCASE("monotone and multiplicative") {
    for (double e : {2.0, 2.5, 3.0}) {
      g.falloff_exponent = e;
      double prev = apply_path_loss(1.0, 1.0, g);
      for (double d = 2.0; d < 200.0; d += 3.7) {
        const double cur = apply_path_loss(1.0, d, g);
        CHECK(cur < prev);
        prev = cur;
      }
      const double d1 = 7.0;
      const double d2 = 13.0;
      const double lhs = apply_path_loss(1.0, d1, g) * apply_path_loss(1.0, d2, g) /
                         apply_path_loss(1.0, g.reference_distance_cm, g);
      CHECK(lhs == doctest::Approx(apply_path_loss(1.0, d1 * d2 / g.reference_distance_cm, g)));
    }
  }
}

TEST_CASE("simulate_array") {
  const double fs = 44100.0;
  const auto coil = unit_coil();

  SUBCASE("single noiseless sensor is the attenuated induced voltage") {
    ArrayGeometry g;
    g.sensors = {{0.0, 0.0}};
    auto m = tone(94.0, {{1, 1.0, 0.4}, {2, 0.25, 1.0}});
    m.position = {0.0, 10.0};
    const auto tr = simulate_array(m, g, NoiseProfile{}, coil, 0.2, fs, 3);
    REQUIRE(tr.channel_count() == 1);
    const auto v = induce_voltage(m, coil, 0.2, fs);
    REQUIRE(tr.length() == v.size());
    const double gain = apply_path_loss(1.0, 10.0, g);
    for (std::size_t j = 0; j < v.size(); ++j) {
      CHECK(tr.channels[0][j] == doctest::Approx(gain * v[j]).epsilon(1e-12));
    }
  }

  SUBCASE("calibrated speed gives a 4 ms cross-channel delay") {
    ArrayGeometry g;
    g.sensors = {{-8.0, 0.0}, {8.0, 0.0}};
    g.effective_speed_cm_s = calibrate_effective_speed(g, {-4.0, 11.0}, 0.004);
    auto m = tone(94.0, {{1, 1.0, 0.0}, {3, 0.3, 0.5}});
    m.position = {-4.0, 11.0};
    const auto d = sensor_delays(m, g);
    CHECK(d[1] - d[0] == doctest::Approx(0.004).epsilon(1e-12));
    const auto tr = simulate_array(m, g, NoiseProfile{}, coil, 0.3, fs, 1);
    const long long lag = std::llround(0.004 * fs);
    const double g0 = apply_path_loss(1.0, distance(m.position, g.sensors[0]), g);
    const double g1 = apply_path_loss(1.0, distance(m.position, g.sensors[1]), g);
    for (std::size_t j = 1000; j < tr.length(); ++j) {
      CHECK(tr.channels[1][j] / g1 ==
            doctest::Approx(tr.channels[0][j - static_cast<std::size_t>(lag)] / g0).epsilon(1e-9));
    }
  }

  SUBCASE("noise-only channels match the analytic RMS") {
    ArrayGeometry g;
    g.sensors = {{-3.0, 0.0}, {3.0, 0.0}};
    NoiseProfile n;
    n.mains = {{60.0, 0.05}, {120.0, 0.01}};
    n.broadband_sigma = 0.02;
    n.shared_fraction = 0.3;
    auto m = tone(94.0, {{1, 0.0, 0.0}});
    int ok = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto tr = simulate_array(m, g, n, coil, 0.5, fs, s);
      bool all = true;
      for (const auto &ch : tr.channels) {
        all = all && std::abs(rms(ch) / n.analytic_rms() - 1.0) < 0.05;
      }
      ok += all ? 1 : 0;
    }
    CHECK(ok == 100);
  }

  SUBCASE("bit-reproducible for a fixed seed") {
    ArrayGeometry g;
    g.sensors = {{-8.0, 0.0}, {-3.0, 0.0}, {3.0, 0.0}, {8.0, 0.0}};
    NoiseProfile n;
    n.mains = {{60.0, 0.01}};
    n.broadband_sigma = 0.01;
    n.shared_fraction = 0.5;
    auto m = tone(80.0, {{1, 1.0, 0.0}, {2, 0.5, 0.0}});
    m.position = {0.0, 20.0};
    const auto a = simulate_array(m, g, n, coil, 0.2, fs, 42);
    const auto b = simulate_array(m, g, n, coil, 0.2, fs, 42);
    const auto c = simulate_array(m, g, n, coil, 0.2, fs, 43);
    CHECK(a.channels == b.channels);
    CHECK(a.channels != c.channels);
  }

  SUBCASE("empty sensor list is rejected") {
    ArrayGeometry g;
    CHECK_THROWS_AS(simulate_array(tone(10.0, {{1, 1.0, 0.0}}), g, NoiseProfile{}, coil, 0.1, fs, 0),
                    Error);
  }
}

TEST_CASE("compute_ser") {
  const double fs = 44100.0;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> base(8000);
  for (auto &x : base) {
    x = gauss(rng);
  }
  const std::size_t lag = 176;
  std::vector<double> delayed(base.size(), 0.0);
  std::vector<double> inverted(base.size(), 0.0);
  for (std::size_t j = lag; j < base.size(); ++j) {
    delayed[j] = base[j - lag];
    inverted[j] = -base[j - lag];
  }
  const double dt = static_cast<double>(lag) / fs;

  CHECK(compute_ser(base, delayed, dt, fs) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(compute_ser(base, inverted, dt, fs)) < 1e-9);

  SUBCASE("maximized at the true delay") {
    const double at_true = compute_ser(base, delayed, dt, fs);
    for (long long off = -20; off <= 20; ++off) {
      const double s = compute_ser(base, delayed, static_cast<double>(off + static_cast<long long>(lag)) / fs, fs);
      CHECK(s >= 0.0);
      CHECK(s <= 1.0 + 1e-12);
      CHECK(s <= at_true + 1e-12);
    }
  }

  SUBCASE("independent white noise") {
    int ok = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      std::mt19937_64 r(1000 + s);
      std::vector<double> a(4410);
      std::vector<double> b(4410);
      for (auto &x : a) {
        x = gauss(r);
      }
      for (auto &x : b) {
        x = gauss(r);
      }
      ok += std::abs(compute_ser(a, b, 0.001, fs) - 1.0 / std::sqrt(2.0)) < 0.05 ? 1 : 0;
    }
    CHECK(ok == 100);
  }

  SUBCASE("errors") {
    std::vector<double> z(100, 0.0);
    CHECK_THROWS_AS(compute_ser(z, z, 0.0, fs), Error);
    std::vector<double> shorter(50, 1.0);
    CHECK_THROWS_AS(compute_ser(z, shorter, 0.0, fs), Error);
    CHECK_THROWS_AS(compute_ser(base, delayed, 1.0, fs), Error);
  }
}

TEST_CASE("resonance_capacitance") {
  CHECK(resonance_capacitance(1.0 / (2.0 * kPi), 1.0) == doctest::Approx(1.0));
  CHECK(resonance_capacitance(100.0, 1.0) == doctest::Approx(2.533e-6).epsilon(1e-4));
  // A few-henry pickup coil tuned near 300 Hz lands on the 0.1 uF order.
  const double c = resonance_capacitance(300.0, 2.8);
  CHECK(c > 0.05e-6);
  CHECK(c < 0.5e-6);
  CHECK_THROWS_AS(resonance_capacitance(0.0, 1.0), Error);
  CHECK_THROWS_AS(resonance_capacitance(100.0, -1.0), Error);
}
