#include "doctest.h"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const std::string kCli = MAGTACH_CLI;
const std::string kData = MAGTACH_DATA_DIR;

fs::path root() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "magtach_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::string &args) {
  const auto out = root() / "stdout.txt";
  const auto err = root() / "stderr.txt";
  const std::string cmd = kCli + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

} // namespace

TEST_CASE("exit codes") {
  CHECK(run("--help").code == 0);
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);

  const auto r = run("simulate --out " + (root() / "x").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("--seed") != std::string::npos);

  CHECK(run("simulate --seed 1 --set nope.key=3 --out " + (root() / "x").string()).code == 2);
  CHECK(run("simulate --seed 1 --config /nonexistent.ini").code == 3);
  CHECK(run("estimate --input /nonexistent.wav --set pipeline.detector=threshold").code == 3);

  const auto missing = run("estimate --input /nonexistent.wav");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("--weights") != std::string::npos);

  const auto bad_weights = run("estimate --input /nonexistent.wav --weights /nonexistent.weights");
  CHECK(bad_weights.code == 3);
  CHECK(bad_weights.err.find("weights") != std::string::npos);

  std::ofstream(root() / "bad.ini") << "[capture]\nfs = 0\n";
  const auto invalid = run("simulate --seed 1 --config " + (root() / "bad.ini").string());
  CHECK(invalid.code == 2);
  CHECK(invalid.err.find("config") != std::string::npos);

  CHECK(run("simulate --help").out.find("noise.mains") != std::string::npos);
}

TEST_CASE("simulate is byte-identical for a fixed seed") {
  const auto a = root() / "sim_a";
  const auto b = root() / "sim_b";
  REQUIRE(run("simulate --seed 42 --csv --out " + a.string()).code == 0);
  REQUIRE(run("simulate --seed 42 --csv --out " + b.string()).code == 0);
  for (const char *f : {"trace.wav", "trace.csv", "noise_ref.csv", "truth.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const auto wav = slurp(a / "trace.wav");
  REQUIRE(wav.size() > 44);
  const auto channels = static_cast<unsigned char>(wav[22]) | (static_cast<unsigned char>(wav[23]) << 8);
  CHECK(channels == 4);

  const auto c = root() / "sim_c";
  REQUIRE(run("simulate --seed 43 --out " + c.string()).code == 0);
  CHECK(slurp(a / "trace.wav") != slurp(c / "trace.wav"));
}

TEST_CASE("estimate from a simulated capture") {
  const auto dir = root() / "est";
  REQUIRE(run("simulate --seed 3 --out " + dir.string()).code == 0);
  const auto w = kData + "/ppsp.weights";
  const auto r = run("estimate --input " + (dir / "trace.wav").string() + " --noise " +
                     (dir / "noise_ref.csv").string() + " --weights " + w + " --json " +
                     (dir / "est.json").string());
  REQUIRE(r.code == 0);
  const auto line = r.out.substr(r.out.find('\n') + 1);
  std::stringstream ss(line.substr(line.find(".wav,") + 5));
  double fine = 0.0;
  char comma = 0;
  double coarse = 0.0;
  double rpm = 0.0;
  ss >> fine >> comma >> coarse >> comma >> rpm;
  CHECK(std::abs(rpm - 5640.0) <= 1.2);
  CHECK(slurp(dir / "est.json").find("\"rpm\"") != std::string::npos);

  SUBCASE("two sources") {
    const auto two = root() / "two";
    REQUIRE(run("simulate --seed 3 --set motor2.rpm=2580 --set motor2.position=-6,12 --out " +
                two.string())
                .code == 0);
    const auto m = run("estimate --multi 2 --input " + (two / "trace.wav").string() +
                       " --noise " + (two / "noise_ref.csv").string() + " --weights " + w);
    REQUIRE(m.code == 0);
    std::size_t lines = 0;
    for (char ch : m.out) {
      lines += ch == '\n' ? 1 : 0;
    }
    CHECK(lines == 3);
  }

  SUBCASE("detect and denoise") {
    REQUIRE(run("detect --input " + (dir / "trace.wav").string() + " --weights " + w + " --out " +
                dir.string())
                .code == 0);
    CHECK(fs::exists(dir / "detection.csv"));
    REQUIRE(run("denoise --input " + (dir / "trace.wav").string() + " --out " + dir.string())
                .code == 0);
    CHECK(fs::exists(dir / "enhanced.csv"));
  }
}

TEST_CASE("bench and sermap") {
  const auto w = kData + "/ppsp.weights";
  const std::string sets =
      " --set sweep.distances=10,60 --set sweep.trials=2 --set capture.duration_s=0.5";
  const auto a = root() / "bench_a";
  const auto b = root() / "bench_b";
  REQUIRE(run("bench --seed 8 --weights " + w + sets + " --out " + a.string()).code == 0);
  REQUIRE(run("bench --seed 8 --weights " + w + sets + " --out " + b.string()).code == 0);
  for (const char *f : {"trials.csv", "aggregate.csv", "summary.json"}) {
    CHECK(slurp(a / f) == slurp(b / f));
  }

  const auto empty = root() / "bench_empty";
  REQUIRE(run("bench --seed 8 --set sweep.trials=0 --weights " + w + " --out " + empty.string())
              .code == 0);
  CHECK(fs::exists(empty / "aggregate.csv"));

  const auto ser = root() / "ser";
  const auto r = run("sermap --seed 1 --set sermap.duration_s=0.05 --out " + ser.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("grid 17 x 16") != std::string::npos);
  CHECK(fs::exists(ser / "ser_0ms.csv"));
  CHECK(fs::exists(ser / "ser_4ms.csv"));
  fs::remove_all(root());
}
