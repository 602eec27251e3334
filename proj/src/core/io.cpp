#include "magtach/io.hpp"

#include "magtach/error.hpp"
#include "magtach/text.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace magtach {

namespace {

void put_u16(std::ofstream &out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ofstream &out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char *p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t get_u16(const unsigned char *p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::ofstream open_out(const std::filesystem::path &path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) {
    fail(ErrorKind::Io, "cannot write " + path.string());
  }
  return out;
}

std::ifstream open_in(const std::filesystem::path &path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) {
    fail(ErrorKind::Io, "cannot open " + path.string());
  }
  return in;
}

void finish(std::ofstream &out, const std::filesystem::path &path) {
  out.flush();
  if (!out) {
    fail(ErrorKind::Io, "failed writing " + path.string());
  }
}

} // namespace

std::size_t write_trace_wav(const SensorTrace &trace, const std::filesystem::path &path,
                            double volts_per_count) {
  trace.validate();
  require(volts_per_count > 0.0, "volts_per_count must be positive");
  require(trace.channel_count() <= 65535, "too many channels for WAV");
  const auto channels = static_cast<std::uint16_t>(trace.channel_count());
  const auto frames = trace.length();
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(frames) * channels * 2;
  require(data_bytes < 0xffffffffULL - 64, "trace too long for WAV");
  const auto rate = static_cast<std::uint32_t>(std::lround(trace.sample_rate_hz));
  auto out = open_out(path, true);
  out.write("RIFF", 4);
  put_u32(out, static_cast<std::uint32_t>(36 + data_bytes));
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 1); // PCM
  put_u16(out, channels);
  put_u32(out, rate);
  put_u32(out, rate * channels * 2);
  put_u16(out, static_cast<std::uint16_t>(channels * 2));
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, static_cast<std::uint32_t>(data_bytes));
  std::size_t clipped = 0;
  std::vector<char> buf(static_cast<std::size_t>(data_bytes));
  std::size_t o = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      double v = std::round(trace.channels[c][t] / volts_per_count);
      if (v > 32767.0 || v < -32768.0) {
        ++clipped;
        v = std::clamp(v, -32768.0, 32767.0);
      }
      const auto s = static_cast<std::uint16_t>(static_cast<std::int16_t>(v));
      buf[o++] = static_cast<char>(s & 0xff);
      buf[o++] = static_cast<char>(s >> 8);
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish(out, path);
  return clipped;
}

SensorTrace read_trace_wav(const std::filesystem::path &path, double volts_per_count) {
  require(volts_per_count > 0.0, "volts_per_count must be positive");
  auto in = open_in(path, true);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  const auto where = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorKind::Io, where + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint16_t format = 0;
  std::uint32_t rate = 0;
  const unsigned char *data = nullptr;
  std::size_t data_len = 0;
  while (pos + 8 <= bytes.size()) {
    const auto len = get_u32(&bytes[pos + 4]);
    const auto body = pos + 8;
    if (body + len > bytes.size()) {
      fail(ErrorKind::Io, where + ": truncated chunk");
    }
    if (std::memcmp(&bytes[pos], "fmt ", 4) == 0 && len >= 16) {
      format = get_u16(&bytes[body]);
      channels = get_u16(&bytes[body + 2]);
      rate = get_u32(&bytes[body + 4]);
      bits = get_u16(&bytes[body + 14]);
    } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
      data = &bytes[body];
      data_len = len;
    }
    pos = body + len + (len & 1);
  }
  if (format != 1 || bits != 16 || channels == 0 || rate == 0) {
    fail(ErrorKind::Io, where + ": only 16-bit PCM WAV is supported");
  }
  if (data == nullptr) {
    fail(ErrorKind::Io, where + ": no data chunk");
  }
  const std::size_t frames = data_len / (2u * channels);
  SensorTrace trace;
  trace.sample_rate_hz = rate;
  trace.channels.assign(channels, std::vector<double>(frames));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      const auto s = static_cast<std::int16_t>(get_u16(data + 2 * (t * channels + c)));
      trace.channels[c][t] = s * volts_per_count;
    }
  }
  return trace;
}

void write_trace_csv(const SensorTrace &trace, const std::filesystem::path &path) {
  trace.validate();
  auto out = open_out(path);
  out << "# fs=" << format_double(trace.sample_rate_hz) << '\n';
  for (std::size_t c = 0; c < trace.channel_count(); ++c) {
    out << (c ? "," : "") << "ch" << c;
  }
  out << '\n';
  for (std::size_t t = 0; t < trace.length(); ++t) {
    for (std::size_t c = 0; c < trace.channel_count(); ++c) {
      out << (c ? "," : "") << format_double(trace.channels[c][t]);
    }
    out << '\n';
  }
  finish(out, path);
}

SensorTrace read_trace_csv(const std::filesystem::path &path) {
  auto in = open_in(path);
  const auto where = path.string();
  std::string line;
  if (!std::getline(in, line) || line.rfind("# fs=", 0) != 0) {
    fail(ErrorKind::Io, where + ":1: expected '# fs=<Hz>'");
  }
  SensorTrace trace;
  trace.sample_rate_hz = parse_double(std::string_view(line).substr(5), where + ":1");
  if (!std::getline(in, line)) {
    fail(ErrorKind::Io, where + ":2: missing channel header");
  }
  const auto channels = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  trace.channels.assign(channels, {});
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) {
      continue;
    }
    const auto w = where + ":" + std::to_string(lineno);
    std::string_view rest(line);
    for (std::size_t c = 0; c < channels; ++c) {
      const auto comma = rest.find(',');
      if ((comma == std::string_view::npos) != (c + 1 == channels)) {
        fail(ErrorKind::Io, w + ": expected " + std::to_string(channels) + " columns");
      }
      trace.channels[c].push_back(parse_double(rest.substr(0, comma), w));
      if (comma != std::string_view::npos) {
        rest.remove_prefix(comma + 1);
      }
    }
  }
  return trace;
}

SensorTrace read_trace(const std::filesystem::path &path, double volts_per_count) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".wav") {
    return read_trace_wav(path, volts_per_count);
  }
  if (ext == ".csv") {
    return read_trace_csv(path);
  }
  fail(ErrorKind::Io, path.string() + ": unsupported trace format (want .wav or .csv)");
}

void write_noise_reference(const NoiseReference &noise, const std::filesystem::path &path) {
  auto out = open_out(path);
  out << "# signal_length=" << noise.signal_length << '\n' << "bin,magnitude\n";
  for (std::size_t b = 0; b < noise.magnitudes.size(); ++b) {
    out << b << ',' << format_double(noise.magnitudes[b]) << '\n';
  }
  finish(out, path);
}

NoiseReference read_noise_reference(const std::filesystem::path &path) {
  auto in = open_in(path);
  const auto where = path.string();
  std::string line;
  if (!std::getline(in, line) || line.rfind("# signal_length=", 0) != 0) {
    fail(ErrorKind::Io, where + ":1: expected '# signal_length=<n>'");
  }
  NoiseReference n;
  const auto len = parse_int(std::string_view(line).substr(16), where + ":1");
  if (len <= 0) {
    fail(ErrorKind::Io, where + ":1: signal length must be positive");
  }
  n.signal_length = static_cast<std::size_t>(len);
  std::getline(in, line);
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) {
      continue;
    }
    const auto w = where + ":" + std::to_string(lineno);
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      fail(ErrorKind::Io, w + ": expected bin,magnitude");
    }
    if (parse_int(std::string_view(line).substr(0, comma), w) !=
        static_cast<long long>(n.magnitudes.size())) {
      fail(ErrorKind::Io, w + ": bins must be consecutive from 0");
    }
    const double m = parse_double(std::string_view(line).substr(comma + 1), w);
    if (!(m >= 0.0)) {
      fail(ErrorKind::Io, w + ": magnitudes must be non-negative");
    }
    n.magnitudes.push_back(m);
  }
  if (n.magnitudes.size() != n.signal_length / 2 + 1) {
    fail(ErrorKind::Io, where + ": expected " + std::to_string(n.signal_length / 2 + 1) + " bins");
  }
  return n;
}

void write_spectrum_csv(const PowerSpectrum &psd, const std::filesystem::path &path) {
  auto out = open_out(path);
  out << "frequency_hz,density\n";
  for (std::size_t b = 0; b < psd.size(); ++b) {
    out << format_double(psd.frequencies[b]) << ',' << format_double(psd.densities[b]) << '\n';
  }
  finish(out, path);
}

void write_detection_csv(const DetectionMap &map, const std::filesystem::path &path) {
  auto out = open_out(path);
  out << "frequency_hz,probability\n";
  for (std::size_t b = 0; b < map.size(); ++b) {
    out << format_double(map.frequencies[b]) << ',' << format_double(map.probabilities[b]) << '\n';
  }
  finish(out, path);
}

} // namespace magtach
