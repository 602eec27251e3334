#pragma once

#include "magtach/detector.hpp"
#include "magtach/dsp.hpp"
#include "magtach/signal_model.hpp"

#include <cstddef>
#include <filesystem>

namespace magtach {

/// 16-bit PCM, one WAV channel per sensor. Samples are divided by
/// volts_per_count and rounded; returns how many samples had to be clipped.
std::size_t write_trace_wav(const SensorTrace &trace, const std::filesystem::path &path,
                            double volts_per_count);
SensorTrace read_trace_wav(const std::filesystem::path &path, double volts_per_count);

/// "# fs=<Hz>" line, then a ch0,ch1,... header, then one row per sample.
void write_trace_csv(const SensorTrace &trace, const std::filesystem::path &path);
SensorTrace read_trace_csv(const std::filesystem::path &path);

/// Dispatches on the extension (.wav or .csv).
SensorTrace read_trace(const std::filesystem::path &path, double volts_per_count);

/// "# signal_length=<n>", then bin,magnitude rows.
void write_noise_reference(const NoiseReference &noise, const std::filesystem::path &path);
NoiseReference read_noise_reference(const std::filesystem::path &path);

/// frequency_hz,density rows.
void write_spectrum_csv(const PowerSpectrum &psd, const std::filesystem::path &path);
/// frequency_hz,probability rows.
void write_detection_csv(const DetectionMap &map, const std::filesystem::path &path);

} // namespace magtach
