#ifndef MAGTACH_H
#define MAGTACH_H

/* C interface to the magtach library. Every handle is opaque and owned by the
 * caller once returned; release it with the matching *_free function.
 * Functions return MT_OK or an error code, with a message available from
 * mt_last_error() on the calling thread. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MT_API __declspec(dllexport)
#else
#define MT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mt_status {
  MT_OK = 0,
  MT_ERR_INVALID = 1,
  MT_ERR_CONFIG = 2,
  MT_ERR_IO = 3,
  MT_ERR_PIPELINE = 4
} mt_status;

typedef struct mt_scenario mt_scenario;
typedef struct mt_trace mt_trace;
typedef struct mt_noise_ref mt_noise_ref;
typedef struct mt_detector mt_detector;
typedef struct mt_harmonic_weights mt_harmonic_weights;

typedef struct mt_speed_estimate {
  double fine_hz;
  double coarse_hz;
  double rpm;
  double confidence;
  int low_confidence;
  int shortfall;
} mt_speed_estimate;

typedef void (*mt_epoch_callback)(size_t epoch, double loss, void *user);

MT_API const char *mt_last_error(void);
MT_API const char *mt_version(void);

/* Scenario configuration */
MT_API mt_status mt_scenario_default(mt_scenario **out);
MT_API mt_status mt_scenario_load(const char *path, mt_scenario **out);
/* "key=value" override, applied on top of whatever is loaded. */
MT_API mt_status mt_scenario_set(mt_scenario *scn, const char *assignment);
MT_API mt_status mt_scenario_validate(const mt_scenario *scn);
/* Writes 16 hex digits plus NUL; buf needs at least 17 bytes. */
MT_API mt_status mt_scenario_fingerprint(const mt_scenario *scn, char *buf, size_t len);
MT_API double mt_scenario_sample_rate(const mt_scenario *scn);
MT_API double mt_scenario_volts_per_count(const mt_scenario *scn);
MT_API size_t mt_scenario_m_harmonics(const mt_scenario *scn);
MT_API int mt_scenario_uses_ppsp(const mt_scenario *scn);
MT_API void mt_scenario_free(mt_scenario *scn);

MT_API size_t mt_config_key_count(void);
MT_API const char *mt_config_key_name(size_t index);
MT_API const char *mt_config_key_help(size_t index);

/* Traces and noise references */
MT_API mt_status mt_simulate(const mt_scenario *scn, uint64_t seed, mt_trace **trace,
                             mt_noise_ref **noise);
/* trace.wav (and trace.csv when write_csv), noise_ref.csv, truth.json. */
MT_API mt_status mt_simulate_to_dir(const mt_scenario *scn, uint64_t seed, const char *out_dir,
                                    int write_csv, size_t *clipped);
MT_API mt_status mt_trace_read(const char *path, double volts_per_count, mt_trace **out);
MT_API mt_status mt_trace_write_wav(const mt_trace *trace, const char *path,
                                    double volts_per_count, size_t *clipped);
MT_API mt_status mt_trace_write_csv(const mt_trace *trace, const char *path);
MT_API size_t mt_trace_channels(const mt_trace *trace);
MT_API size_t mt_trace_length(const mt_trace *trace);
MT_API double mt_trace_sample_rate(const mt_trace *trace);
MT_API mt_status mt_trace_channel(const mt_trace *trace, size_t channel, const double **data);
MT_API void mt_trace_free(mt_trace *trace);

MT_API mt_status mt_noise_ref_read(const char *path, mt_noise_ref **out);
MT_API mt_status mt_noise_ref_write(const mt_noise_ref *noise, const char *path);
MT_API void mt_noise_ref_free(mt_noise_ref *noise);

/* Models */
MT_API mt_status mt_detector_load(const char *path, mt_detector **out);
MT_API mt_status mt_detector_save(const mt_detector *det, const char *path);
MT_API void mt_detector_free(mt_detector *det);

MT_API mt_status mt_harmonic_weights_default(size_t m_harmonics, mt_harmonic_weights **out);
MT_API mt_status mt_harmonic_weights_load(const char *path, mt_harmonic_weights **out);
MT_API mt_status mt_harmonic_weights_save(const mt_harmonic_weights *hw, const char *path);
MT_API void mt_harmonic_weights_free(mt_harmonic_weights *hw);

/* Processing. A NULL noise reference means no spectral division. */
MT_API mt_status mt_enhance(const mt_scenario *scn, const mt_trace *trace,
                            const mt_noise_ref *noise, const char *enhanced_csv,
                            const char *spectrum_csv);
/* det may be NULL when the scenario selects the threshold detector. */
MT_API mt_status mt_detect(const mt_scenario *scn, const mt_trace *trace,
                           const mt_noise_ref *noise, const mt_detector *det,
                           const char *detection_csv, const char *spectrum_csv);
/* Writes up to `capacity` estimates (k_sources of them at most) to `out`. */
MT_API mt_status mt_estimate(const mt_scenario *scn, const mt_trace *trace,
                             const mt_noise_ref *noise, const mt_detector *det,
                             const mt_harmonic_weights *hw, size_t k_sources,
                             mt_speed_estimate *out, size_t capacity, size_t *count);
MT_API mt_status mt_estimate_json(const mt_speed_estimate *e, char *buf, size_t len);

/* ppsp.weights, harmonics.txt and loss_history.csv in out_dir. */
MT_API mt_status mt_train(const mt_scenario *scn, uint64_t seed, const char *out_dir,
                          mt_epoch_callback cb, void *user);
/* trials.csv, aggregate.csv, summary.json in out_dir. */
MT_API mt_status mt_bench(const mt_scenario *scn, const mt_detector *det,
                          const mt_harmonic_weights *hw, uint64_t seed, const char *out_dir);
/* One ser_<delay>ms.csv per configured delay. */
MT_API mt_status mt_sermap(const mt_scenario *scn, uint64_t seed, const char *out_dir,
                           size_t *rows, size_t *cols);

#ifdef __cplusplus
}
#endif

#endif
