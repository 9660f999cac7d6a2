/* C interface to the pilot library. Every call returns a pilot_status; on
 * failure pilot_last_error() describes the problem (thread-local, valid until
 * the next failing call on the same thread). */
#ifndef PILOT_PILOT_H
#define PILOT_PILOT_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define PILOT_API __declspec(dllexport)
#else
#define PILOT_API __attribute__((visibility("default")))
#endif

typedef enum pilot_status {
  PILOT_OK = 0,
  PILOT_ERR_USAGE = 1,   /* bad arguments, unknown config key, invalid value */
  PILOT_ERR_DATA = 2,    /* unreadable or malformed input files */
  PILOT_ERR_NUMERIC = 3, /* non-finite loss or gradient */
  PILOT_ERR_INTERNAL = 4
} pilot_status;

typedef struct pilot_config pilot_config;
typedef struct pilot_model pilot_model;
typedef struct pilot_report pilot_report;

PILOT_API const char* pilot_version(void);
PILOT_API const char* pilot_last_error(void);
/* Caps kernel threads; 1 gives the reference single-threaded schedule. */
PILOT_API pilot_status pilot_set_num_threads(size_t n);

/* String outputs: the text plus a terminating NUL is copied into buf when
 * cap is large enough; *needed (if non-null) receives the full size
 * including the NUL. A null buf with cap 0 only queries the size. */

PILOT_API pilot_status pilot_config_create(pilot_config** out);
PILOT_API pilot_status pilot_config_load(const char* path, pilot_config** out);
PILOT_API pilot_status pilot_config_parse(const char* text, pilot_config** out);
PILOT_API pilot_status pilot_config_set(pilot_config* cfg, const char* key, const char* value);
PILOT_API pilot_status pilot_config_get(const pilot_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
PILOT_API pilot_status pilot_config_serialize(const pilot_config* cfg, char* buf, size_t cap, size_t* needed);
PILOT_API pilot_status pilot_config_write(const pilot_config* cfg, const char* path);
/* Every key with its default and a description. Static storage. */
PILOT_API const char* pilot_config_help(void);
PILOT_API void pilot_config_destroy(pilot_config* cfg);

/* Trains per cfg and writes config.snapshot, train_log.csv and
 * checkpoints/ under the configured output directory. out may be null. */
PILOT_API pilot_status pilot_train(const pilot_config* cfg, pilot_model** out);
PILOT_API pilot_status pilot_model_load(const char* checkpoint, pilot_model** out);
PILOT_API pilot_status pilot_model_save(const pilot_model* model, const char* path);
/* The configuration the model was trained with (defaults if none is stored). */
PILOT_API pilot_status pilot_model_config(const pilot_model* model, pilot_config** out);
/* 1 when the model carries an activation DGM. */
PILOT_API int pilot_model_has_dgm(const pilot_model* model);
PILOT_API void pilot_model_destroy(pilot_model* model);

/* Evaluates on the test split described by cfg and writes report.json,
 * bins.csv, entropy.csv and predictions.ptns under cfg's output directory.
 * name may be null for a name derived from the method; out may be null. */
PILOT_API pilot_status pilot_evaluate(const pilot_model* model, const pilot_config* cfg, const char* name,
                                      pilot_report** out);
PILOT_API double pilot_report_accuracy(const pilot_report* r);
PILOT_API double pilot_report_nll(const pilot_report* r);
PILOT_API double pilot_report_ece(const pilot_report* r);
PILOT_API pilot_status pilot_report_json(const pilot_report* r, char* buf, size_t cap, size_t* needed);
PILOT_API pilot_status pilot_report_write_json(const pilot_report* r, const char* path);
PILOT_API void pilot_report_destroy(pilot_report* r);

/* Side-by-side CSV of report.json files (one row per model name). */
PILOT_API pilot_status pilot_compare(const char* const* report_paths, size_t n, int with_reference, const char* out_csv);
/* Uniform average of predictions.ptns files; writes the report files to out_dir. */
PILOT_API pilot_status pilot_ensemble(const char* const* prediction_paths, size_t n, const char* out_dir,
                                      pilot_report** out);

#ifdef __cplusplus
}
#endif

#endif
