#ifndef KNOWMRI_H
#define KNOWMRI_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum km_status {
  KM_OK = 0,
  KM_INVALID_ARGUMENT = 1,
  KM_NOT_FOUND = 2,
  KM_IO = 3,
  KM_SHAPE_MISMATCH = 4,
  KM_UNSUPPORTED = 5,
  KM_OUT_OF_RANGE = 6,
  KM_VALIDATION = 7,
  KM_NUMERICAL = 8,
  KM_UNAVAILABLE = 9,
  KM_OVERLOADED = 10,
  KM_INTERNAL = 11
} km_status;

/* A workspace: the models, datasets and providers named by one config file. */
typedef struct km_workspace km_workspace;

/* Strings returned through `char** out` are owned by the caller and must be
 * released with km_free_string. On failure *out is set to NULL and
 * km_last_error() describes the problem (per thread). */

/* NULL config_path resolves $KNOWMRI_CONFIG, then the build-time default. */
km_status km_open(const char* config_path, km_workspace** out);
void km_close(km_workspace* ws);

km_status km_list_models(km_workspace* ws, char** out_json);
km_status km_list_datasets(km_workspace* ws, char** out_json);
/* keys_csv may be NULL to list every method. */
km_status km_list_methods(km_workspace* ws, const char* keys_csv, char** out_json);
km_status km_search(km_workspace* ws, const char* dataset_id, const char* query, int k, char** out_json);
km_status km_normalize(km_workspace* ws, const char* text, char** out_json);

/* Resolves a diagnose body ({"model_id", "sample"|"dataset"+"index"|"text",
 * "method_ids"?, "config"?, "seed"?}) into the request that would run. */
km_status km_prepare(km_workspace* ws, const char* body_json, char** out_request_json);
/* Runs synchronously; out_report receives the canonical report bytes. */
km_status km_diagnose(km_workspace* ws, const char* body_json, char** out_report);
km_status km_capability(km_workspace* ws, const char* body_json, char** out_json);

/* Blocks serving HTTP until the process is stopped. host NULL / port <= 0
 * use the config values. */
km_status km_serve(km_workspace* ws, const char* host, int port);

const char* km_last_error(void);
const char* km_status_name(km_status status);
void km_free_string(char* s);

#ifdef __cplusplus
}
#endif

#endif
