/* C API for the fedsim federated-learning simulator. */

#ifndef FEDSIM_H
#define FEDSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes; mirrors the CLI exit codes for config and runtime errors.
typedef enum fedsim_status {
  FEDSIM_STATUS_OK = 0,
  FEDSIM_STATUS_CONFIG_ERROR = 1,
  FEDSIM_STATUS_RUNTIME_ERROR = 2,
  FEDSIM_STATUS_NULL_ARGUMENT = 3,
  FEDSIM_STATUS_INVALID_UTF8 = 4,
  FEDSIM_STATUS_PANIC = 5,
} fedsim_status;

// Opaque spatial partition handle.
typedef struct FedsimPartition FedsimPartition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or NULL if none.
// The pointer stays valid until the next failing call on the same thread.
const char *fedsim_last_error_message(void);

// Crate version as a static string; never freed.
const char *fedsim_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a pointer previously returned by a fedsim function
// documented as caller-owned, not yet freed.
void fedsim_string_free(char *s);

// Generates a world from a JSON world config (`side_length`,
// `sensing_radius`, `intensity`, `num_ues`, `num_classes`, `seed`) and a
// labeling name ("iid" or "region"). Returns NULL on error.
//
// # Safety
// Both arguments must be NULL or NUL-terminated strings valid for the call.
struct FedsimPartition *fedsim_partition_generate(const char *world_json, const char *labeling);

// Loads a partition from a JSON file written by `fedsim_partition_save` or
// the CLI. Returns NULL on error.
//
// # Safety
// `path` must be NULL or a NUL-terminated string valid for the call.
struct FedsimPartition *fedsim_partition_load(const char *path);

// # Safety
// `partition` must be a live handle from this library; `path` a valid
// NUL-terminated string.
enum fedsim_status fedsim_partition_save(const struct FedsimPartition *partition, const char *path);

// Serializes the partition to JSON; caller owns the string
// (`fedsim_string_free`). Returns NULL on error.
//
// # Safety
// `partition` must be NULL or a live handle from this library.
char *fedsim_partition_to_json(const struct FedsimPartition *partition);

// Number of UEs; 0 for a NULL handle.
//
// # Safety
// `partition` must be NULL or a live handle from this library.
uint64_t fedsim_partition_num_ues(const struct FedsimPartition *partition);

// Number of data points; 0 for a NULL handle.
//
// # Safety
// `partition` must be NULL or a live handle from this library.
uint64_t fedsim_partition_num_points(const struct FedsimPartition *partition);

// Captured sample count of one UE (its local dataset size); -1 on a NULL
// handle or out-of-range index.
//
// # Safety
// `partition` must be NULL or a live handle from this library.
int64_t fedsim_partition_capture_count(const struct FedsimPartition *partition, uint64_t ue);

// Releases a partition handle.
//
// # Safety
// `partition` must be NULL or a live handle from this library, not yet
// freed.
void fedsim_partition_free(struct FedsimPartition *partition);

// Expected per-UE sample count `lambda * pi * R^2`.
double fedsim_expected_samples(double intensity, double radius);

// Intersection area of two radius-`radius` discs with centers `distance`
// apart.
double fedsim_circle_intersection_area(double distance, double radius);

// Writes the partition JSON and summary of an experiment config (the CLI's
// `partition` subcommand).
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string valid for the call.
enum fedsim_status fedsim_experiment_partition(const char *config_json);

// Runs every policy x repeat arm of an experiment config, writing metric
// CSVs, selection traces, and checkpoints to the config's output directory
// (the CLI's `train` subcommand). With `resume`, completed arms are skipped
// and interrupted arms continue from their latest checkpoint.
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string valid for the call.
enum fedsim_status fedsim_experiment_train(const char *config_json, bool resume);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDSIM_H */
