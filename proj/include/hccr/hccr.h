#ifndef HCCR_H
#define HCCR_H

/* C interface to the hccr library: building, training, evaluating and
 * visualizing the 96x96 character recognition networks.
 *
 * All functions returning hccr_status report failures through the status
 * code; hccr_last_error() then holds a message for the calling thread.
 * Handles are opaque and owned by the caller. */

#include <stddef.h>
#include <stdint.h>

#if defined(HCCR_BUILDING_LIBRARY)
#define HCCR_API __attribute__((visibility("default")))
#else
#define HCCR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hccr_status {
  HCCR_OK = 0,
  HCCR_ERR_INVALID_ARGUMENT = 1,
  HCCR_ERR_SHAPE = 2,
  HCCR_ERR_IO = 3,
  HCCR_ERR_BAD_MAGIC = 4,
  HCCR_ERR_VERSION = 5,
  HCCR_ERR_TRUNCATED = 6,
  HCCR_ERR_SHAPE_MISMATCH = 7,
  HCCR_ERR_VARIANT_MISMATCH = 8,
  HCCR_ERR_CORRUPT_RECORD = 9,
  HCCR_ERR_OVERFLOW = 10,
  HCCR_ERR_DATA = 11,
  HCCR_ERR_CONFIG = 12,
  HCCR_ERR_INTERNAL = 99
} hccr_status;

#define HCCR_IMAGE_SIZE 96
#define HCCR_IMAGE_PIXELS (HCCR_IMAGE_SIZE * HCCR_IMAGE_SIZE)
#define HCCR_ANY_VARIANT 0

typedef struct hccr_network hccr_network;
typedef struct hccr_dataset hccr_dataset;
typedef struct hccr_cost_report hccr_cost_report;

HCCR_API const char* hccr_version(void);
HCCR_API const char* hccr_status_string(hccr_status status);
/* Message of the last failed call on this thread; "" if none. */
HCCR_API const char* hccr_last_error(void);

/* Worker threads for the batch-parallel paths; 1 (the default) keeps all
 * results bit-reproducible. */
HCCR_API hccr_status hccr_set_threads(int threads);
HCCR_API int hccr_get_threads(void);

/* ---- networks ---------------------------------------------------------- */

/* variant is 'A' (GAP head), 'B' (GWOAP) or 'C' (GWAP). */
HCCR_API hccr_status hccr_network_build(char variant, uint32_t num_classes, uint64_t seed,
                                        hccr_network** out);
/* As above with the initial value of the GWOAP/GWAP kernel set explicitly. */
HCCR_API hccr_status hccr_network_build_ex(char variant, uint32_t num_classes, uint64_t seed,
                                           float head_init, hccr_network** out);
/* expected_variant is 'A', 'B', 'C' or HCCR_ANY_VARIANT. */
HCCR_API hccr_status hccr_network_load(const char* path, char expected_variant, hccr_network** out);
HCCR_API hccr_status hccr_network_save(const hccr_network* net, const char* path);
HCCR_API void hccr_network_free(hccr_network* net);

typedef struct hccr_network_info {
  char variant;
  const char* head; /* "gap", "gwoap" or "gwap" */
  uint32_t num_classes;
  uint32_t input_size;
  uint32_t feature_size;
  uint32_t feature_channels;
  float bn_epsilon;
  float bn_momentum;
  uint64_t trainable_params;
  uint64_t non_trainable_params;
  uint64_t total_params;
  uint32_t tensor_count;
} hccr_network_info;

HCCR_API hccr_status hccr_network_get_info(const hccr_network* net, hccr_network_info* info);

typedef struct hccr_tensor_info {
  const char* name; /* valid while the network lives */
  uint32_t rank;
  uint32_t dims[4];
  uint64_t size;
  int trainable;
} hccr_tensor_info;

HCCR_API hccr_status hccr_network_tensor(const hccr_network* net, uint32_t index, hccr_tensor_info* info);

/* Logits and probabilities (each num_classes floats, either may be NULL) of
 * one preprocessed 96x96 image in inference mode. */
HCCR_API hccr_status hccr_network_predict(const hccr_network* net, const float* image, int zero_bias,
                                          float* logits, float* probs);

/* ---- datasets ---------------------------------------------------------- */

HCCR_API hccr_status hccr_dataset_synthetic(uint32_t num_classes, uint32_t samples_per_class, uint64_t seed,
                                            hccr_dataset** out);
/* A directory of .gnt files, a single .gnt file, or a "path<TAB>class"
 * manifest of PGM images. */
HCCR_API hccr_status hccr_dataset_load(const char* path, hccr_dataset** out);
/* Per class, the last round(fraction * count) samples go to `validation`. */
HCCR_API hccr_status hccr_dataset_split(const hccr_dataset* data, double validation_fraction, hccr_dataset** train,
                                        hccr_dataset** validation);
HCCR_API size_t hccr_dataset_size(const hccr_dataset* data);
HCCR_API uint32_t hccr_dataset_num_classes(const hccr_dataset* data);
/* Copies sample `index` (HCCR_IMAGE_PIXELS floats) and its label. */
HCCR_API hccr_status hccr_dataset_sample(const hccr_dataset* data, size_t index, float* image, uint32_t* label);
HCCR_API void hccr_dataset_free(hccr_dataset* data);

/* Preprocessed image from a PGM file (ink dark on light background). */
HCCR_API hccr_status hccr_image_load_pgm(const char* path, float* image);
/* Preprocessed image of record `index` of a GNT file, with its tag code. */
HCCR_API hccr_status hccr_image_load_gnt(const char* path, uint64_t index, float* image, uint16_t* tag);

/* ---- training and evaluation ------------------------------------------- */

typedef struct hccr_train_config {
  double lr_initial;
  double momentum;
  uint32_t batch_size;
  uint32_t max_epochs;
  double l2_lambda;
  double lr_decay_factor;
  uint64_t seed;
  /* Stop after the first epoch reaching this validation top-1; < 0 disables. */
  double stop_at_val_accuracy;
  /* Early stop is not considered before this epoch. */
  uint32_t min_epochs;
  /* Training batches averaged into the BN statistics before each validation
   * pass; 0 keeps the running averages. */
  uint32_t bn_recalibration_batches;
} hccr_train_config;

HCCR_API void hccr_train_config_default(hccr_train_config* config);

typedef struct hccr_epoch_log {
  uint32_t epoch;
  double lr;
  double loss;
  double train_accuracy;
  double val_accuracy;
} hccr_epoch_log;

typedef void (*hccr_epoch_callback)(const hccr_epoch_log* entry, void* user);

/* `validation` may be NULL. */
HCCR_API hccr_status hccr_train(hccr_network* net, const hccr_dataset* train, const hccr_dataset* validation,
                                const hccr_train_config* config, hccr_epoch_callback callback, void* user,
                                uint32_t* epochs_run);

/* Writes "epoch=E lr=L loss=X train_acc=Y val_acc=Z" (NUL-terminated). */
HCCR_API hccr_status hccr_format_log_line(const hccr_epoch_log* entry, char* buffer, size_t length);

/* Top-k accuracy for each of the `count` values in `ks`. */
HCCR_API hccr_status hccr_evaluate(const hccr_network* net, const hccr_dataset* data, const uint32_t* ks,
                                   size_t count, int zero_bias, double* accuracy);

HCCR_API hccr_status hccr_bias_effect(const hccr_network* net, const hccr_dataset* data, double* with_bias,
                                      double* zero_bias, double* drop);

/* ---- class activation maps --------------------------------------------- */

typedef struct hccr_cam_info {
  uint32_t predicted_class;
  float logit; /* zero-bias logit of the predicted class */
  uint32_t map_height;
  uint32_t map_width;
} hccr_cam_info;

/* raw_map (map_height * map_width floats) and normalized_map
 * (HCCR_IMAGE_PIXELS floats) may be NULL. */
HCCR_API hccr_status hccr_cam_compute(const hccr_network* net, const float* image, hccr_cam_info* info,
                                      float* raw_map, float* normalized_map);
/* Writes <dir>/<stem>.cam.pgm and <dir>/<stem>.overlay.pgm. */
HCCR_API hccr_status hccr_cam_emit(const hccr_network* net, const float* image, const char* dir, const char* stem,
                                   hccr_cam_info* info);

/* ---- cost analysis ----------------------------------------------------- */

HCCR_API hccr_status hccr_analyze(char variant, uint32_t num_classes, hccr_cost_report** out);
HCCR_API void hccr_cost_free(hccr_cost_report* report);

typedef struct hccr_cost_totals {
  uint64_t macs;
  uint64_t trainable_params;
  uint64_t non_trainable_params;
  uint64_t total_params;
  uint32_t layer_count;
  uint32_t block_count;
} hccr_cost_totals;

typedef struct hccr_layer_cost {
  const char* name;
  uint64_t h, w, c, m;
  uint64_t macs;
  uint64_t params;
} hccr_layer_cost;

typedef struct hccr_block_cost {
  const char* name;
  uint64_t side;
  uint64_t in_channels;
  uint64_t channels;
  uint64_t bottleneck;
  uint64_t macs;
  uint64_t macs_plain;
  uint64_t ratio_num;
  uint64_t ratio_den;
} hccr_block_cost;

HCCR_API hccr_status hccr_cost_get_totals(const hccr_cost_report* report, hccr_cost_totals* totals);
HCCR_API hccr_status hccr_cost_get_layer(const hccr_cost_report* report, uint32_t index, hccr_layer_cost* layer);
HCCR_API hccr_status hccr_cost_get_block(const hccr_cost_report* report, uint32_t index, hccr_block_cost* block);

/* One three-layer block on an h x w x c input with m / m_b kernels. */
HCCR_API hccr_status hccr_block_cost_custom(uint64_t h, uint64_t w, uint64_t c, uint64_t m, uint64_t m_b,
                                            hccr_block_cost* block);

#ifdef __cplusplus
}
#endif

#endif
