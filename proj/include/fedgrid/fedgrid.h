/* C interface to the fedgrid library. All objects are opaque handles; every
 * call returns a status, and fedgrid_last_error() describes the most recent
 * failure on the calling thread. */
#ifndef FEDGRID_H
#define FEDGRID_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define FEDGRID_API __attribute__((visibility("default")))
#else
#define FEDGRID_API
#endif

/* Values double as CLI exit codes. */
typedef enum fedgrid_status {
  FEDGRID_OK = 0,
  FEDGRID_ERR_INTERNAL = 1,
  FEDGRID_ERR_CONFIG = 2,
  FEDGRID_ERR_DATA = 3,
  FEDGRID_ERR_NUMERIC = 4
} fedgrid_status;

typedef struct fedgrid_experiment fedgrid_experiment;
typedef struct fedgrid_keypair fedgrid_keypair;

typedef void (*fedgrid_log_fn)(const char* message, void* user);

FEDGRID_API const char* fedgrid_version(void);
FEDGRID_API const char* fedgrid_status_name(fedgrid_status status);
/* Empty string when the last call on this thread succeeded. */
FEDGRID_API const char* fedgrid_last_error(void);

/* ---- experiments ---- */

/* workspace may be NULL: then $FEDGRID_WORKSPACE, else the current directory.
 * full_scale != 0 selects the full dataset sizes. */
FEDGRID_API fedgrid_status fedgrid_experiment_open(const char* config_path, const char* workspace, int full_scale,
                                                   fedgrid_experiment** out);
FEDGRID_API void fedgrid_experiment_close(fedgrid_experiment* exp);
FEDGRID_API fedgrid_status fedgrid_experiment_set_logger(fedgrid_experiment* exp, fedgrid_log_fn fn, void* user);

/* String getters copy into buf (NUL terminated). When len is too small they
 * fail with FEDGRID_ERR_CONFIG and store the required size in *needed. */
FEDGRID_API fedgrid_status fedgrid_experiment_config_hash(const fedgrid_experiment* exp, char* buf, size_t len,
                                                          size_t* needed);
FEDGRID_API fedgrid_status fedgrid_experiment_output_dir(const fedgrid_experiment* exp, char* buf, size_t len,
                                                         size_t* needed);

/* prime_bits = 0 uses the configured size. */
FEDGRID_API fedgrid_status fedgrid_keygen(fedgrid_experiment* exp, unsigned prime_bits);
FEDGRID_API fedgrid_status fedgrid_generate_data(fedgrid_experiment* exp);
FEDGRID_API fedgrid_status fedgrid_train_local(fedgrid_experiment* exp, int with_ideal);
FEDGRID_API fedgrid_status fedgrid_train_federated(fedgrid_experiment* exp);
FEDGRID_API fedgrid_status fedgrid_evaluate(fedgrid_experiment* exp);
/* model_kind: "federated", "local" or "ideal"; NULL means "federated". */
FEDGRID_API fedgrid_status fedgrid_noise_sweep(fedgrid_experiment* exp, const char* model_kind);
FEDGRID_API fedgrid_status fedgrid_report(fedgrid_experiment* exp);

/* ---- metrics ---- */

typedef struct fedgrid_metrics {
  uint64_t tp, fp, tn, fn;
  double accuracy, precision, recall, f1;
  /* 0 when the ratio's denominator is zero; the value is then NaN. */
  int has_accuracy, has_precision, has_recall, has_f1;
} fedgrid_metrics;

FEDGRID_API fedgrid_status fedgrid_compute_metrics(const int* predictions, const int* labels, size_t n,
                                                   fedgrid_metrics* out);

/* ---- Paillier aggregation ---- */

/* seed = 0 draws from the system entropy source. */
FEDGRID_API fedgrid_status fedgrid_keypair_generate(unsigned prime_bits, uint64_t seed, fedgrid_keypair** out);
FEDGRID_API void fedgrid_keypair_free(fedgrid_keypair* keys);
FEDGRID_API fedgrid_status fedgrid_keypair_id(const fedgrid_keypair* keys, char* buf, size_t len, size_t* needed);

/* One encrypted averaging step over `clients` row-major weight vectors of
 * length dims: encode, encrypt, multiply ciphertexts, decrypt, decode. */
FEDGRID_API fedgrid_status fedgrid_secure_average(const fedgrid_keypair* keys, const double* weights, size_t clients,
                                                  size_t dims, double* out);

#ifdef __cplusplus
}
#endif

#endif /* FEDGRID_H */
