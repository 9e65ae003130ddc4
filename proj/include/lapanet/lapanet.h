#ifndef LAPANET_LAPANET_H
#define LAPANET_LAPANET_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define LAPANET_API __declspec(dllexport)
#else
#define LAPANET_API __attribute__((visibility("default")))
#endif

/* Status codes double as process exit codes in the command-line tool. */
typedef enum {
    LAPANET_OK = 0,
    LAPANET_VALIDATION_ERROR = 2,
    LAPANET_RUNTIME_FAILURE = 3
} lapanet_status;

typedef struct lapanet_config lapanet_config;
typedef struct lapanet_model lapanet_model;

/* One line of text, without the trailing newline. */
typedef void (*lapanet_line_fn)(const char* line, void* user);
/* Called after every training step. */
typedef void (*lapanet_progress_fn)(int step, int total_steps, double loss, void* user);

typedef struct {
    int ok; /* 0 when LAP reported insufficient signal; metrics are then NaN */
    double nrmse_before;
    double nrmse;
    double dsc[3];    /* myocardium, cavity, right-ventricle pool */
    double hdd_mm[3];
    double dsc_mean;
    double hdd_mean_mm;
    double epe_px;
    double seconds;
} lapanet_register_result;

typedef struct {
    int steps;
    double final_loss;
    double validation_before;
    double validation_after;
    double seconds;
} lapanet_train_result;

typedef struct {
    double f_input;
    double f_baseline;
    double attribution_sum;
    double completeness_gap;
    double low_frequency_fraction_fix;
    double low_frequency_fraction_mov;
} lapanet_interpret_result;

/* Message of the last failed call on this thread; empty after a success. */
LAPANET_API const char* lapanet_last_error(void);
LAPANET_API const char* lapanet_version(void);

LAPANET_API lapanet_status lapanet_config_default(lapanet_config** out);
LAPANET_API lapanet_status lapanet_config_from_json(const char* text, lapanet_config** out);
LAPANET_API lapanet_status lapanet_config_from_file(const char* path, lapanet_config** out);
LAPANET_API void lapanet_config_free(lapanet_config* cfg);
LAPANET_API lapanet_status lapanet_config_set_seed(lapanet_config* cfg, uint64_t seed);
LAPANET_API lapanet_status lapanet_config_set_method(lapanet_config* cfg, const char* method);
LAPANET_API lapanet_status lapanet_config_set_checkpoint(lapanet_config* cfg, const char* path);
/* Writes the JSON form into buf when it fits; *needed receives the size including the terminator. */
LAPANET_API lapanet_status lapanet_config_to_json(const lapanet_config* cfg, char* buf, size_t capacity, size_t* needed);

LAPANET_API lapanet_status lapanet_phantom(const lapanet_config* cfg, const char* out_dir);
LAPANET_API lapanet_status lapanet_undersample(const lapanet_config* cfg, const char* trajectory, double R,
                                               const char* out_dir);
/* method NULL uses the configured one; out_dir NULL or empty writes nothing. */
LAPANET_API lapanet_status lapanet_register(const lapanet_config* cfg, const char* method, int fix, int mov,
                                            const char* trajectory, double R, const char* out_dir,
                                            lapanet_register_result* result);
LAPANET_API lapanet_status lapanet_sweep(const lapanet_config* cfg, const char* out_dir, size_t* rows);
LAPANET_API lapanet_status lapanet_train(const lapanet_config* cfg, const char* out_dir, lapanet_progress_fn progress,
                                         void* user, lapanet_train_result* result);
/* checkpoint NULL uses the configured one; steps <= 0 uses the configured ig_steps. */
LAPANET_API lapanet_status lapanet_interpret(const lapanet_config* cfg, const char* checkpoint, int fix, int mov,
                                             const char* trajectory, double R, int steps, const char* out_dir,
                                             lapanet_interpret_result* result);
/* Emits one PASS/FAIL line per oracle; *failures counts the FAIL lines. */
LAPANET_API lapanet_status lapanet_selftest(uint64_t seed, lapanet_line_fn sink, void* user, int* failures);

LAPANET_API lapanet_status lapanet_model_load(const char* checkpoint, lapanet_model** out);
LAPANET_API void lapanet_model_free(lapanet_model* model);
LAPANET_API lapanet_status lapanet_model_shape(const lapanet_model* model, int* rows, int* cols, int* n_coils);
LAPANET_API lapanet_status lapanet_model_parameter_count(const lapanet_model* model, int64_t* count);
/* k_fix and k_mov hold n_coils * rows * cols interleaved (re, im) pairs, coil-major, rows row-major.
 * ux and uy receive rows * cols displacements in pixels. */
LAPANET_API lapanet_status lapanet_model_register(lapanet_model* model, const double* k_fix, const double* k_mov,
                                                  double* ux, double* uy);

#ifdef __cplusplus
}
#endif

#endif
