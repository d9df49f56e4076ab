#ifndef BOXPROMPT_BOXPROMPT_H
#define BOXPROMPT_BOXPROMPT_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define BP_API __declspec(dllexport)
#else
#define BP_API __attribute__((visibility("default")))
#endif

typedef enum bp_status {
  BP_OK = 0,
  BP_ERR_INVALID_ARGUMENT = 1,
  BP_ERR_CONFIG = 2,
  BP_ERR_IO = 3,
  BP_ERR_FORMAT = 4,
  BP_ERR_NUMERIC = 5,
  BP_ERR_SHAPE = 6,
  BP_ERR_STATE = 7,
  BP_ERR_INTERNAL = 8
} bp_status;

/* Run configuration plus overrides. Not thread-safe; use one per thread. */
typedef struct bp_context bp_context;
/* Loaded student checkpoint with a frozen memory bank. Read-only after load;
   predictions may run concurrently. */
typedef struct bp_model bp_model;

BP_API const char* bp_version(void);
/* Message of the last failure on the calling thread ("" if none). */
BP_API const char* bp_last_error(void);
/* Frees strings returned through char** out-parameters. */
BP_API void bp_string_free(char* s);

/* config_json may be NULL for all defaults. */
BP_API bp_status bp_context_create(const char* config_json, bp_context** out);
BP_API bp_status bp_context_load(const char* path, bp_context** out);
BP_API void bp_context_free(bp_context* ctx);
/* Replaces the seed list with a single seed. */
BP_API bp_status bp_context_set_seed(bp_context* ctx, uint64_t seed);
BP_API bp_status bp_context_set_epochs(bp_context* ctx, int epochs);
BP_API bp_status bp_context_set_out_dir(bp_context* ctx, const char* dir);
/* Directory holding (or receiving) the synthetic dataset. */
BP_API bp_status bp_context_set_data_dir(bp_context* ctx, const char* dir);
/* Overrides the student input size (square); the dataset size follows. */
BP_API bp_status bp_context_set_input_size(bp_context* ctx, int size);
BP_API bp_status bp_context_config_json(const bp_context* ctx, char** out_json);

/* Pipeline stages. Each returns a JSON summary through out_json when it is
   not NULL; files are written under the configured output directory. */
BP_API bp_status bp_gen_data(bp_context* ctx, char** out_json);
BP_API bp_status bp_teach(bp_context* ctx, char** out_json);
/* resume_checkpoint may be NULL. */
BP_API bp_status bp_train(bp_context* ctx, const char* resume_checkpoint, char** out_json);
BP_API bp_status bp_eval(bp_context* ctx, const char* checkpoint, const char* split, char** out_json);
/* *pass is set to 1 when every parameter is within tolerance. */
BP_API bp_status bp_gradcheck(bp_context* ctx, int* pass, char** out_json);
BP_API bp_status bp_flops(const bp_context* ctx, uint64_t* flops, uint64_t* params, char** out_json);
/* threads <= 0 reads BOXPROMPT_THREADS (default 1). */
BP_API bp_status bp_ablate(bp_context* ctx, int threads, char** out_json);

BP_API bp_status bp_model_load(const char* checkpoint, bp_model** out);
BP_API void bp_model_free(bp_model* model);
BP_API bp_status bp_model_input_size(const bp_model* model, int* height, int* width);
BP_API bp_status bp_model_param_count(const bp_model* model, uint64_t* count);
/* image: planar RGB, 3 x height x width, values in [0,1].
   out: height x width probabilities. */
BP_API bp_status bp_model_predict(const bp_model* model, const float* image, int height, int width, float* out);
/* Reads a binary PPM and writes the probability map as an 8-bit PGM. */
BP_API bp_status bp_model_predict_file(const bp_model* model, const char* ppm_path, const char* pgm_path);

#ifdef __cplusplus
}
#endif

#endif
