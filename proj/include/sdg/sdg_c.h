/* C API for the semantic diffusion guidance library.
 *
 * All functions return sdg_status; on failure sdg_last_error() holds a
 * single-line message for the calling thread. Handles are opaque and must be
 * released with the matching *_free function.
 */
#ifndef SDG_C_H
#define SDG_C_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SDG_API __declspec(dllexport)
#else
#define SDG_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sdg_status {
  SDG_OK = 0,
  SDG_ERR_INVALID_ARGUMENT = 1,
  SDG_ERR_IO = 2,
  SDG_ERR_BAD_CHECKPOINT = 3,
  SDG_ERR_BAD_CONFIG = 4,
  SDG_ERR_NUMERIC = 5,
  SDG_ERR_UNKNOWN = 6
} sdg_status;

typedef struct sdg_config sdg_config;
typedef struct sdg_corpus sdg_corpus;
typedef struct sdg_models sdg_models;
typedef struct sdg_guidance sdg_guidance;

SDG_API const char* sdg_last_error(void);

/* ---- run configuration (flat "section.key = value" schema) ---- */
SDG_API sdg_status sdg_config_create(sdg_config** out);
SDG_API sdg_status sdg_config_load(const char* path, sdg_config** out);
SDG_API sdg_status sdg_config_set(sdg_config* cfg, const char* key, const char* value);
SDG_API sdg_status sdg_config_get(const sdg_config* cfg, const char* key, char* buf,
                                  size_t buf_size);
SDG_API sdg_status sdg_config_save(const sdg_config* cfg, const char* path);
SDG_API void sdg_config_free(sdg_config* cfg);

/* ---- corpus ---- */
SDG_API sdg_status sdg_corpus_generate(const sdg_config* cfg, sdg_corpus** out);
SDG_API sdg_status sdg_corpus_save(const sdg_corpus* corpus, const char* dir);
SDG_API sdg_status sdg_corpus_load(const char* dir, sdg_corpus** out);
SDG_API size_t sdg_corpus_size(const sdg_corpus* corpus);
SDG_API sdg_status sdg_corpus_caption(const sdg_corpus* corpus, size_t index, char* buf,
                                      size_t buf_size);
SDG_API void sdg_corpus_free(sdg_corpus* corpus);

/* ---- training commands ----
 * Each writes its checkpoint, a per-step loss log, and the fully resolved
 * config into out_dir. resume_checkpoint may be NULL.
 */
SDG_API sdg_status sdg_train_denoiser(const sdg_config* cfg, const sdg_corpus* corpus,
                                      const char* out_dir, const char* resume_checkpoint);
SDG_API sdg_status sdg_pretrain_encoders(const sdg_config* cfg, const sdg_corpus* corpus,
                                         const char* out_dir);
SDG_API sdg_status sdg_finetune_encoders(const sdg_config* cfg, const sdg_corpus* corpus,
                                         const char* dual_encoder_checkpoint,
                                         const char* out_dir);

/* ---- model bundle ----
 * denoiser_checkpoint is required for sampling; encoder checkpoints may be
 * NULL when the corresponding functionality is unused.
 */
SDG_API sdg_status sdg_models_load(const sdg_config* cfg, const char* denoiser_checkpoint,
                                   const char* dual_encoder_checkpoint,
                                   const char* noised_encoder_checkpoint, sdg_models** out);
SDG_API void sdg_models_free(sdg_models* models);

/* ---- guidance specs ----
 * mode is one of "content", "structure", "style". layers may be NULL to use
 * all exposed encoder layers. Composite children are copied; the caller keeps
 * ownership of the child handles.
 */
SDG_API sdg_status sdg_guidance_text(const char* text, double scale, sdg_guidance** out);
SDG_API sdg_status sdg_guidance_image(const char* ppm_path, const char* mode, double scale,
                                      const int* layers, size_t layer_count,
                                      sdg_guidance** out);
SDG_API sdg_status sdg_guidance_composite(sdg_guidance* const* children,
                                          const double* weights, size_t count,
                                          sdg_guidance** out);
SDG_API void sdg_guidance_free(sdg_guidance* guidance);

/* ---- sampling ----
 * Writes n PPM images (sample_%03d.ppm), a guidance manifest, optional trace
 * files, and the resolved config into out_dir. guidance may be NULL for
 * unconditional sampling. Per-sample seeds are seed + i.
 */
SDG_API sdg_status sdg_sample_images(const sdg_config* cfg, const sdg_models* models,
                                     const sdg_guidance* guidance, uint64_t seed, int n,
                                     const char* out_dir);

/* ---- evaluation ----
 * Evaluates a generated directory against its manifest with 99 negatives
 * drawn from the corpus (disjoint from guidance references); writes
 * report.txt and report.kv into out_dir.
 */
SDG_API sdg_status sdg_evaluate(const sdg_config* cfg, const sdg_models* models,
                                const char* generated_dir, const char* manifest_path,
                                const char* corpus_dir, const char* out_dir);

/* Scaling-factor sweep over ablate.scales; writes report.txt and report.kv. */
SDG_API sdg_status sdg_ablate(const sdg_config* cfg, const sdg_models* models,
                              const char* corpus_dir, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* SDG_C_H */
