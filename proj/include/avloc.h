/* avloc — audio-visual sound source localization toolkit, C API.
 *
 * The core is a C++ library; this header is the stable boundary exposed by
 * the shared library. All functions are thread-compatible: distinct contexts
 * may be used concurrently, a single context must not be shared without
 * external synchronization.
 *
 * Every command takes a JSON configuration string and, on success, stores a
 * heap-allocated JSON report in *report_json (free it with
 * avloc_string_free). On failure the return code is non-zero and
 * avloc_last_error(ctx) describes the problem.
 */
#ifndef AVLOC_H
#define AVLOC_H

#ifdef __cplusplus
extern "C" {
#endif

typedef enum avloc_status {
  AVLOC_OK = 0,
  AVLOC_E_VALIDATION = 2, /* bad configuration or input contract violation */
  AVLOC_E_RUNTIME = 3,    /* numeric/runtime failure */
  AVLOC_E_IO = 4          /* filesystem or parsing failure */
} avloc_status;

typedef struct avloc_context avloc_context;

const char* avloc_version(void);

avloc_status avloc_context_create(avloc_context** out_ctx);
void avloc_context_destroy(avloc_context* ctx);

/* Message for the most recent failure on this context (empty if none).
 * The pointer stays valid until the next call on the same context. */
const char* avloc_last_error(const avloc_context* ctx);

/* Generate a synthetic shapes-and-tones corpus with ground-truth boxes. */
avloc_status avloc_run_synth(avloc_context* ctx, const char* config_json, char** report_json);

/* Populate the caption cache for a dataset (fixture or HTTP client). */
avloc_status avloc_run_caption(avloc_context* ctx, const char* config_json, char** report_json);

/* Train the two-stream model; writes checkpoints and a JSONL loss log. */
avloc_status avloc_run_train(avloc_context* ctx, const char* config_json, char** report_json);

/* Evaluate a checkpoint (single- or multi-source localization metrics). */
avloc_status avloc_run_eval(avloc_context* ctx, const char* config_json, char** report_json);

/* Export per-source heatmaps, overlays and box sidecars for chosen clips. */
avloc_status avloc_run_visualize(avloc_context* ctx, const char* config_json,
                                 char** report_json);

/* Run the built-in oracle suites (transport, losses, metrics, gradients). */
avloc_status avloc_run_selftest(avloc_context* ctx, const char* config_json,
                                char** report_json);

void avloc_string_free(char* s);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* AVLOC_H */
