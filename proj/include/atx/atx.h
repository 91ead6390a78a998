/* C interface to the attention-masked unpaired image translation library.
 *
 * All functions return 0 on success or a nonzero error code; the message for
 * the most recent failure on the calling thread is available via
 * atx_last_error(). Handles are opaque and must be released with the matching
 * _free function.
 */
#ifndef ATX_H
#define ATX_H

#ifdef __cplusplus
extern "C" {
#endif

#define ATX_OK 0
#define ATX_ERR_CONFIG 2
#define ATX_ERR_DATA 3
#define ATX_ERR_NUMERIC 4

typedef struct atx_config atx_config;
typedef struct atx_model atx_model;

/* Message for the last error on this thread; valid until the next call. */
const char* atx_last_error(void);

/* Loads and validates a JSON run config. overrides are "key.path=value"
 * strings applied before validation; seed_override >= 0 replaces the seed. */
int atx_config_load(const char* path, const char* const* overrides, int n_overrides,
                    long long seed_override, atx_config** out);
void atx_config_free(atx_config* cfg);
const char* atx_config_hash(const atx_config* cfg);

/* Runs the full three-stage schedule. resume_checkpoint may be NULL. */
int atx_train(const atx_config* cfg, const char* resume_checkpoint);

int atx_model_load(const char* checkpoint_path, atx_model** out);
void atx_model_free(atx_model* model);
int atx_model_has_attention(const atx_model* model);

/* Translates every image in input_dir, preserving file names. Optional
 * attention / initial-translation exports go to subdirectories "attention"
 * and "initial". Requesting attention from a G0-only checkpoint fails. */
int atx_translate_dir(const atx_model* model, const char* input_dir, const char* out_dir,
                      int export_attention, int export_initial);

/* Procedural two-domain benchmark with ground-truth foreground masks. */
int atx_make_toy_data(const char* out_dir, int canvas, int count, unsigned long long seed,
                      int overwrite, int stripes_in_y);

/* kind: "map" | "fid" | "adapt" | "attn-iou"; args_json is kind-specific.
 * On success *report_json_out holds a MetricReport JSON object; free it with
 * atx_string_free. */
int atx_evaluate(const char* kind, const char* args_json, char** report_json_out);
void atx_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* ATX_H */
