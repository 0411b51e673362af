/* vact — vision-action instruction toolkit, C API.
 *
 * Structured payloads cross this boundary as JSON documents (the toolkit's
 * native formats are JSON/JSONL already). Every function returns a
 * vact_status; on failure vact_last_error() holds a thread-local message.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with vact_string_free().
 */
#ifndef VACT_H
#define VACT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vact_status {
  VACT_OK = 0,
  VACT_ERROR_INVALID_ARGUMENT = 1,
  VACT_ERROR_PARSE = 2,
  VACT_ERROR_IO = 3,
  VACT_ERROR_RUNTIME = 4
} vact_status;

const char* vact_version(void);
const char* vact_last_error(void);
void vact_string_free(char* s);

/* ---- codec: prompt and response text <-> structured JSON ---------------- */

typedef struct vact_codec vact_codec;

/* config_json keys (all optional): decimals, gripper_threshold,
 * include_trace, trace_coord_format ("pixel_int"|"normalized_3dp"),
 * history_includes_gripper, image_width, image_height. NULL on error. */
vact_codec* vact_codec_create(const char* config_json);
void vact_codec_destroy(vact_codec* codec);

/* prompt_json: {robot:{name}, mode:{actuation,frame}, instruction,
 * history:[{joints:[...],gripper}...], h, n} */
vact_status vact_render_prompt(const vact_codec* codec, const char* prompt_json,
                               char** text_out);

/* response_json: {actions:[{values:[...]}...], include_trace,
 * trace:{points:[[x,y]...], start_t}} */
vact_status vact_encode_response(const vact_codec* codec, const char* response_json,
                                 char** text_out);

/* expected_arity 0 accepts any consistent arity. Grammar violations return
 * VACT_ERROR_PARSE with the byte position in vact_last_error(). */
vact_status vact_parse_response(const vact_codec* codec, const char* text,
                                int32_t expected_n, int32_t expected_arity,
                                char** response_json_out);

/* ---- simulator handle ---------------------------------------------------- */

typedef struct vact_env vact_env;

/* config_json: {task:"reach"|"pick"|"stack"|"destack", seed,
 * mode:{actuation,frame}} */
vact_env* vact_env_create(const char* config_json);
void vact_env_destroy(vact_env* env);

vact_status vact_env_step(vact_env* env, const double* action, size_t arity);
vact_status vact_env_scene_json(const vact_env* env, char** json_out);
/* 1 success, 0 not yet, -1 invalid handle. */
int vact_env_succeeded(const vact_env* env);

/* ---- batch workflows ------------------------------------------------------ */

/* {task, episodes, seed, out, mode?, jobs?} -> {episodes, corpus} */
vact_status vact_gen(const char* config_json, char** summary_json_out);

/* {corpus, out, h?, n?, shard_size?, seed?, jobs?, codec?{...},
 *  trace_source?{kind,oob_policy}, filters?{min_image_width,
 *  min_image_height, allowed_modes, excluded_subsets}} -> stats JSON */
vact_status vact_compile(const char* config_json, char** stats_json_out);

/* Per-episode invariant violations for a corpus directory. */
vact_status vact_validate_corpus(const char* corpus_dir, char** report_json_out);

/* {task, policy, episodes?, seeds?|num_seeds?, h?, n?, mode?, max_steps?,
 *  jobs?, codec?, timeout_s?} -> report JSON. policy: "replay", "zero", or
 *  "subprocess:CMD". */
vact_status vact_eval(const char* config_json, char** report_json_out);

/* Token ids and per-position categorical distributions from JSON files
 * (arrays); result: {nll, zero_index|null}. */
vact_status vact_score(const char* targets_path, const char* dists_path,
                       char** result_json_out);

/* Flat variant: dists is row-major count x vocab. +inf on a zero-probability
 * target. */
vact_status vact_sequence_nll(const int32_t* target_ids, size_t count,
                              const double* dists, size_t vocab, double* nll_out);

/* Serve a built-in policy ("replay" or "zero") over the stdin/stdout line
 * protocol until EOF. The harness sends "#EPISODE {json}" at boundaries and
 * one prompt line per query; the server answers one response line each. */
vact_status vact_policy_serve(const char* policy_spec);

/* ---- in-process policy plug-in -------------------------------------------- */

typedef void (*vact_policy_begin_fn)(void* user, const char* episode_json);
/* Respond with a malloc'd string through response_out (freed by the library);
 * return nonzero to signal failure (the rollout scores 0). */
typedef int (*vact_policy_respond_fn)(void* user, const char* prompt,
                                      char** response_out);

vact_status vact_eval_with_policy(const char* config_json, vact_policy_begin_fn begin_fn,
                                  vact_policy_respond_fn respond_fn, void* user,
                                  char** report_json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* VACT_H */
