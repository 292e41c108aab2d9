/* covobf: covariant-obfuscation toolkit for toy transformer inference.
 *
 * C API over the C++ core. All handles are opaque; functions return a
 * covobf_status and report details through covobf_last_error(). Strings
 * returned through out-parameters are heap-allocated; release them with
 * covobf_string_free().
 */
#ifndef COVOBF_H
#define COVOBF_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define COVOBF_API __declspec(dllexport)
#else
#define COVOBF_API __attribute__((visibility("default")))
#endif

typedef enum covobf_status {
  COVOBF_OK = 0,
  COVOBF_ERR_USAGE = 2,     /* bad arguments */
  COVOBF_ERR_DATA = 3,      /* malformed or inconsistent inputs */
  COVOBF_ERR_INVARIANT = 4, /* violated internal contract */
} covobf_status;

typedef struct covobf_model covobf_model;
typedef struct covobf_server covobf_server;

COVOBF_API const char* covobf_version(void);

/* Message for the most recent failure on this thread; never NULL. */
COVOBF_API const char* covobf_last_error(void);

COVOBF_API void covobf_string_free(char* s);

/* -- models ---------------------------------------------------------- */

/* config_json uses the model directory's config.json field names. */
COVOBF_API covobf_status covobf_model_random(const char* config_json, uint64_t seed,
                                             covobf_model** out);
COVOBF_API covobf_status covobf_model_load(const char* dir, covobf_model** out);
/* vocab_dir may be NULL when the model carries a default vocabulary. */
COVOBF_API covobf_status covobf_model_save(const covobf_model* model, const char* dir);
COVOBF_API covobf_status covobf_model_config(const covobf_model* model,
                                             char** out_json);
COVOBF_API void covobf_model_free(covobf_model* model);

/* Greedy generation; temperature > 0 switches to the seeded demo sampler.
 * Result JSON: {"text": "...", "token_ids": [...]} (continuation only). */
COVOBF_API covobf_status covobf_generate(const covobf_model* model,
                                         const char* prompt, int max_new_tokens,
                                         double temperature, uint64_t sample_seed,
                                         char** out_json);

/* -- obfuscation ------------------------------------------------------ */

/* params_json fields: lambda, expand, alpha_embed, alpha_head, beta, gamma,
 * seed (all optional; defaults are the recommended settings). Writes the
 * obfuscated model to out_dir, the client secret to secret_path, and, when
 * debug_keys_dir is non-NULL, the key material needed for verification. */
COVOBF_API covobf_status covobf_obfuscate(const covobf_model* model,
                                          const char* params_json,
                                          const char* out_dir,
                                          const char* secret_path,
                                          const char* debug_keys_dir);

/* -- analysis --------------------------------------------------------- */

COVOBF_API covobf_status covobf_verify(const char* plain_dir, const char* obf_dir,
                                       const char* debug_keys_dir,
                                       const char* secret_path, uint64_t seed,
                                       int oracle_norm, char** out_report_json);

/* attack: "vma" | "gate-ia" | "attn-ia" | "gram-nn" | "tfma".
 * For tfma, plain_dir/obf_dir are corpus text files and truth_secret_path
 * must name the secret used to build the cipher corpus. */
COVOBF_API covobf_status covobf_attack(const char* attack, const char* plain_dir,
                                       const char* obf_dir,
                                       const char* truth_secret_path,
                                       const char* vocab_dir,
                                       char** out_report_json);

COVOBF_API covobf_status covobf_budget(const char* model_dir, double alpha_embed,
                                       double alpha_head, const double* eps1_opt,
                                       char** out_report_json);

/* -- online protocol --------------------------------------------------- */

COVOBF_API covobf_status covobf_server_start(const char* model_dir, const char* host,
                                             int port, covobf_server** out);
COVOBF_API int covobf_server_port(const covobf_server* server);
/* Blocks until covobf_server_stop() is called from another thread. */
COVOBF_API covobf_status covobf_server_wait(covobf_server* server);
COVOBF_API void covobf_server_stop(covobf_server* server);
COVOBF_API void covobf_server_free(covobf_server* server);

/* Client-side round trip. secret_path may be NULL for plaintext requests;
 * with a secret the prompt is token-obfuscated before sending and the
 * response decoded (and truncated at the first decoded eos). */
COVOBF_API covobf_status covobf_client_generate(const char* host, int port,
                                                const char* vocab_dir,
                                                const char* secret_path,
                                                const char* prompt,
                                                int max_new_tokens,
                                                char** out_json);

/* Same round trip against a locally loaded (obfuscated) model directory. */
COVOBF_API covobf_status covobf_client_generate_local(const char* model_dir,
                                                      const char* secret_path,
                                                      const char* prompt,
                                                      int max_new_tokens,
                                                      char** out_json);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* COVOBF_H */
