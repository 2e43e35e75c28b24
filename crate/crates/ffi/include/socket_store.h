#ifndef SOCKET_STORE_H
#define SOCKET_STORE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_ARGUMENT = 1,
  SS_STATUS_INVALID_UTF8 = 2,
  SS_STATUS_INVALID_ARGUMENT = 3,
  SS_STATUS_NOT_FOUND = 4,
  SS_STATUS_DENIED = 5,
  SS_STATUS_REJECTED = 6,
  SS_STATUS_IO = 7,
  SS_STATUS_PANIC = 8,
} SsStatus;

typedef enum SsMode {
  SS_MODE_MODULE = 0,
  SS_MODE_FALLBACK = 1,
} SsMode;

typedef struct SsConnection SsConnection;

typedef struct SsDsa SsDsa;

/**
 * A store instance shared by the device agents created from it.
 */
typedef struct SsStore SsStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library on this thread.
 */
const char *ss_last_error(void);

/**
 * Library version as a static string.
 */
const char *ss_version(void);

/**
 * # Safety
 * `s` is null or a string returned by this library, not yet freed.
 */
void ss_string_free(char *s);

/**
 * Opens a store. A null `data_dir` keeps state in memory. `seed` fixes
 * token generation when `has_seed` is true.
 *
 * # Safety
 * `data_dir` is null or a valid string; `out` is writable.
 */
enum SsStatus ss_store_open(const char *data_dir,
                            bool has_seed,
                            uint64_t seed,
                            struct SsStore **out);

/**
 * # Safety
 * `store` is null or a handle from `ss_store_open`, not yet freed. Device
 * agents created from it stay valid.
 */
void ss_store_free(struct SsStore *store);

/**
 * # Safety
 * Arguments are valid handles and strings.
 */
enum SsStatus ss_store_register_specialist(struct SsStore *store, const char *name);

/**
 * Submits the bundle in `dir` and writes the module id to `out_id`.
 *
 * # Safety
 * Arguments are valid handles and strings; `out_id` is writable.
 */
enum SsStatus ss_store_submit(struct SsStore *store, const char *dir, char **out_id);

/**
 * # Safety
 * Arguments are valid handles and strings.
 */
enum SsStatus ss_store_start_review(struct SsStore *store, const char *module_id);

/**
 * Accepts (`accept` true) or sends back for revision.
 *
 * # Safety
 * Arguments are valid handles and strings.
 */
enum SsStatus ss_store_review(struct SsStore *store,
                              const char *module_id,
                              bool accept,
                              const char *reviewer);

/**
 * Buys a license and writes its token to `out_token`.
 *
 * # Safety
 * Arguments are valid handles and strings; `out_token` is writable.
 */
enum SsStatus ss_store_purchase(struct SsStore *store,
                                const char *app_id,
                                const char *module_id,
                                char **out_token);

/**
 * Writes search hits as a JSON array to `out_json`.
 *
 * # Safety
 * Arguments are valid handles and strings; `out_json` is writable.
 */
enum SsStatus ss_store_search_json(struct SsStore *store, const char *query, char **out_json);

/**
 * Writes the cost report of an instance as JSON to `out_json`.
 *
 * # Safety
 * Arguments are valid handles and strings; `out_json` is writable.
 */
enum SsStatus ss_store_cost_json(struct SsStore *store, const char *instance_id, char **out_json);

/**
 * Advances simulated time by `ms` milliseconds.
 *
 * # Safety
 * `store` is a valid handle.
 */
enum SsStatus ss_store_advance_ms(struct SsStore *store, double ms);

/**
 * Creates a device agent on `host` with `nics` endpoints at port 5000.
 *
 * # Safety
 * Arguments are valid handles and strings; `out` is writable.
 */
enum SsStatus ss_dsa_new(struct SsStore *store,
                         const char *app_id,
                         const char *device,
                         const char *host,
                         uint8_t nics,
                         struct SsDsa **out);

/**
 * # Safety
 * `dsa` is null or a handle from `ss_dsa_new`, not yet freed.
 */
void ss_dsa_free(struct SsDsa *dsa);

/**
 * Adds a host to dial for `alias` when the store cannot resolve it.
 *
 * # Safety
 * Arguments are valid handles and strings.
 */
enum SsStatus ss_dsa_set_fallback_host(struct SsDsa *dsa, const char *alias, const char *host);

/**
 * # Safety
 * Arguments are valid handles and strings.
 */
enum SsStatus ss_dsa_bind(struct SsDsa *dsa, const char *alias);

/**
 * Connects to `alias` through `module_id`, falling back to a plain
 * connection on store or allocation failure.
 *
 * # Safety
 * Arguments are valid handles and strings; `out` is writable.
 */
enum SsStatus ss_dsa_connect(struct SsDsa *dsa,
                             const char *alias,
                             const char *module_id,
                             const char *token,
                             uint32_t k,
                             double rate_mbps,
                             double max_latency_ms,
                             struct SsConnection **out);

/**
 * # Safety
 * `conn` is a valid handle.
 */
enum SsMode ss_conn_mode(const struct SsConnection *conn);

/**
 * Number of paths; 0 for a null handle.
 *
 * # Safety
 * `conn` is null or a valid handle.
 */
uint32_t ss_conn_paths(const struct SsConnection *conn);

/**
 * Fallback reason as a new string, or null in module mode.
 *
 * # Safety
 * `conn` is null or a valid handle.
 */
char *ss_conn_failure_reason(const struct SsConnection *conn);

/**
 * Instance id as a new string, or null in fallback mode.
 *
 * # Safety
 * `conn` is null or a valid handle.
 */
char *ss_conn_instance_id(const struct SsConnection *conn);

/**
 * Sends `len` bytes; writes the number of copies that will arrive.
 *
 * # Safety
 * Handles are valid; `data` points to `len` readable bytes (or `len` is 0).
 */
enum SsStatus ss_dsa_send(struct SsDsa *dsa,
                          struct SsConnection *conn,
                          const uint8_t *data,
                          size_t len,
                          uint32_t *out_delivered);

/**
 * Drains arrived payloads; writes how many distinct sequences arrived.
 *
 * # Safety
 * Handles are valid; `out_count` is writable.
 */
enum SsStatus ss_dsa_recv(struct SsDsa *dsa, struct SsConnection *conn, uint32_t *out_count);

/**
 * Closes the connection; safe to call twice.
 *
 * # Safety
 * Handles are valid.
 */
enum SsStatus ss_dsa_close(struct SsDsa *dsa, struct SsConnection *conn);

/**
 * Frees a connection handle without closing it at the store.
 *
 * # Safety
 * `conn` is null or a handle from `ss_dsa_connect`, not yet freed.
 */
void ss_conn_free(struct SsConnection *conn);

/**
 * Runs the deadline experiment. `config_toml` null means defaults. Writes
 * the CSV and the summary block as new strings.
 *
 * # Safety
 * `config_toml` is null or a valid string; outputs are writable.
 */
enum SsStatus ss_run_experiment(const char *config_toml, char **out_csv, char **out_summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOCKET_STORE_H */
