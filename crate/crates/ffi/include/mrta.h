#ifndef MRTA_H
#define MRTA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MrtaStatus {
  MRTA_STATUS_OK = 0,
  MRTA_STATUS_NULL_POINTER = 1,
  MRTA_STATUS_INVALID_ARGUMENT = 2,
  MRTA_STATUS_IO = 3,
  MRTA_STATUS_PARSE = 4,
  MRTA_STATUS_CHECKPOINT = 5,
  MRTA_STATUS_BUFFER_TOO_SMALL = 6,
  MRTA_STATUS_INTERNAL = 7,
} MrtaStatus;

// A bidding policy, classic or learned.
typedef struct MrtaBidder MrtaBidder;

// The outcome of one allocation run.
typedef struct MrtaRun MrtaRun;

// A task allocation problem.
typedef struct MrtaWorld MrtaWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a
// successful call. Valid until the next call on this thread.
const char *mrta_last_error(void);

// Samples world `ordinal` of the dataset rooted at `seed` with `n_agents`
// agents, `min_tasks..=max_tasks` tasks and an unconstrained capacity.
//
// # Safety
// `out_world` must be a valid pointer.
enum MrtaStatus mrta_world_generate(uint64_t seed,
                                    uint64_t ordinal,
                                    size_t n_agents,
                                    size_t min_tasks,
                                    size_t max_tasks,
                                    struct MrtaWorld **out_world);

// Parses a world from its JSON form, one line of a dataset file.
//
// # Safety
// `json` must be a nul-terminated string and `out_world` a valid pointer.
enum MrtaStatus mrta_world_from_json(const char *json, struct MrtaWorld **out_world);

// # Safety
// `world` must be null or a handle from this library, not yet freed.
void mrta_world_free(struct MrtaWorld *world);

// # Safety
// `world` must be a live handle and `out_agents`, `out_tasks` valid pointers.
enum MrtaStatus mrta_world_size(const struct MrtaWorld *world,
                                size_t *out_agents,
                                size_t *out_tasks);

// Solves the world to optimality within the default search budget.
// `out_exact` is set to 1 when optimality was proved.
//
// # Safety
// `world` must be a live handle and the output pointers valid.
enum MrtaStatus mrta_oracle_solve(const struct MrtaWorld *world,
                                  double *out_distance,
                                  uint8_t *out_exact);

// The classic greedy marginal-gain bidder.
//
// # Safety
// `out_bidder` must be a valid pointer.
enum MrtaStatus mrta_bidder_classic(struct MrtaBidder **out_bidder);

// Loads a learned bidder (`"nam"` or `"lstm"`) from a checkpoint manifest.
//
// # Safety
// `name` and `checkpoint` must be nul-terminated strings and `out_bidder`
// a valid pointer.
enum MrtaStatus mrta_bidder_load(const char *name,
                                 const char *checkpoint,
                                 struct MrtaBidder **out_bidder);

// # Safety
// `bidder` must be null or a handle from this library, not yet freed.
void mrta_bidder_free(struct MrtaBidder *bidder);

// Runs the allocation protocol to convergence or `max_iterations` rounds
// (0 selects the default limit).
//
// # Safety
// `world` and `bidder` must be live handles and `out_run` a valid pointer.
enum MrtaStatus mrta_run(const struct MrtaWorld *world,
                         const struct MrtaBidder *bidder,
                         size_t max_iterations,
                         struct MrtaRun **out_run);

// # Safety
// `run` must be null or a handle from this library, not yet freed.
void mrta_run_free(struct MrtaRun *run);

// Team distance, rounds to convergence and timeout flag of a run.
//
// # Safety
// `run` must be a live handle and the output pointers valid.
enum MrtaStatus mrta_run_summary(const struct MrtaRun *run,
                                 double *out_distance,
                                 size_t *out_iterations,
                                 uint8_t *out_timed_out);

// Copies the execution order of `agent`'s tasks into `buf`. `out_len`
// always receives the route length; when it exceeds `capacity` nothing is
// copied and `BufferTooSmall` is returned.
//
// # Safety
// `run` must be a live handle, `buf` valid for `capacity` writes (or null
// when `capacity` is 0) and `out_len` a valid pointer.
enum MrtaStatus mrta_run_route(const struct MrtaRun *run,
                               size_t agent,
                               size_t *buf,
                               size_t capacity,
                               size_t *out_len);

// Percent optimality `100 * d_star / d_hat`.
//
// # Safety
// `out_eta` must be a valid pointer.
enum MrtaStatus mrta_percent_optimality(double d_star, double d_hat, double *out_eta);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MRTA_H */
