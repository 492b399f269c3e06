/* C interface to the sfc-nfp service-chain library. Generated by cbindgen. */

#ifndef SFC_NFP_H
#define SFC_NFP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum SfcStatus {
  SFC_STATUS_OK = 0,
  SFC_STATUS_NULL_ARGUMENT = 1,
  SFC_STATUS_INVALID_UTF8 = 2,
  SFC_STATUS_PARSE_ERROR = 3,
  SFC_STATUS_INVALID_ARGUMENT = 4,
  SFC_STATUS_UNSTABLE = 5,
  SFC_STATUS_INFEASIBLE = 6,
  SFC_STATUS_INTERNAL_ERROR = 7,
} SfcStatus;

/**
 * Opaque handle: a parsed VNF chain.
 */
typedef struct SfcChain SfcChain;

/**
 * Opaque handle: a compiled, priority-ordered flow table.
 */
typedef struct SfcFlowTable SfcFlowTable;

/**
 * Opaque handle: a parallel-stage plan for a chain.
 */
typedef struct SfcStagePlan SfcStagePlan;

/**
 * Derived M/M/c station quantities.
 */
typedef struct SfcMmcMetrics {
  /**
   * Per-server utilization, `lambda / (c * mu)`.
   */
  double rho;
  /**
   * Probability of an empty station.
   */
  double p0;
  /**
   * Probability an arrival has to queue.
   */
  double delay_probability;
  /**
   * Mean number of queued packets.
   */
  double mean_queue_length;
  /**
   * Mean queue wait, seconds.
   */
  double mean_wait;
} SfcMmcMetrics;

/**
 * Simulation settings for [`sfc_simulate_compare`].
 */
typedef struct SfcSimConfig {
  uint64_t seed;
  /**
   * Offered arrival rate, packets/sec.
   */
  double lambda;
  /**
   * Packets generated per run.
   */
  uint64_t horizon_packets;
  /**
   * Packets discarded before measuring.
   */
  uint64_t warmup;
  /**
   * Merge-barrier cost per stage, seconds.
   */
  double merge_overhead;
  /**
   * Let drop-capable stations remove packets.
   */
  bool thinning;
  /**
   * Per-station drop probability when thinning.
   */
  double drop_probability;
} SfcSimConfig;

/**
 * Aggregate results of a serial vs staged comparison.
 */
typedef struct SfcComparison {
  /**
   * Mean end-to-end latency of the serial runs, seconds.
   */
  double serial_mean;
  /**
   * Mean end-to-end latency of the staged runs, seconds.
   */
  double nfp_mean;
  /**
   * Analytic serial-chain latency, seconds.
   */
  double theoretical_total;
  double gain_serial_over_nfp;
  double gain_theoretical_over_nfp;
  /**
   * Stages in the plan the staged runs executed.
   */
  uint32_t stage_count;
} SfcComparison;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. Never null;
 * empty before the first failure. Valid until the next failing call on
 * the same thread.
 */
const char *sfc_last_error_message(void);

/**
 * Release a string returned through a `char **` out-parameter. Null is
 * ignored.
 *
 * # Safety
 * `s` must be null or a pointer previously returned by this library and
 * not yet freed.
 */
void sfc_string_free(char *s);

/**
 * Evaluate all M/M/c metrics for one station.
 *
 * # Safety
 * `out` must point to writable memory for one `SfcMmcMetrics`.
 */
enum SfcStatus sfc_mmc_metrics(double lambda,
                               double mu,
                               uint32_t servers,
                               struct SfcMmcMetrics *out);

/**
 * Parse a chain spec (`id kind mu=<float> c=<int>` per line) into a chain
 * handle.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string; `out` must be writable.
 */
enum SfcStatus sfc_chain_parse(const char *text, struct SfcChain **out);

/**
 * Number of functions in the chain. Null yields 0.
 *
 * # Safety
 * `chain` must be null or a live chain handle.
 */
uintptr_t sfc_chain_len(const struct SfcChain *chain);

/**
 * # Safety
 * `chain` must be null or a chain handle not yet freed.
 */
void sfc_chain_free(struct SfcChain *chain);

/**
 * Pack the chain into parallel stages.
 *
 * # Safety
 * `chain` must be a live chain handle; `out` must be writable.
 */
enum SfcStatus sfc_stage_plan_build(const struct SfcChain *chain, struct SfcStagePlan **out);

/**
 * Number of stages in the plan. Null yields 0.
 *
 * # Safety
 * `plan` must be null or a live plan handle.
 */
uintptr_t sfc_stage_plan_stage_count(const struct SfcStagePlan *plan);

/**
 * Render the plan as a JSON array of arrays of ids. The returned string
 * must be released with `sfc_string_free`.
 *
 * # Safety
 * `plan` must be a live plan handle; `out` must be writable.
 */
enum SfcStatus sfc_stage_plan_to_json(const struct SfcStagePlan *plan, char **out);

/**
 * # Safety
 * `plan` must be null or a plan handle not yet freed.
 */
void sfc_stage_plan_free(struct SfcStagePlan *plan);

/**
 * Parse a policy document and compile it to a flow table handle.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string; `out` must be writable.
 */
enum SfcStatus sfc_policy_compile(const char *text, struct SfcFlowTable **out);

/**
 * Number of rules in the table. Null yields 0.
 *
 * # Safety
 * `table` must be null or a live flow-table handle.
 */
uintptr_t sfc_flow_table_len(const struct SfcFlowTable *table);

/**
 * Render the table as CSV (`priority,src,sport,dst,dport,proto,actions,origin`).
 * The returned string must be released with `sfc_string_free`.
 *
 * # Safety
 * `table` must be a live flow-table handle; `out` must be writable.
 */
enum SfcStatus sfc_flow_table_to_csv(const struct SfcFlowTable *table, char **out);

/**
 * # Safety
 * `table` must be null or a flow-table handle not yet freed.
 */
void sfc_flow_table_free(struct SfcFlowTable *table);

/**
 * Analytic end-to-end latency of the chain at arrival rate `lambda`:
 * serial when `staged` is false, otherwise the staged plan with `epsilon`
 * merge overhead per stage.
 *
 * # Safety
 * `chain` must be a live chain handle; `total_out` must be writable.
 */
enum SfcStatus sfc_chain_estimate(const struct SfcChain *chain,
                                  double lambda,
                                  bool staged,
                                  double epsilon,
                                  double *total_out);

/**
 * Simulate the chain serial and staged over `replications` seeds and
 * report the averaged means, the analytic estimate, and both gains.
 *
 * # Safety
 * `chain` must be a live chain handle; `out` must be writable.
 */
enum SfcStatus sfc_simulate_compare(const struct SfcChain *chain,
                                    struct SfcSimConfig cfg,
                                    uint32_t replications,
                                    struct SfcComparison *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SFC_NFP_H */
