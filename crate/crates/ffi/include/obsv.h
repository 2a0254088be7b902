/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef OBSV_H
#define OBSV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. The numeric values of the first six match the exit codes
 of the command-line tool where they overlap.
 */
typedef enum ObsvStatus {
  OBSV_STATUS_OK = 0,
  OBSV_STATUS_NULL_ARGUMENT = 1,
  OBSV_STATUS_INVALID_ARGUMENT = 2,
  OBSV_STATUS_INFEASIBLE = 3,
  OBSV_STATUS_SIMULATION_BLOWUP = 4,
  OBSV_STATUS_VERIFICATION_FAILED = 5,
  OBSV_STATUS_PANIC = 6,
  OBSV_STATUS_BUFFER_TOO_SMALL = 7,
} ObsvStatus;

/*
 Region shapes accepted by the synthesis calls.
 */
typedef enum ObsvRegionKind {
  /*
   Euclidean ball.
   */
  OBSV_REGION_KIND_BALL2 = 0,
  /*
   1-norm ball.
   */
  OBSV_REGION_KIND_BALL1 = 1,
} ObsvRegionKind;

/*
 Opaque observer design handle.
 */
typedef struct ObsvDesign ObsvDesign;

/*
 Opaque plant handle.
 */
typedef struct ObsvSystem ObsvSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or an empty string.
 The pointer stays valid until the next `obsv_*` call on the same thread.
 */
const char *obsv_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *obsv_version(void);

/*
 Sets the solver feasibility tolerance used for verification; a
 non-positive value restores the default.
 */
void obsv_set_feas_tol(double tol);

/*
 Loads a shipped fixture (`"lorenz"` or `"mfe9"`).
 */
enum ObsvStatus obsv_system_from_fixture(const char *name, struct ObsvSystem **out);

/*
 Parses a model from JSON text (either the plain or the fluid form).
 */
enum ObsvStatus obsv_system_from_json(const char *json, struct ObsvSystem **out);

/*
 Releases a system; null is ignored.
 */
void obsv_system_free(struct ObsvSystem *sys);

/*
 State and output dimensions.
 */
enum ObsvStatus obsv_system_dims(const struct ObsvSystem *sys, size_t *n, size_t *p);

/*
 Bound `γ` with `‖N(x)y‖ <= γ‖x‖‖y‖`-type estimates used for
 convergence radii.
 */
enum ObsvStatus obsv_n_norm(const struct ObsvSystem *sys, double *gamma);

/*
 Certifies a trapping ball with `ker Q` spanned by the unit vectors whose
 zero-based indices are listed in `ker_idx`. `center` receives `n`
 entries.
 */
enum ObsvStatus obsv_state_trap(const struct ObsvSystem *sys,
                                const size_t *ker_idx,
                                size_t nker,
                                double *center,
                                size_t center_len,
                                double *radius);

/*
 Local synthesis over a ball region with `α₁ I ≺ P ⪯ α₂ I`.
 */
enum ObsvStatus obsv_local_synth(const struct ObsvSystem *sys,
                                 enum ObsvRegionKind kind,
                                 const double *center,
                                 double radius,
                                 double alpha1,
                                 double alpha2,
                                 struct ObsvDesign **out);

/*
 Global synthesis over a ball region. The plant's trapping ball is
 certified first with `ker Q` given as in `obsv_state_trap`; `pcap <= 0`
 selects the default condition-number cap.
 */
enum ObsvStatus obsv_global_synth(const struct ObsvSystem *sys,
                                  const size_t *ker_idx,
                                  size_t nker,
                                  enum ObsvRegionKind kind,
                                  const double *center,
                                  double radius,
                                  double pcap,
                                  struct ObsvDesign **out);

/*
 Parses a design previously produced by `obsv_design_to_json` or the CLI.
 */
enum ObsvStatus obsv_design_from_json(const char *json, struct ObsvDesign **out);

/*
 Releases a design; null is ignored.
 */
void obsv_design_free(struct ObsvDesign *design);

/*
 Copies the `n × p` gain into `buf` in row-major order.
 */
enum ObsvStatus obsv_design_gain(const struct ObsvDesign *design, double *buf, size_t len);

/*
 Copies the `n × n` Lyapunov matrix into `buf` in row-major order.
 */
enum ObsvStatus obsv_design_lyapunov(const struct ObsvDesign *design, double *buf, size_t len);

/*
 Certified decay margin and convergence radius (infinite for global
 designs).
 */
enum ObsvStatus obsv_design_margins(const struct ObsvDesign *design,
                                    double *margin,
                                    double *convergence_radius);

/*
 Serializes a design to JSON. Release the string with `obsv_string_free`.
 */
enum ObsvStatus obsv_design_to_json(const struct ObsvDesign *design, char **out);

/*
 Releases a string returned by this library; null is ignored.
 */
void obsv_string_free(char *s);

/*
 Certified margin of a row-major gain `l` (`n × p`) and Lyapunov matrix
 `p_mat` (`n × n`) over a ball. Returns `OBSV_STATUS_VERIFICATION_FAILED`
 (with `*margin = 0`) when no positive margin is certified.
 */
enum ObsvStatus obsv_verify(const struct ObsvSystem *sys,
                            const double *l,
                            const double *p_mat,
                            enum ObsvRegionKind kind,
                            const double *center,
                            double radius,
                            double *margin);

/*
 Simulates plant and observer with RK4 and reports `‖x − x̂‖` at `t_end`.
 */
enum ObsvStatus obsv_simulate_observer(const struct ObsvSystem *sys,
                                       const double *l,
                                       const double *x0,
                                       const double *xhat0,
                                       double t_end,
                                       double dt,
                                       double *err_final);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OBSV_H */
