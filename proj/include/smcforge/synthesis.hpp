#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smcforge/smc.hpp"
#include "smcforge/sosprog.hpp"

namespace smcforge::synthesis {

using poly::Polynomial;
using poly::PolyVector;
using poly::VarsPtr;
using smc::RegularFormSystem;

enum class Mode { roa, global, finite, finite_global };
const char* to_string(Mode m);
std::optional<Mode> mode_from_string(const std::string& s);

enum class SynthStatus {
  success,
  infeasible_from_init,
  iteration_cap,
  solver_failure,
  zero_rate,
};
const char* to_string(SynthStatus s);

struct SynthesisConfig {
  int deg_V = 2;
  int deg_S = 1;
  int deg_q = 2;
  int deg_s1 = 2;
  int deg_s2 = 2;
  int deg_s3 = 2;
  int deg_K = 2;
  /// Uniform coefficient for the even-power floors l1, l2; a full table can
  /// be given instead via eps_table (one row per variable, one column per
  /// even power).
  double eps_l = 1e-4;
  Eigen::MatrixXd eps_table;
  Polynomial shape;     // defaults to the sum of squared states
  PolyVector init_q;    // defaults to rows of sum of states
  Polynomial init_s2;   // defaults to 0.5 * sum of squared states
  double beta_lo = -100.0;
  double beta_hi = 100.0;
  double beta_tol = 1e-3;
  int max_iter = 20;
  // Finite-time settings.
  PolyVector w;  // defaults to the identity on z1
  int p_exp = 2;
  int r_exp = 3;
  double eps_Q = 1e-4;
  /// Containment level used by the finite-time variant, which maximizes the
  /// decrease rate rather than the level itself.
  double finite_containment_level = -100.0;
  std::optional<PolyVector> fixed_S;
  bool manifold_uses_slack = true;
  double cert_tol = sosprog::kDefaultCertTol;
  double eig_tol = sosprog::kDefaultEigTol;
  conic::SolverSettings solver;
};

struct IterationRecord {
  int iteration = 0;
  std::string phase;
  std::string outcome;
  double objective = 0.0;
};

struct SynthesisResult {
  SynthStatus status = SynthStatus::solver_failure;
  Mode mode = Mode::global;
  VarsPtr vars;  // possibly slack-extended
  Polynomial V;
  PolyVector S;
  Eigen::MatrixXd Q;  // finite-time Gram of V in the w basis; 0x0 otherwise
  double objective = std::numeric_limits<double>::quiet_NaN();
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double settling_coeff = std::numeric_limits<double>::quiet_NaN();
  double lambda_min_Q_inv = std::numeric_limits<double>::quiet_NaN();
  double containment_level = std::numeric_limits<double>::quiet_NaN();
  std::map<std::string, Polynomial> multipliers;
  Polynomial floor_l1;
  Polynomial floor_l2;
  Polynomial shape;
  PolyVector w;
  int p_exp = 0, r_exp = 0;
  std::vector<sosprog::GramCertificate> certificates;
  std::vector<IterationRecord> log;
  std::string note;
};

/// l(z) = sum_i sum_j eps(i,j) z_{idx i}^(2j). Every entry must be
/// nonnegative and every row must have a positive sum, which makes the
/// result positive definite in the selected variables.
Polynomial even_power_floor(const VarsPtr& vars, const std::vector<int>& indices,
                            const Eigen::MatrixXd& eps);

struct StepOutcome {
  conic::SolveStatus status = conic::SolveStatus::numerical_failure;
  Polynomial V;
  PolyVector S;
  Eigen::MatrixXd Q;
  std::map<std::string, Polynomial> multipliers;
  std::vector<sosprog::GramCertificate> certificates;
  std::string message;
};

/// One pass of the certificate phase: solve for the Lyapunov data and the
/// manifold with the multipliers and the objective value frozen.
StepOutcome certificate_step_roa(const RegularFormSystem& sys,
                                 const SynthesisConfig& cfg,
                                 const Polynomial& s2, const PolyVector& q,
                                 double beta);
StepOutcome certificate_step_global(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const PolyVector& q, double beta);
StepOutcome certificate_step_finite(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const Polynomial& s2, const PolyVector& q,
                                    double c, bool global_variant);

enum class MaxOutcome {
  found,
  infeasible_at_lo,
  bracket_top_feasible,
  solver_failure,
};

struct MaximizeResult {
  MaxOutcome outcome = MaxOutcome::solver_failure;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::map<std::string, Polynomial> multipliers;
  std::vector<sosprog::GramCertificate> certificates;
  int probes = 0;
  std::string message;
};

/// Bisection over the objective; each probe freezes it and solves the
/// resulting convex feasibility problem. The bracket starts at
/// max(0, lo_hint); if that probe is infeasible the known-feasible lo_hint
/// anchors the bracket instead.
MaximizeResult maximize_beta(const RegularFormSystem& sys,
                             const SynthesisConfig& cfg, const Polynomial& V,
                             const PolyVector& S, double lo_hint);
MaximizeResult maximize_rate_global(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const Polynomial& V, const PolyVector& S,
                                    double lo_hint);
MaximizeResult maximize_rate_finite(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const Eigen::MatrixXd& Q,
                                    const PolyVector& S, double lo_hint,
                                    bool global_variant);
/// Standalone level-set inflation {shape <= beta} within {V <= 1}.
MaximizeResult maximize_containment(const Polynomial& V,
                                    const Polynomial& shape,
                                    const SynthesisConfig& cfg);

SynthesisResult synthesize_roa(const RegularFormSystem& sys,
                               const SynthesisConfig& cfg);
SynthesisResult synthesize_global(const RegularFormSystem& sys,
                                  const SynthesisConfig& cfg);
SynthesisResult synthesize_finite_time(const RegularFormSystem& sys,
                                       const SynthesisConfig& cfg,
                                       bool global_variant);

struct VerifyReport {
  long containment_tested = 0;
  long containment_violations = 0;
  long decrease_tested = 0;
  long decrease_violations = 0;   // sampled V-dot >= 0 on the manifold
  long floor_violations = 0;      // sampled V-dot above -l2 + tolerance
  long rate_violations = 0;       // exponential / finite-time rate misses
  long root_failures = 0;         // manifold solve failures during sampling
  int certificates_checked = 0;
  int certificate_failures = 0;
  bool constraints_rebuilt = true;
  std::vector<std::string> notes;

  bool ok() const {
    return containment_violations == 0 && decrease_violations == 0 &&
           rate_violations == 0 && certificate_failures == 0 &&
           constraints_rebuilt;
  }
};

/// Independent validation layer: rebuilds the certified constraint
/// polynomials from the stored pieces, re-checks every Gram certificate,
/// and samples containment plus decrease along the reduced dynamics.
VerifyReport verify_result(const RegularFormSystem& sys,
                           const SynthesisResult& result, long samples,
                           uint64_t seed);

std::string result_to_json(const SynthesisResult& result);
SynthesisResult result_from_json(const std::string& text);

/// Variable set extended with the slack symbol "M" (flagged), reusing the
/// system set when it already carries one.
VarsPtr slack_extended_vars(const RegularFormSystem& sys);

}  // namespace smcforge::synthesis
