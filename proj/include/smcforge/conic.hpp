#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace smcforge::conic {

/// Symmetric coefficient entry of one constraint row: value applies to
/// (row,col) and (col,row) of the given PSD block. row >= col.
struct MatrixEntry {
  int block;
  int row;
  int col;
  double value;
};

struct FreeEntry {
  int index;
  double value;
};

/// One affine equality:  sum_k <A_k, X_k> + f . theta = rhs,
/// where <.,.> is the trace inner product.
struct ConstraintRow {
  std::vector<FreeEntry> free_terms;
  std::vector<MatrixEntry> matrix_terms;
  double rhs = 0.0;
};

/// Conic problem over free scalars theta and PSD matrix blocks X_k:
///   maximize objective_free . theta
///   s.t.     every ConstraintRow holds, X_k positive semidefinite.
/// An empty objective makes it a pure feasibility problem.
struct ConicProblem {
  int num_free = 0;
  std::vector<int> block_dims;
  std::vector<ConstraintRow> rows;
  std::vector<double> objective_free;

  /// Byte-stable textual dump, used to assert deterministic compilation.
  std::string serialize() const;
};

enum class SolveStatus { optimal, infeasible, unbounded, numerical_failure };

const char* to_string(SolveStatus s);

struct ConicSolution {
  SolveStatus status = SolveStatus::numerical_failure;
  Eigen::VectorXd free_values;
  std::vector<Eigen::MatrixXd> blocks;
  double objective = 0.0;
  int iterations = 0;
  std::string message;
};

struct SolverSettings {
  double eps_feas = 1e-8;
  double eps_gap = 1e-8;
  double eps_infeas = 1e-9;
  /// Stalled runs are accepted at this multiple of the target tolerances.
  double reduced_accuracy_factor = 100.0;
  int max_iterations = 200;
  double step_fraction = 0.98;
};

/// Abstract conic-solver contract: deterministic for identical input and
/// settings. Any implementation satisfying it is admissible.
class SolverHandle {
 public:
  virtual ~SolverHandle() = default;
  virtual ConicSolution solve(const ConicProblem& problem) const = 0;
};

/// Dense primal-dual interior-point method on the homogeneous self-dual
/// embedding with Nesterov-Todd scaling and Mehrotra predictor-corrector.
/// Free variables are eliminated up front by rank-revealing QR, so the core
/// iteration only sees PSD blocks; this keeps infeasibility and
/// unboundedness certificates clean.
class InteriorPointSolver final : public SolverHandle {
 public:
  InteriorPointSolver() = default;
  explicit InteriorPointSolver(SolverSettings settings)
      : settings_(settings) {}
  ConicSolution solve(const ConicProblem& problem) const override;
  const SolverSettings& settings() const { return settings_; }

 private:
  SolverSettings settings_;
};

}  // namespace smcforge::conic
