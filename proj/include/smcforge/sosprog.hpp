#pragma once

#include <map>
#include <string>
#include <vector>

#include "smcforge/conic.hpp"
#include "smcforge/poly.hpp"

namespace smcforge::sosprog {

using poly::Monomial;
using poly::Polynomial;
using poly::VarsPtr;

using ParamId = int;

/// Affine expression in scalar decision parameters.
struct AffExpr {
  double constant = 0.0;
  std::map<ParamId, double> coeffs;

  static AffExpr param(ParamId id, double c = 1.0) {
    AffExpr e;
    e.coeffs[id] = c;
    return e;
  }
  AffExpr& operator+=(const AffExpr& o);
  AffExpr operator+(const AffExpr& o) const;
  AffExpr operator-(const AffExpr& o) const;
  AffExpr operator*(double s) const;
  double evaluate(const Eigen::VectorXd& values) const;
};

/// Polynomial with coefficients affine in decision parameters:
/// fixed + sum_j theta_j * shape_j.
class ParametricPolynomial {
 public:
  ParametricPolynomial() = default;
  explicit ParametricPolynomial(Polynomial fixed) : fixed_(std::move(fixed)) {}

  const Polynomial& fixed() const { return fixed_; }
  const std::map<ParamId, Polynomial>& shapes() const { return shapes_; }
  const VarsPtr& vars() const { return fixed_.vars(); }
  bool is_purely_fixed() const { return shapes_.empty(); }

  void add_param_term(ParamId id, const Polynomial& shape);

  ParametricPolynomial operator+(const ParametricPolynomial& o) const;
  ParametricPolynomial operator-(const ParametricPolynomial& o) const;
  ParametricPolynomial operator-() const;
  /// Multiplication by a known polynomial keeps affine dependence.
  ParametricPolynomial times(const Polynomial& known) const;
  ParametricPolynomial operator*(double s) const;
  ParametricPolynomial differentiate(int var) const;

  Polynomial substitute_params(const Eigen::VectorXd& values) const;
  int max_degree() const;
  std::vector<int> support_vars() const;

 private:
  Polynomial fixed_;
  std::map<ParamId, Polynomial> shapes_;
};

/// Handle for an unknown polynomial: one parameter per monomial.
struct UnknownPoly {
  std::vector<Monomial> monomials;
  std::vector<ParamId> params;

  ParametricPolynomial as_parametric(const VarsPtr& vars) const;
  Polynomial value(const VarsPtr& vars, const Eigen::VectorXd& values) const;
};

/// Handle for a symmetric matrix unknown: params for entries i <= j.
struct UnknownSymMatrix {
  int dim = 0;
  std::vector<std::vector<ParamId>> params;  // params[i][j] valid for j <= i

  ParamId at(int i, int j) const {
    return i >= j ? params[i][j] : params[j][i];
  }
  Eigen::MatrixXd value(const Eigen::VectorXd& values) const;
};

/// Positive-semidefinite evidence for one SOS constraint. residual is the
/// worst coefficient mismatch between basis'*gram*basis and the certified
/// polynomial; both it and min_eig are recomputed from scratch, never taken
/// from the solver.
struct GramCertificate {
  std::string label;
  std::vector<Monomial> basis;
  Eigen::MatrixXd gram;
  double residual = 0.0;
  double min_eig = 0.0;
  double trace_norm = 0.0;
};

constexpr double kDefaultCertTol = 1e-7;
constexpr double kDefaultEigTol = 1e-7;

struct SosSolveResult {
  conic::SolveStatus status = conic::SolveStatus::numerical_failure;
  Eigen::VectorXd param_values;
  std::vector<GramCertificate> certificates;
  std::vector<Eigen::MatrixXd> matrix_values;  // per matrix-PSD constraint
  double objective = 0.0;
  bool all_certificates_ok = false;
  std::string message;
};

/// A set of SOS-constrained parametric polynomials plus affine equalities,
/// compiled to one PSD block per SOS constraint and one per symmetric-matrix
/// PSD requirement.
class SosProgram {
 public:
  explicit SosProgram(VarsPtr vars) : vars_(std::move(vars)) {}

  const VarsPtr& vars() const { return vars_; }
  ParamId add_parameter(const std::string& name);
  UnknownPoly add_unknown_polynomial(const std::vector<Monomial>& monomials,
                                     const std::string& name);
  UnknownSymMatrix add_symmetric_matrix(int dim, const std::string& name);

  void add_sos_constraint(ParametricPolynomial p, const std::string& label);
  /// Requires (M - eps_shift*I) PSD for the matrix unknown.
  void require_matrix_psd(const UnknownSymMatrix& m, double eps_shift,
                          const std::string& label);
  void add_equality(const AffExpr& e);  // e == 0
  void set_objective_maximize(const AffExpr& obj);

  int num_params() const { return static_cast<int>(param_names_.size()); }
  const std::string& param_name(ParamId id) const { return param_names_.at(id); }
  int num_sos_constraints() const { return static_cast<int>(sos_.size()); }
  const ParametricPolynomial& sos_constraint(int k) const {
    return sos_[k].pp;
  }
  const std::string& sos_label(int k) const { return sos_[k].label; }

  conic::ConicProblem compile() const;
  /// Gram bases in constraint order (as used by compile).
  std::vector<std::vector<Monomial>> gram_bases() const;

 private:
  struct SosEntry {
    ParametricPolynomial pp;
    std::string label;
  };
  struct MatrixPsdEntry {
    UnknownSymMatrix unknown;
    double eps_shift;
    std::string label;
  };
  void check_registered(const ParametricPolynomial& p) const;

  VarsPtr vars_;
  std::vector<std::string> param_names_;
  std::vector<SosEntry> sos_;
  std::vector<MatrixPsdEntry> matrix_psd_;
  std::vector<AffExpr> equalities_;
  AffExpr objective_;
  bool has_objective_ = false;

  friend SosSolveResult solve(const SosProgram&, const conic::SolverHandle&,
                              double, double);
};

/// Monomial basis for the Gram parameterization of one SOS constraint:
/// all monomials of degree <= (max total degree)/2 over the constraint's
/// support variables, graded-lex ordered. Throws on odd overall degree,
/// which is structurally non-SOS.
std::vector<Monomial> gram_basis(const ParametricPolynomial& p);

Polynomial gram_to_polynomial(const VarsPtr& vars,
                              const std::vector<Monomial>& basis,
                              const Eigen::MatrixXd& gram);

/// Rebuilds residual and eigenvalue data from scratch for the given
/// polynomial/basis/gram triple.
GramCertificate make_certificate(const std::string& label, const Polynomial& p,
                                 const std::vector<Monomial>& basis,
                                 const Eigen::MatrixXd& gram);

bool check_certificate(const Polynomial& p, const GramCertificate& cert,
                       double cert_tol = kDefaultCertTol,
                       double eig_tol = kDefaultEigTol);

/// Compiles and solves. On optimal, every SOS constraint carries a
/// recomputed GramCertificate and all_certificates_ok reports whether each
/// one passes check_certificate at the given tolerances. Solver statuses
/// other than optimal/infeasible surface as distinct outcomes, never as
/// silent infeasibility.
SosSolveResult solve(const SosProgram& program,
                     const conic::SolverHandle& solver,
                     double cert_tol = kDefaultCertTol,
                     double eig_tol = kDefaultEigTol);

}  // namespace smcforge::sosprog
