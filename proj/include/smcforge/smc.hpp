#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "smcforge/poly.hpp"

namespace smcforge::smc {

struct SingularJacobianError : std::runtime_error {
  SingularJacobianError(const std::string& msg, double cond)
      : std::runtime_error(msg), condition_number(cond) {}
  double condition_number;
};

struct UnsolvableManifold : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Plant in regular form:
///   z1' = f1(z),  z2' = f2(z) + L(z) u + xi1,
/// with ||xi1|| bounded by phi1(z). The state variables come first in the
/// indeterminate set; a trailing slack symbol, when present, never appears
/// in f1/f2/L/phi1 and is only used by manifolds.
struct RegularFormSystem {
  int n = 0;
  int m = 0;
  poly::VarsPtr vars;
  poly::PolyVector f1;
  poly::PolyVector f2;
  poly::PolyMatrix L;
  poly::Polynomial phi1;
  double eta = 0.1;

  std::vector<int> z1_indices() const;
  std::vector<int> z2_indices() const;
  /// Checks dimensions and the equilibrium-at-origin requirement.
  void validate() const;
};

/// Fractional-power slack tie M = (w(z1)' w(z1))^(p/r). The synthesis stage
/// treats M as an ordinary indeterminate; only numeric evaluation applies
/// this definition.
struct SlackDef {
  poly::PolyVector w;
  int p_exp = 2;
  int r_exp = 3;

  double alpha() const { return double(p_exp) / double(r_exp); }
  double value(const Eigen::VectorXd& state) const;
  /// d M / d state. Zero on the z2 coordinates; near w = 0 the fractional
  /// power can blow up, in which case the gradient is clamped to zero and
  /// the caller relies on the boundary layer.
  Eigen::VectorXd gradient(const Eigen::VectorXd& state) const;
};

struct ControlLaw {
  poly::PolyVector S;  // manifold rows, possibly over the slack symbol
  double delta = 0.03;
  std::optional<SlackDef> slack;
  /// Switching direction function; must vanish only at S = 0. Identity when
  /// unset.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gamma;

  /// Appends the slack value when the manifold uses it.
  Eigen::VectorXd augment(const Eigen::VectorXd& state) const;
};

/// S evaluated at a plain state (slack substituted numerically).
Eigen::VectorXd manifold_value(const ControlLaw& law,
                               const RegularFormSystem& sys,
                               const Eigen::VectorXd& state);

/// Equivalent control -(dS/dz2 L)^{-1} (dS/dz2 f2 + dS/dz1 f1) at the given
/// state. Throws SingularJacobianError when dS/dz2 * L has condition number
/// above 1e8.
Eigen::VectorXd equivalent_control(const ControlLaw& law,
                                   const RegularFormSystem& sys,
                                   const Eigen::VectorXd& state);

/// Minimal admissible switching gain ||dS/dz2|| phi1 + eta.
double switching_gain(const ControlLaw& law, const RegularFormSystem& sys,
                      const Eigen::VectorXd& state);

/// Full control: boundary-layer-saturated switching term plus equivalent
/// control.
Eigen::VectorXd control(const ControlLaw& law, const RegularFormSystem& sys,
                        const Eigen::VectorXd& state, double t);

/// Time derivative of S along the closed loop for a given input and matched
/// perturbation sample; used by reaching-condition checks.
Eigen::VectorXd manifold_derivative(const ControlLaw& law,
                                    const RegularFormSystem& sys,
                                    const Eigen::VectorXd& state,
                                    const Eigen::VectorXd& u,
                                    const Eigen::VectorXd& xi1);

/// Reduced dynamics on z1 obtained by solving S(z1, z2) = 0 for z2.
/// Supported manifold structures: rows jointly affine in z2, or a single
/// input channel whose row is polynomial in z2 with a unique real root at
/// the queried point. Anything else reports UnsolvableManifold, at
/// construction when structural, at evaluation when point-dependent.
class SlidingDynamics {
 public:
  SlidingDynamics(const ControlLaw& law, const RegularFormSystem& sys);

  /// z2 solving S(z1, z2) = 0; throws UnsolvableManifold on zero or multiple
  /// real roots.
  Eigen::VectorXd solve_z2(const Eigen::VectorXd& z1) const;
  /// f1 evaluated on the manifold.
  Eigen::VectorXd field(const Eigen::VectorXd& z1) const;
  Eigen::VectorXd full_state(const Eigen::VectorXd& z1) const;

 private:
  enum class Kind { affine, scalar_poly };
  Kind kind_;
  ControlLaw law_;
  RegularFormSystem sys_;
};

}  // namespace smcforge::smc
