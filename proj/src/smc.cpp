#include "smcforge/smc.hpp"

#include <algorithm>
#include <cmath>

namespace smcforge::smc {

using poly::Polynomial;
using poly::PolyMatrix;
using poly::PolyVector;
using poly::StructuralError;

std::vector<int> RegularFormSystem::z1_indices() const {
  std::vector<int> idx(n - m);
  for (int i = 0; i < n - m; ++i) idx[i] = i;
  return idx;
}

std::vector<int> RegularFormSystem::z2_indices() const {
  std::vector<int> idx(m);
  for (int i = 0; i < m; ++i) idx[i] = n - m + i;
  return idx;
}

void RegularFormSystem::validate() const {
  if (n <= 0 || m <= 0 || m >= n)
    throw StructuralError("regular form requires 0 < m < n");
  if (f1.size() != n - m) throw StructuralError("f1 must have length n-m");
  if (f2.size() != m) throw StructuralError("f2 must have length m");
  if (L.rows() != m || L.cols() != m)
    throw StructuralError("L must be m x m");
  const int nv = vars->count();
  if (nv != n && !(vars->slack_index() && nv == n + 1))
    throw StructuralError("indeterminate set must hold the n states");
  Eigen::VectorXd origin = Eigen::VectorXd::Zero(nv);
  if (f1.evaluate(origin).lpNorm<Eigen::Infinity>() > 0.0 ||
      f2.evaluate(origin).lpNorm<Eigen::Infinity>() > 0.0)
    throw StructuralError("equilibrium must sit at the origin: f1(0)=f2(0)=0");
  if (auto s = vars->slack_index()) {
    for (int i = 0; i < f1.size(); ++i)
      if (f1[i].depends_on(*s))
        throw StructuralError("plant dynamics may not reference the slack symbol");
  }
  if (eta <= 0.0) throw StructuralError("eta must be positive");
}

double SlackDef::value(const Eigen::VectorXd& state) const {
  Eigen::VectorXd pt = state;
  if (w.vars()->count() == state.size() + 1) {
    pt.conservativeResize(state.size() + 1);
    pt[state.size()] = 0.0;
  }
  const double ww = w.evaluate(pt).squaredNorm();
  return std::pow(ww, double(p_exp) / double(r_exp));
}

Eigen::VectorXd SlackDef::gradient(const Eigen::VectorXd& state) const {
  const int ns = static_cast<int>(state.size());
  Eigen::VectorXd pt = state;
  const bool padded = w.vars()->count() == ns + 1;
  if (padded) {
    pt.conservativeResize(ns + 1);
    pt[ns] = 0.0;
  }
  const Eigen::VectorXd wv = w.evaluate(pt);
  const double ww = wv.squaredNorm();
  const double expo = double(p_exp) / double(r_exp) - 1.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(ns);
  if (ww < 1e-300) return grad;  // clamp at the fractional-power singularity
  std::vector<int> all(ns);
  for (int i = 0; i < ns; ++i) all[i] = i;
  Eigen::MatrixXd Jw = w.jacobian(all).evaluate(pt);
  grad = 2.0 * (double(p_exp) / double(r_exp)) * std::pow(ww, expo) *
         (Jw.transpose() * wv);
  return grad;
}

Eigen::VectorXd ControlLaw::augment(const Eigen::VectorXd& state) const {
  if (!slack || S.vars()->count() == state.size()) return state;
  Eigen::VectorXd aug(state.size() + 1);
  aug.head(state.size()) = state;
  aug[state.size()] = slack->value(state);
  return aug;
}

Eigen::VectorXd manifold_value(const ControlLaw& law,
                               const RegularFormSystem& sys,
                               const Eigen::VectorXd& state) {
  (void)sys;
  return law.S.evaluate(law.augment(state));
}

namespace {

// dS/dz1 with the slack chain rule folded in, and dS/dz2, both evaluated.
struct ManifoldJacobians {
  Eigen::MatrixXd wrt_z1;
  Eigen::MatrixXd wrt_z2;
};

ManifoldJacobians manifold_jacobians(const ControlLaw& law,
                                     const RegularFormSystem& sys,
                                     const Eigen::VectorXd& state,
                                     const Eigen::VectorXd& aug) {
  ManifoldJacobians j;
  j.wrt_z1 = law.S.jacobian(sys.z1_indices()).evaluate(aug);
  j.wrt_z2 = law.S.jacobian(sys.z2_indices()).evaluate(aug);
  if (law.slack && law.S.vars()->slack_index()) {
    const int sidx = *law.S.vars()->slack_index();
    Eigen::MatrixXd dS_dM = law.S.jacobian({sidx}).evaluate(aug);
    Eigen::VectorXd dM = law.slack->gradient(state);
    j.wrt_z1 += dS_dM * dM.head(sys.n - sys.m).transpose();
    // The slack depends on z1 only, so the z2 block has no chain term.
  }
  return j;
}

}  // namespace

namespace {

// System polynomials live over the plain state variables unless the plant
// itself was declared over a slack-extended set.
const Eigen::VectorXd& plant_point(const RegularFormSystem& sys,
                                   const Eigen::VectorXd& state,
                                   const Eigen::VectorXd& aug) {
  return sys.f1.vars()->count() == state.size() ? state : aug;
}

}  // namespace

Eigen::VectorXd equivalent_control(const ControlLaw& law,
                                   const RegularFormSystem& sys,
                                   const Eigen::VectorXd& state) {
  const Eigen::VectorXd aug = law.augment(state);
  const auto jac = manifold_jacobians(law, sys, state, aug);
  const Eigen::VectorXd& sp = plant_point(sys, state, aug);
  const Eigen::MatrixXd B = jac.wrt_z2 * sys.L.evaluate(sp);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(B, Eigen::ComputeFullU |
                                               Eigen::ComputeFullV);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  const double cond = smin > 0.0 ? smax / smin
                                 : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e8))
    throw SingularJacobianError("dS/dz2 * L is near singular", cond);
  const Eigen::VectorXd rhs = jac.wrt_z2 * sys.f2.evaluate(sp) +
                              jac.wrt_z1 * sys.f1.evaluate(sp);
  return -svd.solve(rhs);
}

double switching_gain(const ControlLaw& law, const RegularFormSystem& sys,
                      const Eigen::VectorXd& state) {
  const Eigen::VectorXd aug = law.augment(state);
  const auto jac = manifold_jacobians(law, sys, state, aug);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac.wrt_z2);
  const double norm = svd.singularValues().maxCoeff();
  return norm * sys.phi1.evaluate(plant_point(sys, state, aug)) + sys.eta;
}

Eigen::VectorXd control(const ControlLaw& law, const RegularFormSystem& sys,
                        const Eigen::VectorXd& state, double t) {
  (void)t;
  if (!(law.delta > 0.0))
    throw StructuralError("boundary-layer width must be positive");
  const Eigen::VectorXd u_eq = equivalent_control(law, sys, state);
  const Eigen::VectorXd s = manifold_value(law, sys, state);
  Eigen::VectorXd g = law.gamma ? law.gamma(s) : s;
  const double gn = g.norm();
  if (gn == 0.0) return u_eq;
  const double rho = switching_gain(law, sys, state);
  const double scale = std::min(1.0, s.norm() / law.delta);
  return -rho * scale * (g / gn) + u_eq;
}

Eigen::VectorXd manifold_derivative(const ControlLaw& law,
                                    const RegularFormSystem& sys,
                                    const Eigen::VectorXd& state,
                                    const Eigen::VectorXd& u,
                                    const Eigen::VectorXd& xi1) {
  const Eigen::VectorXd aug = law.augment(state);
  const auto jac = manifold_jacobians(law, sys, state, aug);
  const Eigen::VectorXd& sp = plant_point(sys, state, aug);
  const Eigen::VectorXd z2dot =
      sys.f2.evaluate(sp) + sys.L.evaluate(sp) * u + xi1;
  return jac.wrt_z2 * z2dot + jac.wrt_z1 * sys.f1.evaluate(sp);
}

// ---------------------------------------------------------------------------
// SlidingDynamics

SlidingDynamics::SlidingDynamics(const ControlLaw& law,
                                 const RegularFormSystem& sys)
    : law_(law), sys_(sys) {
  const auto z2 = sys.z2_indices();
  bool affine = true;
  for (int r = 0; r < law.S.size(); ++r) {
    for (const auto& [mono, c] : law.S[r].terms()) {
      int z2deg = 0;
      for (int j : z2) z2deg += mono.exponents[j];
      if (z2deg > 1) affine = false;
    }
  }
  if (affine) {
    kind_ = Kind::affine;
    return;
  }
  if (sys.m == 1) {
    kind_ = Kind::scalar_poly;
    return;
  }
  throw UnsolvableManifold(
      "manifold is neither affine in z2 nor a single scalar channel");
}

Eigen::VectorXd SlidingDynamics::solve_z2(const Eigen::VectorXd& z1) const {
  const int n = sys_.n, m = sys_.m;
  Eigen::VectorXd state = Eigen::VectorXd::Zero(n);
  state.head(n - m) = z1;
  const Eigen::VectorXd aug0 = law_.augment(state);  // z2 = 0 baseline

  if (kind_ == Kind::affine) {
    const Eigen::VectorXd g = law_.S.evaluate(aug0);
    const Eigen::MatrixXd A =
        law_.S.jacobian(sys_.z2_indices()).evaluate(aug0);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible())
      throw UnsolvableManifold("affine manifold block is singular here");
    return lu.solve(-g);
  }

  // Scalar channel: collect the row as a univariate polynomial in z2.
  const int z2idx = n - m;
  const Polynomial& row = law_.S[0];
  const int deg = row.degree_in(z2idx);
  std::vector<double> coeff(deg + 1, 0.0);
  for (const auto& [mono, c] : row.terms()) {
    poly::Monomial rest = mono;
    const int e = rest.exponents[z2idx];
    rest.exponents[z2idx] = 0;
    coeff[e] += c * rest.evaluate(std::span<const double>(aug0.data(),
                                                          aug0.size()));
  }
  int top = deg;
  double cmax = 0.0;
  for (double c : coeff) cmax = std::max(cmax, std::abs(c));
  while (top > 0 && std::abs(coeff[top]) < 1e-14 * (1.0 + cmax)) --top;
  if (top == 0)
    throw UnsolvableManifold("manifold row degenerates to a constant here");

  auto eval = [&](double t) {
    double v = coeff[top];
    for (int k = top - 1; k >= 0; --k) v = v * t + coeff[k];
    return v;
  };
  double bound = 0.0;
  for (int k = 0; k < top; ++k)
    bound = std::max(bound, std::abs(coeff[k] / coeff[top]));
  const double R = 1.0 + bound;

  std::vector<double> roots;
  const int grid = 2000;
  double prev_t = -R, prev_v = eval(prev_t);
  if (prev_v == 0.0) roots.push_back(prev_t);
  for (int i = 1; i <= grid; ++i) {
    const double t = -R + 2.0 * R * i / grid;
    const double v = eval(t);
    if (v == 0.0) {
      roots.push_back(t);
    } else if (prev_v != 0.0 && ((prev_v < 0) != (v < 0))) {
      double lo = prev_t, hi = t;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double vm = eval(mid);
        if (vm == 0.0) {
          lo = hi = mid;
          break;
        }
        if ((vm < 0) == (prev_v < 0))
          lo = mid;
        else
          hi = mid;
      }
      roots.push_back(0.5 * (lo + hi));
    }
    prev_t = t;
    prev_v = v;
  }
  std::sort(roots.begin(), roots.end());
  roots.erase(std::unique(roots.begin(), roots.end(),
                          [&](double a, double b) {
                            return std::abs(a - b) <= 1e-9 * (1.0 + R);
                          }),
              roots.end());
  if (roots.empty())
    throw UnsolvableManifold("manifold row has no real z2 root here");
  if (roots.size() > 1)
    throw UnsolvableManifold("ambiguous manifold: " +
                             std::to_string(roots.size()) +
                             " real z2 roots here");
  Eigen::VectorXd z2v(1);
  z2v[0] = roots[0];
  return z2v;
}

Eigen::VectorXd SlidingDynamics::full_state(const Eigen::VectorXd& z1) const {
  Eigen::VectorXd state = Eigen::VectorXd::Zero(sys_.n);
  state.head(sys_.n - sys_.m) = z1;
  state.tail(sys_.m) = solve_z2(z1);
  return state;
}

Eigen::VectorXd SlidingDynamics::field(const Eigen::VectorXd& z1) const {
  const Eigen::VectorXd state = full_state(z1);
  const Eigen::VectorXd aug = law_.augment(state);
  return sys_.f1.evaluate(plant_point(sys_, state, aug));
}

}  // namespace smcforge::smc
