#include "smcforge/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "smcforge/rng.hpp"

namespace smcforge::sim {

Eigen::VectorXd PerturbationModel::evaluate(const smc::ControlLaw& law,
                                            const smc::RegularFormSystem& sys,
                                            const Eigen::VectorXd& state,
                                            double t) const {
  Eigen::VectorXd xi = Eigen::VectorXd::Zero(sys.m);
  switch (kind) {
    case Kind::zero:
      break;
    case Kind::sinusoid: {
      const double a =
          amplitude.is_zero()
              ? 0.0
              : amplitude.evaluate(amplitude.vars()->count() == state.size()
                                       ? state
                                       : law.augment(state));
      const double bound = sys.phi1.evaluate(
          sys.phi1.vars()->count() == state.size() ? state
                                                   : law.augment(state));
      // The matched disturbance never exceeds its declared bound.
      double mag = a * std::sin(omega * t + phase);
      mag = std::clamp(mag, -bound, bound);
      Eigen::VectorXd dir = Eigen::VectorXd::Ones(sys.m);
      dir /= dir.norm();
      xi = mag * dir;
      break;
    }
    case Kind::worst_case_anti_sliding: {
      const Eigen::VectorXd s = smc::manifold_value(law, sys, state);
      const double sn = s.norm();
      if (sn > 0.0) {
        const double bound = sys.phi1.evaluate(
            sys.phi1.vars()->count() == state.size() ? state
                                                     : law.augment(state));
        xi = -bound * s / sn;
      }
      break;
    }
  }
  return xi;
}

namespace {

template <typename Deriv>
SimResult integrate(const Deriv& deriv, const Eigen::VectorXd& x0, double tf,
                    double dt,
                    const std::function<void(double, const Eigen::VectorXd&)>&
                        record) {
  SimResult result;
  if (dt <= 0.0 || tf <= 0.0)
    throw poly::StructuralError("simulation requires dt > 0 and tf > 0");
  if (!x0.allFinite())
    throw poly::StructuralError("initial state must be finite");
  const long steps = std::lround(tf / dt);
  Eigen::VectorXd x = x0;
  record(0.0, x);
  for (long k = 0; k < steps; ++k) {
    const double t = k * dt;
    const Eigen::VectorXd k1 = deriv(t, x);
    const Eigen::VectorXd k2 = deriv(t + 0.5 * dt, x + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = deriv(t + 0.5 * dt, x + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = deriv(t + dt, x + dt * k3);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite() || x.norm() > 1e6) {
      result.diverged = true;
      result.divergence_time = t + dt;
      return result;
    }
    record((k + 1) * dt, x);
  }
  return result;
}

}  // namespace

SimResult simulate(const smc::RegularFormSystem& sys,
                   const smc::ControlLaw& law,
                   const PerturbationModel& perturbation,
                   const Eigen::VectorXd& x0, double tf, double dt,
                   const poly::Polynomial* lyapunov) {
  auto deriv = [&](double t, const Eigen::VectorXd& state) {
    const Eigen::VectorXd u = smc::control(law, sys, state, t);
    const Eigen::VectorXd xi = perturbation.evaluate(law, sys, state, t);
    const Eigen::VectorXd& sp = sys.f1.vars()->count() == state.size()
                                    ? state
                                    : law.augment(state);
    Eigen::VectorXd dz(sys.n);
    dz.head(sys.n - sys.m) = sys.f1.evaluate(sp);
    dz.tail(sys.m) = sys.f2.evaluate(sp) + sys.L.evaluate(sp) * u + xi;
    return dz;
  };

  SimResult result;
  result.trajectory.dt = dt;
  auto record = [&](double t, const Eigen::VectorXd& state) {
    result.trajectory.times.push_back(t);
    result.trajectory.states.push_back(state);
    result.trajectory.inputs.push_back(smc::control(law, sys, state, t));
    result.trajectory.sliding.push_back(smc::manifold_value(law, sys, state));
    if (lyapunov)
      result.trajectory.lyapunov.push_back(
          lyapunov->evaluate(law.augment(state)));
  };
  SimResult run = integrate(deriv, x0, tf, dt, record);
  result.diverged = run.diverged;
  result.divergence_time = run.divergence_time;
  return result;
}

SimResult simulate_field(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, double tf, double dt) {
  SimResult result;
  result.trajectory.dt = dt;
  auto record = [&](double t, const Eigen::VectorXd& state) {
    result.trajectory.times.push_back(t);
    result.trajectory.states.push_back(state);
  };
  SimResult run = integrate(f, x0, tf, dt, record);
  result.diverged = run.diverged;
  result.divergence_time = run.divergence_time;
  return result;
}

ReachingMetrics reaching_metrics(const Trajectory& traj, double delta,
                                 double eta) {
  ReachingMetrics out;
  const int n = traj.size();
  for (int k = 0; k < n; ++k) {
    const double sn = traj.sliding[k].norm();
    if (!out.t_reach && sn <= delta) out.t_reach = traj.times[k];
    if (out.t_reach && traj.times[k] > *out.t_reach)
      out.max_post_reach_excursion =
          std::max(out.max_post_reach_excursion, sn);
  }
  const double tol = 10.0 * traj.dt;
  for (int k = 1; k + 1 < n; ++k) {
    const Eigen::VectorXd& s = traj.sliding[k];
    const double sn = s.norm();
    if (sn <= delta) continue;
    ++out.samples_outside_layer;
    const Eigen::VectorXd sdot =
        (traj.sliding[k + 1] - traj.sliding[k - 1]) / (2.0 * traj.dt);
    if (s.dot(sdot) > -eta * sn + tol) ++out.violations;
  }
  return out;
}

std::optional<double> settling_time(const Trajectory& traj, double tol,
                                    int z1_dim) {
  if (tol <= 0.0) throw poly::StructuralError("settling tolerance must be positive");
  const int n = traj.size();
  int last_above = -1;
  for (int k = 0; k < n; ++k) {
    const auto& x = traj.states[k];
    const double nz =
        z1_dim > 0 ? x.head(z1_dim).norm() : x.norm();
    if (nz > tol) last_above = k;
  }
  if (last_above == n - 1) return std::nullopt;
  return traj.times[last_above + 1];
}

RoaReport roa_sample_report(const poly::Polynomial& V, double beta,
                            const poly::Polynomial& p,
                            const Eigen::VectorXd& halfwidth, long n_samples,
                            uint64_t seed, const RoaSpotCheck* spot) {
  RoaReport report;
  if (n_samples < 1) throw poly::StructuralError("need at least one sample");
  Rng rng(seed);
  const int dim = static_cast<int>(halfwidth.size());
  std::vector<Eigen::VectorXd> spot_candidates;
  Eigen::VectorXd x(dim);
  for (long i = 0; i < n_samples; ++i) {
    for (int d = 0; d < dim; ++d)
      x[d] = rng.uniform(-halfwidth[d], halfwidth[d]);
    ++report.tested;
    const double pv = p.evaluate(x);
    const double vv = V.evaluate(x);
    if (vv <= 1.0) {
      ++report.in_level_set;
      if (spot && static_cast<int>(spot_candidates.size()) < spot->count)
        spot_candidates.push_back(x);
    }
    if (pv <= beta && vv > 1.0 + 1e-6) ++report.containment_violations;
  }
  if (spot && spot->sys && spot->law) {
    for (const auto& x0 : spot_candidates) {
      ++report.spot_checked;
      auto run = simulate(*spot->sys, *spot->law, spot->perturbation, x0,
                          spot->tf, spot->dt);
      const bool ok = !run.diverged &&
                      run.trajectory.states.back().norm() <= spot->tol;
      if (!ok) ++report.spot_failures;
    }
  }
  return report;
}

std::string format_sig9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string trajectory_csv(const Trajectory& traj,
                           const std::vector<std::string>& state_names,
                           int m) {
  std::ostringstream os;
  os << "t";
  for (const auto& n : state_names) os << "," << n;
  for (int i = 1; i <= m; ++i) os << ",u" << i;
  for (int i = 1; i <= m; ++i) os << ",S" << i;
  os << ",V\n";
  for (int k = 0; k < traj.size(); ++k) {
    os << format_sig9(traj.times[k]);
    for (int d = 0; d < traj.states[k].size(); ++d)
      os << "," << format_sig9(traj.states[k][d]);
    if (!traj.inputs.empty())
      for (int d = 0; d < m; ++d) os << "," << format_sig9(traj.inputs[k][d]);
    if (!traj.sliding.empty())
      for (int d = 0; d < m; ++d) os << "," << format_sig9(traj.sliding[k][d]);
    os << ","
       << format_sig9(traj.lyapunov.empty() ? 0.0 : traj.lyapunov[k]);
    os << "\n";
  }
  return os.str();
}

}  // namespace smcforge::sim
