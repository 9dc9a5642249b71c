#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "smcforge/poly.hpp"
#include "smcforge/smc.hpp"

namespace smcforge::sim {

struct PerturbationModel {
  enum class Kind { zero, sinusoid, worst_case_anti_sliding };
  Kind kind = Kind::zero;
  /// Sinusoid magnitude shape; must stay below phi1 on the domain of
  /// interest. The worst-case mode always saturates the phi1 bound.
  poly::Polynomial amplitude;
  double omega = 5.0;
  double phase = 0.0;

  Eigen::VectorXd evaluate(const smc::ControlLaw& law,
                           const smc::RegularFormSystem& sys,
                           const Eigen::VectorXd& state, double t) const;
};

struct Trajectory {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> inputs;   // empty for open-loop runs
  std::vector<Eigen::VectorXd> sliding;  // empty for open-loop runs
  std::vector<double> lyapunov;          // empty when no V was supplied

  int size() const { return static_cast<int>(times.size()); }
};

struct SimResult {
  Trajectory trajectory;
  bool diverged = false;
  double divergence_time = 0.0;
};

/// Fixed-step classical Runge-Kutta on the closed loop, control and
/// perturbation recomputed at every stage. States above norm 1e6 stop the
/// run and mark it diverged, with the truncated trajectory attached.
SimResult simulate(const smc::RegularFormSystem& sys,
                   const smc::ControlLaw& law,
                   const PerturbationModel& perturbation,
                   const Eigen::VectorXd& x0, double tf, double dt,
                   const poly::Polynomial* lyapunov = nullptr);

/// Same integrator for an arbitrary autonomous field (reduced dynamics,
/// convergence-order checks).
SimResult simulate_field(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, double tf, double dt);

struct ReachingMetrics {
  std::optional<double> t_reach;
  double max_post_reach_excursion = 0.0;
  long violations = 0;
  long samples_outside_layer = 0;
};

/// t_reach is the first grid time with ||S|| <= delta; violations count
/// samples outside the layer whose central-difference estimate of S'S_dot
/// exceeds -eta ||S|| plus a 10*dt tolerance.
ReachingMetrics reaching_metrics(const Trajectory& traj, double delta,
                                 double eta);

/// First time t* with ||z1(s)|| <= tol for all s >= t*; z1_dim <= 0 means
/// the whole state.
std::optional<double> settling_time(const Trajectory& traj, double tol,
                                    int z1_dim = -1);

struct RoaSpotCheck {
  const smc::RegularFormSystem* sys = nullptr;
  const smc::ControlLaw* law = nullptr;
  PerturbationModel perturbation;
  double tf = 20.0;
  double dt = 1e-3;
  double tol = 0.05;
  int count = 5;
};

struct RoaReport {
  long tested = 0;
  long in_level_set = 0;
  long containment_violations = 0;
  int spot_checked = 0;
  int spot_failures = 0;
};

/// Uniform sampling over the centered box with the given halfwidths:
/// counts points with p <= beta but V > 1 + 1e-6, and optionally confirms
/// convergence by full simulation from a few sampled starts inside
/// {V <= 1}.
RoaReport roa_sample_report(const poly::Polynomial& V, double beta,
                            const poly::Polynomial& p,
                            const Eigen::VectorXd& halfwidth, long n_samples,
                            uint64_t seed,
                            const RoaSpotCheck* spot = nullptr);

/// Exchange format: header t,<states>,u1..,S1..,V; one row per grid point,
/// 9 significant digits.
std::string trajectory_csv(const Trajectory& traj,
                           const std::vector<std::string>& state_names,
                           int m);

std::string format_sig9(double v);

}  // namespace smcforge::sim
