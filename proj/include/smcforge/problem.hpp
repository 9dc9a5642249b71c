#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "smcforge/sim.hpp"
#include "smcforge/smc.hpp"
#include "smcforge/synthesis.hpp"

namespace smcforge::problem {

struct ProblemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimBlock {
  Eigen::VectorXd x0;
  double tf = 20.0;
  double dt = 1e-3;
  double delta = 0.03;
  sim::PerturbationModel perturbation;
};

/// In-memory form of a problem document: plant in regular form, synthesis
/// mode and overrides, and the simulation setup.
struct ProblemFile {
  std::string name;
  smc::RegularFormSystem system;
  synthesis::Mode mode = synthesis::Mode::global;
  synthesis::SynthesisConfig config;
  SimBlock sim;
};

ProblemFile parse_problem(const std::string& path);
ProblemFile parse_problem_text(const std::string& text,
                               const std::string& origin);
/// Canonical document; parse(print(parse(text))) is idempotent.
std::string problem_to_json(const ProblemFile& p);

/// Exit codes shared by all commands.
inline constexpr int kExitSuccess = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInfeasible = 2;
inline constexpr int kExitSolverFailure = 3;

struct CommonOptions {
  std::string out_dir;
  uint64_t seed = 12345;
  long verify_samples = 100000;
};

int run_synth(const ProblemFile& p, const CommonOptions& opt,
              std::optional<int> max_iter, std::ostream& diag);
int run_check(const ProblemFile& p, const std::string& certificate_path,
              const CommonOptions& opt, std::ostream& diag);
int run_sim(const ProblemFile& p, const std::string& certificate_path,
            const CommonOptions& opt, std::optional<Eigen::VectorXd> x0,
            std::optional<double> tf, std::ostream& diag);
int run_report(const std::string& run_dir, std::ostream& diag);

/// Builds the control law for a synthesis result under this problem's
/// boundary-layer setting.
smc::ControlLaw law_from_result(const ProblemFile& p,
                                const synthesis::SynthesisResult& result);

/// Writes states.csv and control_sliding.csv for plotting.
void emit_plot_data(const sim::Trajectory& traj,
                    const std::vector<std::string>& state_names, int m,
                    const std::string& out_dir);

}  // namespace smcforge::problem
