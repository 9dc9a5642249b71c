// Command-line front end: synthesis, certificate checking, closed-loop
// simulation and run reports for sliding-mode designs.
#include <chrono>
#include <ctime>
#include <iostream>

#include <CLI11.hpp>

#include "smcforge/problem.hpp"

using namespace smcforge;

namespace {

std::string default_out_dir(const std::string& name) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  return "out/" + name + "/" + stamp;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sliding-mode manifold and certificate synthesis"};
  app.require_subcommand(1);

  std::string problem_path, certificate_path, out_dir, mode_override, run_dir;
  uint64_t seed = 12345;
  long samples = 100000;
  int max_iter = -1;
  std::vector<double> x0_override;
  double tf_override = -1.0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "seed for all sampling");
    cmd->add_option("--samples", samples, "verification sample count");
  };

  auto* synth = app.add_subcommand("synth", "synthesize manifold and certificate");
  synth->add_option("problem", problem_path, "problem document")->required();
  synth->add_option("--mode", mode_override,
                    "roa | global | finite | finite-global");
  synth->add_option("--max-iter", max_iter, "iteration cap override");
  add_common(synth);

  auto* check = app.add_subcommand("check", "verify a stored certificate");
  check->add_option("problem", problem_path, "problem document")->required();
  check->add_option("--certificate", certificate_path, "result document")
      ->required();
  add_common(check);

  auto* simc = app.add_subcommand("sim", "simulate the closed loop");
  simc->add_option("problem", problem_path, "problem document")->required();
  simc->add_option("--certificate", certificate_path, "result document")
      ->required();
  simc->add_option("--x0", x0_override, "initial state override");
  simc->add_option("--tf", tf_override, "horizon override");
  add_common(simc);

  auto* report = app.add_subcommand("report", "consolidate run artifacts");
  report->add_option("run-dir", run_dir, "directory with run artifacts")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) return problem::run_report(run_dir, std::cout);

    auto prob = problem::parse_problem(problem_path);
    if (!mode_override.empty()) {
      auto mode = synthesis::mode_from_string(mode_override);
      if (!mode) {
        std::cerr << "unknown mode: " << mode_override << "\n";
        return problem::kExitUsage;
      }
      prob.mode = *mode;
    }
    problem::CommonOptions opt;
    opt.out_dir = out_dir.empty() ? default_out_dir(prob.name) : out_dir;
    opt.seed = seed;
    opt.verify_samples = samples;

    if (synth->parsed()) {
      return problem::run_synth(
          prob, opt,
          max_iter > 0 ? std::optional<int>(max_iter) : std::nullopt,
          std::cout);
    }
    if (check->parsed())
      return problem::run_check(prob, certificate_path, opt, std::cout);
    if (simc->parsed()) {
      std::optional<Eigen::VectorXd> x0;
      if (!x0_override.empty()) {
        x0 = Eigen::Map<Eigen::VectorXd>(x0_override.data(),
                                         x0_override.size());
        if (x0->size() != prob.system.n) {
          std::cerr << "--x0 needs " << prob.system.n << " entries\n";
          return problem::kExitUsage;
        }
      }
      return problem::run_sim(
          prob, certificate_path, opt, x0,
          tf_override > 0 ? std::optional<double>(tf_override) : std::nullopt,
          std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return problem::kExitUsage;
  }
  return problem::kExitUsage;
}
