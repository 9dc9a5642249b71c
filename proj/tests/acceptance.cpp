// Acceptance suite: one case per criterion, each printing a pass/fail line
// with the measured quantities.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "smcforge/problem.hpp"
#include "smcforge/rng.hpp"
#include "smcforge/sim.hpp"
#include "smcforge/sosprog.hpp"
#include "smcforge/synthesis.hpp"

using namespace smcforge;
using poly::parse_polynomial;
using poly::Polynomial;
using poly::PolyVector;

namespace {

struct Criterion {
  std::string label;
  bool ok = true;
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();

  explicit Criterion(std::string l) : label(std::move(l)) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
  void expect(bool cond, const std::string& what) {
    if (!cond) ok = false;
    std::printf("    %-6s %s\n", cond ? "ok" : "MISS", what.c_str());
    CHECK_MESSAGE(cond, what);
  }
  ~Criterion() {
    std::printf("[%s] %s (%.2fs)\n", ok ? "PASS" : "FAIL", label.c_str(),
                seconds());
    std::fflush(stdout);
  }
};

std::string fmt(const char* pattern, double v) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

problem::ProblemFile load_problem(const std::string& name) {
  return problem::parse_problem(std::string(SMCFORGE_PROBLEM_DIR) + "/" +
                                name);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string fresh_dir(const std::string& tag) {
  auto dir =
      std::filesystem::temp_directory_path() / ("smcforge_accept_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

const char* kPublishedV = "0.08*x1^2 - 0.06*x1*x2 + 0.76*x2^2";
const char* kPublishedS = "x3 + 0.66*x1 + 0.35*x2";

}  // namespace

TEST_CASE("criterion 1: SOS discrimination") {
  Criterion crit("criterion 1: SOS membership and rejection");
  auto vars = poly::IndeterminateSet::make({"x1", "x2"});
  conic::InteriorPointSolver solver;

  for (const char* text : {"(x1^2 + x2^2)^2", "(x1 - x2)^2"}) {
    const auto t0 = std::chrono::steady_clock::now();
    sosprog::SosProgram prog(vars);
    prog.add_sos_constraint(
        sosprog::ParametricPolynomial(parse_polynomial(text, vars)), text);
    auto res = sosprog::solve(prog, solver);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    crit.expect(res.status == conic::SolveStatus::optimal,
                std::string(text) + " accepted");
    if (res.status == conic::SolveStatus::optimal) {
      crit.expect(res.certificates[0].residual <= 1e-7,
                  std::string(text) + " residual " +
                      fmt("%.2e <= 1e-7", res.certificates[0].residual));
    }
    crit.expect(secs < 1.0, std::string(text) + fmt(" in %.3fs < 1s", secs));
  }

  const auto t0 = std::chrono::steady_clock::now();
  sosprog::SosProgram prog(vars);
  prog.add_sos_constraint(
      sosprog::ParametricPolynomial(parse_polynomial(
          "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", vars)),
      "motzkin");
  auto res = sosprog::solve(prog, solver);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  crit.expect(res.status == conic::SolveStatus::infeasible,
              "Motzkin polynomial reported infeasible");
  crit.expect(secs < 1.0, fmt("Motzkin in %.3fs < 1s", secs));
}

TEST_CASE("criterion 2: published certificate validation") {
  Criterion crit("criterion 2: published pair rate and sampled decrease");
  auto p = load_problem("example1.json");
  auto V = parse_polynomial(kPublishedV, p.system.vars);
  auto S = PolyVector({parse_polynomial(kPublishedS, p.system.vars)});

  auto mx = synthesis::maximize_rate_global(p.system, p.config, V, S,
                                            p.config.beta_lo);
  crit.expect(mx.outcome == synthesis::MaxOutcome::found,
              "rate search completed");
  crit.expect(mx.value >= 0.1, fmt("certified rate %.4f >= 0.1", mx.value));
  // Context: the level-set inflation value for the same pair.
  auto cont = synthesis::maximize_containment(
      V, parse_polynomial("x1^2 + x2^2 + x3^2", p.system.vars), p.config);
  std::printf("    info   containment level for the pair: %.4f\n", cont.value);

  // Sampled decrease along the reduced dynamics on {V <= 1, |z1| >= 1e-3}.
  smc::ControlLaw law;
  law.S = S;
  smc::SlidingDynamics sd(law, p.system);
  Rng rng(42);
  const double radius = 3.6;  // {V <= 1} fits inside this z1 box
  long tested = 0, violations = 0;
  while (tested < 100000) {
    Eigen::Vector2d z1(rng.uniform(-radius, radius),
                       rng.uniform(-radius, radius));
    Eigen::Vector3d probe(z1[0], z1[1], 0.0);
    if (V.evaluate(probe) > 1.0 || z1.norm() < 1e-3) continue;
    ++tested;
    auto full = sd.full_state(z1);
    const double vdot =
        V.differentiate(0).evaluate(full) * p.system.f1[0].evaluate(full) +
        V.differentiate(1).evaluate(full) * p.system.f1[1].evaluate(full);
    if (vdot >= 0.0) ++violations;
  }
  crit.expect(violations == 0,
              "0 decrease violations in 100000 samples (got " +
                  std::to_string(violations) + ")");
  crit.expect(crit.seconds() < 30.0,
              fmt("runtime %.1fs < 30s", crit.seconds()));
}

TEST_CASE("criterion 3: end-to-end synthesis on the benchmark plant") {
  Criterion crit("criterion 3: alternation reaches a positive rate");
  auto p = load_problem("example1.json");
  auto result = synthesis::synthesize_global(p.system, p.config);
  crit.expect(result.status == synthesis::SynthStatus::success,
              std::string("status ") + synthesis::to_string(result.status));
  crit.expect(result.objective > 0.0,
              fmt("objective %.4f > 0", result.objective));
  int iterations = 0;
  for (const auto& rec : result.log) iterations = rec.iteration;
  crit.expect(iterations <= 5, "terminated in " + std::to_string(iterations) +
                                   " iterations <= 5");
  if (result.status == synthesis::SynthStatus::success) {
    auto rep = synthesis::verify_result(p.system, result, 100000, 777);
    crit.expect(rep.ok() && rep.decrease_violations == 0,
                "certified decrease verified by sampling (" +
                    std::to_string(rep.decrease_tested) + " points)");
  }
  crit.expect(crit.seconds() < 300.0,
              fmt("runtime %.1fs < 300s", crit.seconds()));
}

TEST_CASE("criterion 4: closed-loop behavior") {
  Criterion crit("criterion 4: convergence, layer invariance, reaching");
  auto p = load_problem("example1.json");
  smc::ControlLaw law;
  law.S = PolyVector({parse_polynomial(kPublishedS, p.system.vars)});
  law.delta = 0.03;

  Eigen::Vector3d x0(1.0, -1.0, 0.5);
  auto run = sim::simulate(p.system, law, p.sim.perturbation, x0, 20.0, 1e-3);
  crit.expect(!run.diverged, "simulation completed");
  const double final_norm = run.trajectory.states.back().norm();
  crit.expect(final_norm <= 0.05, fmt("final norm %.4f <= 0.05", final_norm));
  auto metrics =
      sim::reaching_metrics(run.trajectory, law.delta, p.system.eta);
  crit.expect(metrics.t_reach.has_value(), "manifold reached");
  crit.expect(metrics.max_post_reach_excursion <= 2.0 * law.delta,
              fmt("post-reach excursion %.4f <= 0.06",
                  metrics.max_post_reach_excursion));

  sim::PerturbationModel worst;
  worst.kind = sim::PerturbationModel::Kind::worst_case_anti_sliding;
  auto adv = sim::simulate(p.system, law, worst, x0, 20.0, 1e-3);
  auto adv_metrics =
      sim::reaching_metrics(adv.trajectory, law.delta, p.system.eta);
  crit.expect(adv_metrics.violations == 0,
              "0 reaching violations under the worst-case perturbation (" +
                  std::to_string(adv_metrics.samples_outside_layer) +
                  " samples outside the layer)");
  crit.expect(crit.seconds() < 10.0,
              fmt("runtime %.1fs < 10s", crit.seconds()));
}

TEST_CASE("criterion 5: level maximization oracle") {
  Criterion crit("criterion 5: ball-in-ball level transfer");
  auto vars = poly::IndeterminateSet::make({"z1", "z2"});
  auto V = parse_polynomial("4*z1^2 + 4*z2^2", vars);
  auto shape = parse_polynomial("z1^2 + z2^2", vars);
  synthesis::SynthesisConfig cfg;
  auto mx = synthesis::maximize_containment(V, shape, cfg);
  crit.expect(mx.outcome == synthesis::MaxOutcome::found,
              "bisection completed");
  crit.expect(std::abs(mx.value - 0.25) <= 2e-3,
              fmt("level %.5f within 0.25 +- 2e-3", mx.value));
  crit.expect(crit.seconds() < 10.0,
              fmt("runtime %.1fs < 10s", crit.seconds()));
}

TEST_CASE("criterion 6: finite-time suite") {
  Criterion crit("criterion 6: terminal manifold rate, settling, bound");
  auto p = load_problem("finite_toy.json");
  auto result = synthesis::synthesize_finite_time(p.system, p.config, false);
  crit.expect(result.status == synthesis::SynthStatus::success,
              std::string("status ") + synthesis::to_string(result.status));
  crit.expect(result.objective >= 1.8 && result.objective <= 2.0,
              fmt("rate %.4f in [1.8, 2.0]", result.objective));

  // Reduced dynamics through the manifold solve: z1' = -cbrt(z1).
  auto law = problem::law_from_result(p, result);
  smc::SlidingDynamics sd(law, p.system);
  auto field = [&](double, const Eigen::VectorXd& z1) { return sd.field(z1); };
  Eigen::VectorXd one(1);
  one[0] = 1.0;
  auto flow = sim::simulate_field(field, one, 3.0, 1e-3);
  auto settle = sim::settling_time(flow.trajectory, 1e-3);
  crit.expect(settle.has_value(), "reduced flow settles");
  crit.expect(settle && *settle >= 1.49 && *settle <= 1.5,
              fmt("settling time %.4f in [1.49, 1.5]", settle ? *settle : -1));

  // Measured settling within the synthesized bound for sampled starts.
  Rng rng(606);
  int bound_ok = 0;
  const double alpha = result.alpha;
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd z0(1);
    z0[0] = rng.uniform(-1.0, 1.0);
    const double v0 = z0[0] * z0[0];
    const double bound = result.settling_coeff * std::pow(v0, 1.0 - alpha);
    auto traj =
        sim::simulate_field(field, z0, std::max(1.0, 2.0 * bound), 1e-3);
    auto t = sim::settling_time(traj.trajectory, 1e-3);
    if (t && *t <= bound) ++bound_ok;
  }
  crit.expect(bound_ok == 20, "measured settling within the bound for " +
                                  std::to_string(bound_ok) + "/20 starts");
  crit.expect(crit.seconds() < 60.0,
              fmt("runtime %.1fs < 60s", crit.seconds()));
}

TEST_CASE("criterion 7: numerical infrastructure") {
  Criterion crit("criterion 7: integrator order and polynomial properties");
  auto decay = [](double dt) {
    auto f = [](double, const Eigen::VectorXd& x) {
      return Eigen::VectorXd(-x);
    };
    Eigen::VectorXd one(1);
    one[0] = 1.0;
    return sim::simulate_field(f, one, 1.0, dt).trajectory.states.back()[0];
  };
  const double exact = std::exp(-1.0);
  const double ratio =
      std::abs(decay(0.1) - exact) / std::abs(decay(0.05) - exact);
  crit.expect(ratio >= 12.0 && ratio <= 20.0,
              fmt("step-halving error ratio %.2f in [12, 20]", ratio));

  // Randomized algebra properties at their stated tolerances.
  auto vars = poly::IndeterminateSet::make({"x1", "x2", "x3"});
  Rng rng(7777);
  auto random_poly = [&]() {
    Polynomial p = Polynomial::zero(vars);
    for (const auto& m : poly::monomials_up_to(vars, 4))
      if (rng.next_double() < 0.3)
        p += Polynomial::term(vars, m, rng.uniform(-2.0, 2.0));
    return p;
  };
  auto coeff_gap = [](const Polynomial& a, const Polynomial& b) {
    double w = 0.0;
    for (const auto& [m, c] : a.terms())
      w = std::max(w, std::abs(c - b.coeff(m)));
    for (const auto& [m, c] : b.terms())
      w = std::max(w, std::abs(c - a.coeff(m)));
    return w;
  };
  bool ring_ok = true, leibniz_ok = true, subst_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = random_poly(), b = random_poly(), c = random_poly();
    if (coeff_gap(a * (b + c), a * b + a * c) > 1e-12) ring_ok = false;
    const int var = trial % 3;
    if (coeff_gap((a * b).differentiate(var),
                  a * b.differentiate(var) + b * a.differentiate(var)) >
        1e-10)
      leibniz_ok = false;
    Polynomial e = Polynomial::zero(vars);
    for (int i = 0; i < 3; ++i)
      if (i != var)
        e += poly::Polynomial::variable(vars, i) * rng.uniform(-1.0, 1.0);
    std::vector<double> x{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                          rng.uniform(-1.0, 1.0)};
    std::vector<double> xs = x;
    xs[var] = e.evaluate(x);
    if (std::abs(a.substitute(var, e).evaluate(x) - a.evaluate(xs)) >
        1e-9 * (1.0 + std::abs(a.evaluate(xs))))
      subst_ok = false;
  }
  crit.expect(ring_ok, "distributivity over 1000 random triples");
  crit.expect(leibniz_ok, "product rule over 1000 random pairs");
  crit.expect(subst_ok, "substitution-evaluation consistency over 1000 trials");
}

TEST_CASE("criterion 8: determinism of the full pipeline") {
  Criterion crit("criterion 8: byte-identical artifacts across reruns");
  auto run_all = [&](const std::string& tag) {
    std::map<std::string, std::string> bytes;
    std::ostringstream diag;
    for (const char* prob_name : {"example1.json", "finite_toy.json"}) {
      auto p = load_problem(prob_name);
      problem::CommonOptions opt;
      opt.out_dir = fresh_dir(tag + "_" + p.name);
      opt.seed = 2026;
      opt.verify_samples = 20000;
      REQUIRE(problem::run_synth(p, opt, std::nullopt, diag) ==
              problem::kExitSuccess);
      const int sim_code = problem::run_sim(
          p, opt.out_dir + "/result.json", opt, std::nullopt,
          p.name == "finite_toy" ? std::optional<double>(3.0) : std::nullopt,
          diag);
      REQUIRE(sim_code == problem::kExitSuccess);
      for (const char* f : {"result.json", "verify.json", "trajectory.csv",
                            "states.csv", "control_sliding.csv"})
        bytes[p.name + "/" + f] = slurp(opt.out_dir + "/" + f);
    }
    return bytes;
  };
  auto a = run_all("runA");
  auto b = run_all("runB");
  REQUIRE(a.size() == b.size());
  bool all_equal = true;
  for (const auto& [name, content] : a) {
    if (b.at(name) != content) {
      all_equal = false;
      std::printf("    MISS   %s differs between runs\n", name.c_str());
    }
  }
  crit.expect(all_equal, "all " + std::to_string(a.size()) +
                             " artifacts byte-identical across reruns");
}
