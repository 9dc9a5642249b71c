#include <doctest.h>

#include <cmath>

#include "smcforge/synthesis.hpp"

using namespace smcforge;
using namespace smcforge::synthesis;
using poly::IndeterminateSet;
using poly::parse_polynomial;
using poly::Polynomial;
using poly::PolyVector;
using poly::VarsPtr;
using smc::RegularFormSystem;

namespace {

// Scalar sliding channel: z1' = f1(z), z2' = u.
RegularFormSystem toy_system(const std::string& f1_text) {
  RegularFormSystem sys;
  sys.n = 2;
  sys.m = 1;
  sys.vars = IndeterminateSet::make({"z1", "z2"});
  sys.f1 = PolyVector({parse_polynomial(f1_text, sys.vars)});
  sys.f2 = PolyVector({Polynomial::zero(sys.vars)});
  sys.L = poly::PolyMatrix(sys.vars, 1, 1);
  sys.L(0, 0) = Polynomial::constant(sys.vars, 1.0);
  sys.phi1 = Polynomial::constant(sys.vars, 0.5);
  sys.eta = 0.1;
  return sys;
}

Polynomial toy_s2(const VarsPtr& v) {
  return parse_polynomial("0.5*z1^2 + 0.5*z2^2", v);
}

PolyVector toy_q(const VarsPtr& v) {
  return PolyVector({parse_polynomial("z1 + z2", v)});
}

}  // namespace

TEST_SUITE("synthesis") {

TEST_CASE("even power floor construction") {
  auto v = IndeterminateSet::make({"z1", "z2"});
  auto l = even_power_floor(v, {0, 1}, Eigen::MatrixXd::Constant(2, 1, 1e-4));
  CHECK(l.coeff(poly::Monomial({2, 0})) == doctest::Approx(1e-4));
  CHECK(l.coeff(poly::Monomial({0, 2})) == doctest::Approx(1e-4));
  CHECK(l.terms().size() == 2);

  // Zero first column, quartic second: z1^4 only.
  auto v1 = IndeterminateSet::make({"z1"});
  Eigen::MatrixXd eps(1, 2);
  eps << 0.0, 1.0;
  auto l2 = even_power_floor(v1, {0}, eps);
  CHECK(l2.terms().size() == 1);
  CHECK(l2.coeff(poly::Monomial({4})) == doctest::Approx(1.0));

  // An all-zero row violates the positivity side condition.
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 1);
  bad(0, 0) = 1e-4;
  CHECK_THROWS_AS(even_power_floor(v, {0, 1}, bad), poly::StructuralError);

  auto v3 = IndeterminateSet::make({"z1", "z2", "z3"});
  auto l3 =
      even_power_floor(v3, {0, 1, 2}, Eigen::MatrixXd::Constant(3, 1, 1e-4));
  CHECK(l3.terms().size() == 3);
}

TEST_CASE("certificate step finds a quadratic certificate for a stable channel") {
  auto sys = toy_system("-z1");
  SynthesisConfig cfg;
  auto step = certificate_step_roa(sys, cfg, toy_s2(sys.vars), toy_q(sys.vars),
                                   -100.0);
  REQUIRE(step.status == conic::SolveStatus::optimal);
  // V is a one-variable quadratic with no admissible linear part.
  const double quad = step.V.coeff(poly::Monomial({2, 0}));
  const double lin = step.V.coeff(poly::Monomial({1, 0}));
  CHECK(quad >= 1e-4);
  CHECK(std::abs(lin) <= 1e-6 * (1.0 + quad));
  // Normalized manifold row: z2 + slope * z1.
  CHECK(step.S[0].coeff(poly::Monomial({0, 1})) == doctest::Approx(1.0));
}

TEST_CASE("certificate step rejects an uncontrollable unstable channel") {
  auto sys = toy_system("z1");
  SynthesisConfig cfg;
  auto step = certificate_step_roa(sys, cfg, toy_s2(sys.vars), toy_q(sys.vars),
                                   -100.0);
  CHECK(step.status == conic::SolveStatus::infeasible);
}

TEST_CASE("containment maximization matches the ball-in-ball oracle") {
  auto v = IndeterminateSet::make({"x1", "x2"});
  auto V = parse_polynomial("4*x1^2 + 4*x2^2", v);
  auto shape = parse_polynomial("x1^2 + x2^2", v);
  SynthesisConfig cfg;
  auto mx = maximize_containment(V, shape, cfg);
  REQUIRE(mx.outcome == MaxOutcome::found);
  CHECK(std::abs(mx.value - 0.25) <= 2e-3);

  // Identical sets: the level transfers exactly.
  auto mx2 = maximize_containment(shape, shape, cfg);
  REQUIRE(mx2.outcome == MaxOutcome::found);
  CHECK(std::abs(mx2.value - 1.0) <= 2e-3);
}

TEST_CASE("full level maximization with decrease constraints") {
  // Two sliding coordinates, one input; contraction in both z1 entries.
  RegularFormSystem sys;
  sys.n = 3;
  sys.m = 1;
  sys.vars = IndeterminateSet::make({"x1", "x2", "x3"});
  sys.f1 = PolyVector({parse_polynomial("-x1", sys.vars),
                       parse_polynomial("-x2", sys.vars)});
  sys.f2 = PolyVector({Polynomial::zero(sys.vars)});
  sys.L = poly::PolyMatrix(sys.vars, 1, 1);
  sys.L(0, 0) = Polynomial::constant(sys.vars, 1.0);
  sys.phi1 = Polynomial::constant(sys.vars, 0.5);

  auto V = parse_polynomial("4*x1^2 + 4*x2^2", sys.vars);
  auto S = PolyVector({parse_polynomial("x3", sys.vars)});
  SynthesisConfig cfg;
  auto mx = maximize_beta(sys, cfg, V, S, -100.0);
  REQUIRE(mx.outcome == MaxOutcome::found);
  CHECK(std::abs(mx.value - 0.25) <= 2e-3);
  CHECK(mx.multipliers.count("s2"));
  CHECK(mx.multipliers.count("s3"));
}

TEST_CASE("roa synthesis succeeds on the stable channel") {
  auto sys = toy_system("-z1");
  SynthesisConfig cfg;
  auto res = synthesize_roa(sys, cfg);
  REQUIRE(res.status == SynthStatus::success);
  CHECK(res.objective > 0.0);
  CHECK(res.log.size() >= 2);
  CHECK(!res.certificates.empty());
  for (const auto& c : res.certificates) {
    CHECK(c.residual <= 1e-6);
  }
  // Accepted levels never regress across iterations.
  double prev = -std::numeric_limits<double>::infinity();
  for (const auto& rec : res.log) {
    if (rec.phase != "maximize" || rec.outcome != "found") continue;
    CHECK(rec.objective >= prev - cfg.beta_tol);
    prev = rec.objective;
  }
}

TEST_CASE("roa synthesis reports infeasible-from-init on the unstable channel") {
  auto sys = toy_system("z1");
  SynthesisConfig cfg;
  auto res = synthesize_roa(sys, cfg);
  CHECK(res.status == SynthStatus::infeasible_from_init);
}

TEST_CASE("global synthesis certifies the exact contraction rate") {
  auto sys = toy_system("-z1");
  SynthesisConfig cfg;
  auto res = synthesize_global(sys, cfg);
  REQUIRE(res.status == SynthStatus::success);
  CHECK(std::abs(res.objective - 2.0) <= 5e-3);
}

TEST_CASE("global synthesis reports the vanishing-rate edge case distinctly") {
  auto sys = toy_system("-z1^3");
  SynthesisConfig cfg;
  auto res = synthesize_global(sys, cfg);
  CHECK(res.status == SynthStatus::zero_rate);
  CHECK(std::abs(res.objective) <= cfg.beta_tol);
}

TEST_CASE("global synthesis does not certify an unstable channel") {
  auto sys = toy_system("z1");
  SynthesisConfig cfg;
  cfg.max_iter = 4;
  auto res = synthesize_global(sys, cfg);
  CHECK(res.status != SynthStatus::success);
}

TEST_CASE("finite-time rate maximization on the cubic-manifold toy") {
  auto sys = toy_system("z2");
  SynthesisConfig cfg;
  cfg.w = PolyVector({parse_polynomial("z1", sys.vars)});
  cfg.p_exp = 2;
  cfg.r_exp = 3;
  cfg.deg_q = 3;
  cfg.deg_K = 2;
  auto ext = slack_extended_vars(sys);
  auto S = PolyVector({parse_polynomial("z2^3 + z1", ext)});
  Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(1, 1);
  auto mx = maximize_rate_finite(sys, cfg, Q, S, 0.0, false);
  REQUIRE(mx.outcome == MaxOutcome::found);
  // On the manifold variety the decrease is exactly -2M, so the supremum is 2.
  CHECK(mx.value >= 1.8);
  CHECK(mx.value <= 2.0);
}

TEST_CASE("finite-time synthesis with a fixed manifold") {
  auto sys = toy_system("z2");
  SynthesisConfig cfg;
  cfg.w = PolyVector({parse_polynomial("z1", sys.vars)});
  cfg.p_exp = 2;
  cfg.r_exp = 3;
  cfg.deg_q = 3;
  cfg.deg_K = 2;
  auto ext = slack_extended_vars(sys);
  cfg.fixed_S = PolyVector({parse_polynomial("z2^3 + z1", ext)});
  auto res = synthesize_finite_time(sys, cfg, false);
  REQUIRE(res.status == SynthStatus::success);
  CHECK(res.objective > 0.0);
  CHECK(res.alpha == doctest::Approx(2.0 / 3.0));
  // Q is trace-normalized, so the 1x1 case pins Q = 1 and the settling
  // coefficient reduces to 1 / (c (1 - alpha)).
  CHECK(res.Q(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.settling_coeff ==
        doctest::Approx(1.0 / (res.objective * (1.0 / 3.0))).epsilon(1e-9));
}

TEST_CASE("finite-time config rejects non-contracting exponents") {
  auto sys = toy_system("z2");
  SynthesisConfig cfg;
  cfg.p_exp = 2;
  cfg.r_exp = 2;
  CHECK_THROWS_AS(synthesize_finite_time(sys, cfg, false),
                  poly::StructuralError);
}

TEST_CASE("finite-time rate search rejects an unstable channel") {
  auto sys = toy_system("z1");
  SynthesisConfig cfg;
  cfg.w = PolyVector({parse_polynomial("z1", sys.vars)});
  auto ext = slack_extended_vars(sys);
  auto S = PolyVector({parse_polynomial("z2^3 + z1", ext)});
  Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(1, 1);
  auto mx = maximize_rate_finite(sys, cfg, Q, S, 0.0, false);
  CHECK(mx.outcome == MaxOutcome::infeasible_at_lo);
}

TEST_CASE("indefinite shape polynomials are rejected") {
  auto sys = toy_system("-z1");
  SynthesisConfig cfg;
  cfg.shape = parse_polynomial("z1^2 - z2^2", sys.vars);
  CHECK_THROWS_AS(synthesize_roa(sys, cfg), poly::StructuralError);
}

TEST_CASE("verification accepts a clean result and flags a corrupted one") {
  auto sys = toy_system("-z1");
  SynthesisConfig cfg;
  auto res = synthesize_global(sys, cfg);
  REQUIRE(res.status == SynthStatus::success);

  auto report = verify_result(sys, res, 20000, 12345);
  CHECK(report.ok());
  CHECK(report.decrease_tested > 1000);
  CHECK(report.decrease_violations == 0);
  CHECK(report.rate_violations == 0);
  CHECK(report.certificate_failures == 0);

  // Flip the sign of the Lyapunov function: every layer must object.
  auto corrupted = res;
  corrupted.V = -res.V;
  auto bad = verify_result(sys, corrupted, 20000, 12345);
  CHECK(!bad.ok());
  CHECK(bad.certificate_failures > 0);
  CHECK(bad.decrease_violations + bad.rate_violations > 0);
}

TEST_CASE("result serialization round-trips") {
  auto sys = toy_system("-z1");
  SynthesisConfig cfg;
  auto res = synthesize_global(sys, cfg);
  REQUIRE(res.status == SynthStatus::success);

  const std::string text = result_to_json(res);
  CHECK(text == result_to_json(res));
  auto back = result_from_json(text);
  CHECK(back.status == res.status);
  CHECK(back.mode == res.mode);
  CHECK(back.objective == doctest::Approx(res.objective).epsilon(1e-15));
  CHECK(poly::to_string(back.V) == poly::to_string(res.V));
  CHECK(back.certificates.size() == res.certificates.size());
  CHECK(result_to_json(back) == text);

  // A round-tripped result still verifies.
  auto report = verify_result(sys, back, 5000, 7);
  CHECK(report.ok());
}

}  // TEST_SUITE
