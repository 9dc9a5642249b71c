#include <doctest.h>

#include <cmath>

#include "smcforge/rng.hpp"
#include "smcforge/smc.hpp"
#include "test_systems.hpp"

using namespace smcforge;
using namespace smcforge::smc;
using poly::IndeterminateSet;
using poly::parse_polynomial;
using poly::Polynomial;
using poly::PolyVector;

namespace {

Eigen::Vector3d v3(double a, double b, double c) {
  return Eigen::Vector3d(a, b, c);
}

}  // namespace

TEST_SUITE("smc") {

TEST_CASE("system validation catches malformed plants") {
  auto sys = testsys::example1();
  CHECK_NOTHROW(sys.validate());

  auto bad = sys;
  bad.f1 = PolyVector({parse_polynomial("x3 - 2*x1 + 1", sys.vars),
                       parse_polynomial("x3", sys.vars)});
  CHECK_THROWS_AS(bad.validate(), poly::StructuralError);  // f1(0) != 0

  auto wrong_dims = sys;
  wrong_dims.f2 = PolyVector({Polynomial::zero(sys.vars),
                              Polynomial::zero(sys.vars)});
  CHECK_THROWS_AS(wrong_dims.validate(), poly::StructuralError);
}

TEST_CASE("equivalent control hand values") {
  auto sys = testsys::example1();
  auto law = testsys::example1_law(sys);

  CHECK(equivalent_control(law, sys, v3(0, 0, 0)).norm() == 0.0);

  // At (1,1,0): x1dot = -5, x2dot = -2, so u_eq = 0.66*5 + 0.35*2 = 4.
  auto u = equivalent_control(law, sys, v3(1, 1, 0));
  CHECK(u[0] == doctest::Approx(4.0).epsilon(1e-12));

  auto toy = testsys::cubic_toy();
  auto toy_law = testsys::cubic_toy_law(toy);
  Eigen::Vector2d z(1.0, -1.0);
  auto ut = equivalent_control(toy_law, toy, z);
  CHECK(ut[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("equivalent control reports near-singular decoupling") {
  auto toy = testsys::cubic_toy();
  auto law = testsys::cubic_toy_law(toy);
  Eigen::Vector2d z(1.0, 0.0);  // dS/dz2 = 3 z2^2 vanishes
  CHECK_THROWS_AS(equivalent_control(law, toy, z), SingularJacobianError);
}

TEST_CASE("switching gain hand values") {
  auto sys = testsys::example1();
  auto law = testsys::example1_law(sys);
  CHECK(switching_gain(law, sys, v3(1, 1, 0)) ==
        doctest::Approx(0.6).epsilon(1e-12));

  auto unperturbed = sys;
  unperturbed.phi1 = Polynomial::zero(sys.vars);
  CHECK(switching_gain(law, unperturbed, v3(1, 1, 0)) ==
        doctest::Approx(0.1).epsilon(1e-12));

  auto toy = testsys::cubic_toy();
  auto toy_law = testsys::cubic_toy_law(toy);
  Eigen::Vector2d z(0.0, -1.0);
  CHECK(switching_gain(toy_law, toy, z) ==
        doctest::Approx(1.6).epsilon(1e-12));
}

TEST_CASE("control law composition") {
  auto sys = testsys::example1();
  auto law = testsys::example1_law(sys);

  // On the manifold the switching term vanishes exactly.
  Eigen::Vector3d on(0.5, -0.2, -0.66 * 0.5 + 0.35 * 0.2);
  auto u_on = control(law, sys, on, 0.0);
  auto ueq_on = equivalent_control(law, sys, on);
  CHECK(std::abs(u_on[0] - ueq_on[0]) < 1e-12);

  // Far outside the layer: u = -rho sign(S) + u_eq = -0.6 + 4.0.
  auto u = control(law, sys, v3(1, 1, 0), 0.0);
  CHECK(u[0] == doctest::Approx(3.4).epsilon(1e-12));

  // Inside the layer the switching term scales linearly.
  Eigen::Vector3d near(0.0, 0.0, 0.015);
  auto u_near = control(law, sys, near, 0.0);
  auto ueq_near = equivalent_control(law, sys, near);
  const double rho = switching_gain(law, sys, near);
  CHECK(u_near[0] == doctest::Approx(ueq_near[0] - rho * 0.5).epsilon(1e-9));
}

TEST_CASE("a degenerate boundary layer is rejected") {
  auto sys = testsys::example1();
  auto law = testsys::example1_law(sys);
  law.delta = 0.0;
  CHECK_THROWS_AS(control(law, sys, Eigen::Vector3d(1, 1, 0), 0.0),
                  poly::StructuralError);
}

TEST_CASE("sliding dynamics: affine solve matches the manifold") {
  auto sys = testsys::example1();
  auto law = testsys::example1_law(sys);
  SlidingDynamics sd(law, sys);
  Rng rng(55);
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector2d z1(rng.uniform(-2, 2), rng.uniform(-2, 2));
    auto z2 = sd.solve_z2(z1);
    CHECK(z2[0] == doctest::Approx(-0.66 * z1[0] - 0.35 * z1[1])
                       .epsilon(1e-12));
    auto full = sd.full_state(z1);
    CHECK(std::abs(manifold_value(law, sys, full)[0]) < 1e-9);
  }
}

TEST_CASE("sliding dynamics: odd-power scalar solve") {
  auto toy = testsys::cubic_toy();
  auto law = testsys::cubic_toy_law(toy);
  SlidingDynamics sd(law, toy);
  Eigen::VectorXd z1(1);
  z1[0] = 1.0;
  CHECK(sd.solve_z2(z1)[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(sd.field(z1)[0] == doctest::Approx(-1.0).epsilon(1e-9));
  z1[0] = 0.125;
  CHECK(sd.field(z1)[0] == doctest::Approx(-0.5).epsilon(1e-7));
}

TEST_CASE("sliding dynamics: ambiguous and rootless manifolds are reported") {
  auto toy = testsys::cubic_toy();
  smc::ControlLaw law;
  law.S = PolyVector({parse_polynomial("z2^2 - z1", toy.vars)});
  SlidingDynamics sd(law, toy);
  Eigen::VectorXd z1(1);
  z1[0] = 1.0;  // two real roots
  CHECK_THROWS_AS(sd.solve_z2(z1), UnsolvableManifold);
  z1[0] = -1.0;  // no real root
  CHECK_THROWS_AS(sd.solve_z2(z1), UnsolvableManifold);
}

TEST_CASE("equivalent control keeps the manifold invariant") {
  auto sys = testsys::example1();
  auto law = testsys::example1_law(sys);
  SlidingDynamics sd(law, sys);
  Rng rng(77);
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector2d z1(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    auto state = sd.full_state(z1);
    auto ueq = equivalent_control(law, sys, state);
    auto sdot = manifold_derivative(law, sys, state, ueq,
                                    Eigen::VectorXd::Zero(sys.m));
    CHECK(std::abs(sdot[0]) < 1e-9);
  }
}

TEST_CASE("reaching condition under worst-case matched perturbation") {
  auto sys = testsys::example1();
  auto law = testsys::example1_law(sys);
  Rng rng(88);
  long checked = 0;
  for (int i = 0; i < 3000 && checked < 1000; ++i) {
    Eigen::Vector3d z(rng.uniform(-2, 2), rng.uniform(-2, 2),
                      rng.uniform(-2, 2));
    auto s = manifold_value(law, sys, z);
    if (s.norm() <= law.delta) continue;
    ++checked;
    auto u = control(law, sys, z, 0.0);
    const Eigen::VectorXd aug = law.augment(z);
    // Adversarial matched disturbance at the bound, aligned against -S.
    Eigen::VectorXd xi = -sys.phi1.evaluate(aug) * s / s.norm();
    auto sdot = manifold_derivative(law, sys, z, u, xi);
    CHECK(s.dot(sdot) <= -sys.eta * s.norm() + 1e-9);
  }
  CHECK(checked == 1000);
}

TEST_CASE("slack-bearing manifolds evaluate through the recast definition") {
  auto toy = testsys::cubic_toy();
  auto ext = IndeterminateSet::make({"z1", "z2", "M"}, 2);
  smc::ControlLaw law;
  law.S = PolyVector({parse_polynomial("z2 + M", ext)});
  law.slack = SlackDef{PolyVector({parse_polynomial("z1", ext)}), 2, 3};

  // M = (z1^2)^(2/3) = 16 at z1 = 8.
  Eigen::Vector2d z(8.0, 1.0);
  CHECK(manifold_value(law, toy, z)[0] == doctest::Approx(17.0).epsilon(1e-12));

  // dS/dz1 runs through dM/dz1 = (4/3) z1^(1/3) = 8/3, and f1 = z2.
  auto ueq = equivalent_control(law, toy, z);
  CHECK(ueq[0] == doctest::Approx(-8.0 / 3.0).epsilon(1e-9));

  // The gradient is clamped at the fractional-power singularity.
  Eigen::Vector2d origin(0.0, 1.0);
  CHECK_NOTHROW(equivalent_control(law, toy, origin));
}

}  // TEST_SUITE
