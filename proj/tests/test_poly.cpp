#include <doctest.h>

#include <cmath>

#include "smcforge/poly.hpp"
#include "smcforge/rng.hpp"

using namespace smcforge;
using namespace smcforge::poly;

namespace {

VarsPtr vars2() { return IndeterminateSet::make({"x1", "x2"}); }
VarsPtr vars3() { return IndeterminateSet::make({"x1", "x2", "x3"}); }

Polynomial random_poly(Rng& rng, const VarsPtr& vars, int max_deg) {
  auto monos = monomials_up_to(vars, max_deg);
  Polynomial p = Polynomial::zero(vars);
  for (const auto& m : monos) {
    if (rng.next_double() < 0.4)
      p += Polynomial::term(vars, m, rng.uniform(-2.0, 2.0));
  }
  return p;
}

double max_coeff_diff(const Polynomial& a, const Polynomial& b) {
  double worst = 0.0;
  for (const auto& [m, c] : a.terms())
    worst = std::max(worst, std::abs(c - b.coeff(m)));
  for (const auto& [m, c] : b.terms())
    worst = std::max(worst, std::abs(c - a.coeff(m)));
  return worst;
}

}  // namespace

TEST_SUITE("poly") {

TEST_CASE("difference of squares") {
  auto v = vars2();
  auto x1 = Polynomial::variable(v, 0), x2 = Polynomial::variable(v, 1);
  auto p = (x1 + x2) * (x1 - x2);
  auto expect = x1 * x1 - x2 * x2;
  CHECK(max_coeff_diff(p, expect) == 0.0);
  CHECK(p.degree() == 2);
}

TEST_CASE("additive identity and term deletion") {
  auto v = vars2();
  auto p = parse_polynomial("0.08*x1^2 - 0.06*x1*x2 + 0.76*x2^2", v);
  CHECK(max_coeff_diff(p + Polynomial::zero(v), p) == 0.0);
  auto q = p - parse_polynomial("0.08*x1^2", v);
  CHECK(q.terms().size() == 2);
  CHECK(q.coeff(Monomial({1, 1})) == doctest::Approx(-0.06));
  CHECK(q.coeff(Monomial({0, 2})) == doctest::Approx(0.76));
}

TEST_CASE("mismatched indeterminate sets rejected") {
  auto a = Polynomial::variable(vars2(), 0);
  auto b = Polynomial::variable(vars3(), 0);
  CHECK_THROWS_AS(a + b, StructuralError);
}

TEST_CASE("partial derivatives") {
  auto v = vars3();
  auto x1 = Polynomial::variable(v, 0), x2 = Polynomial::variable(v, 1);
  auto p = x1 * x1 * x2;
  auto d = p.differentiate(0);
  CHECK(max_coeff_diff(d, x1 * x2 * 2.0) == 0.0);

  auto q = x1 * x1 + x2 * x2;
  CHECK(q.differentiate(2).is_zero());

  auto reference_v = parse_polynomial("0.08*x1^2 - 0.06*x1*x2 + 0.76*x2^2", v);
  // Hand differentiation: 0.16*x1 - 0.06*x2.
  auto dv = reference_v.differentiate(0);
  CHECK(max_coeff_diff(dv, parse_polynomial("0.16*x1 - 0.06*x2", v)) < 1e-15);
}

TEST_CASE("evaluation") {
  auto v = vars2();
  auto p = parse_polynomial("x1^2 + x2^2", v);
  CHECK(p.evaluate(std::vector<double>{3.0, 4.0}) == 25.0);
  // Benchmark Lyapunov candidate at (1,1): 0.08 - 0.06 + 0.76.
  auto pv = parse_polynomial("0.08*x1^2 - 0.06*x1*x2 + 0.76*x2^2", v);
  CHECK(pv.evaluate(std::vector<double>{1.0, 1.0}) == doctest::Approx(0.78));
  // Any polynomial at the origin yields the constant term.
  auto q = parse_polynomial("3.5 + x1 + 2*x1*x2^3", v);
  CHECK(q.evaluate(std::vector<double>{0.0, 0.0}) == 3.5);
  CHECK_THROWS_AS(p.evaluate(std::vector<double>{1.0}), StructuralError);
}

TEST_CASE("substitution") {
  auto v = vars3();
  // Manifold restriction annihilates the manifold polynomial.
  auto s = parse_polynomial("x3 + 0.66*x1 + 0.35*x2", v);
  auto repl = parse_polynomial("-0.66*x1 - 0.35*x2", v);
  CHECK(s.substitute(2, repl).is_zero());

  auto p = parse_polynomial("x1*x2 + x1", v);
  CHECK(max_coeff_diff(p.substitute(1, Polynomial::zero(v)),
                       Polynomial::variable(v, 0)) == 0.0);

  // Slack-style substitution z2 := -M into z2^3 + z1.
  auto vm = IndeterminateSet::make({"z1", "z2", "M"}, 2);
  auto q = parse_polynomial("z2^3 + z1", vm);
  auto r = q.substitute(1, parse_polynomial("-M", vm));
  CHECK(max_coeff_diff(r, parse_polynomial("z1 - M^3", vm)) == 0.0);

  // Self-referencing substitution is rejected.
  auto x1 = Polynomial::variable(v, 0);
  CHECK_THROWS_AS(x1.substitute(0, x1 + x1), StructuralError);
}

TEST_CASE("monomial enumeration counts and order") {
  auto v2 = vars2();
  auto m1 = monomials_up_to(v2, 1);
  REQUIRE(m1.size() == 3);
  CHECK(m1[0].is_constant());
  CHECK(m1[1] == Monomial({1, 0}));
  CHECK(m1[2] == Monomial({0, 1}));
  CHECK(monomials_up_to(v2, 2).size() == 6);
  CHECK(monomials_up_to(vars3(), 2).size() == 10);

  auto m2 = monomials_up_to(v2, 2);
  CHECK(m2[3] == Monomial({2, 0}));
  CHECK(m2[4] == Monomial({1, 1}));
  CHECK(m2[5] == Monomial({0, 2}));
}

TEST_CASE("graded-lex order is deterministic across runs") {
  auto v = vars3();
  auto a = monomials_up_to(v, 4);
  auto b = monomials_up_to(v, 4);
  REQUIRE(a.size() == b.size());
  std::string sa, sb;
  for (const auto& m : a) sa += to_string(m, *v) + ";";
  for (const auto& m : b) sb += to_string(m, *v) + ";";
  CHECK(sa == sb);
}

TEST_CASE("ring axioms on random polynomials") {
  Rng rng(7001);
  for (int trial = 0; trial < 1000; ++trial) {
    auto v = IndeterminateSet::make(
        trial % 2 ? std::vector<std::string>{"x1", "x2", "x3", "x4"}
                  : std::vector<std::string>{"x1", "x2"});
    auto a = random_poly(rng, v, 4);
    auto b = random_poly(rng, v, 4);
    auto c = random_poly(rng, v, 4);
    auto lhs = a * (b + c);
    auto rhs = a * b + a * c;
    CHECK(max_coeff_diff(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("product rule on random polynomials") {
  Rng rng(7002);
  for (int trial = 0; trial < 1000; ++trial) {
    auto v = vars2();
    auto p = random_poly(rng, v, 4);
    auto q = random_poly(rng, v, 4);
    const int var = trial % 2;
    auto lhs = (p * q).differentiate(var);
    auto rhs = p * q.differentiate(var) + q * p.differentiate(var);
    CHECK(max_coeff_diff(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("substitute-evaluate consistency") {
  Rng rng(7003);
  for (int trial = 0; trial < 1000; ++trial) {
    auto v = vars3();
    auto p = random_poly(rng, v, 3);
    const int var = static_cast<int>(rng.next_below(3));
    // Expression over the remaining variables.
    Polynomial e = Polynomial::zero(v);
    for (int i = 0; i < 3; ++i) {
      if (i == var) continue;
      e += Polynomial::variable(v, i) * rng.uniform(-1.0, 1.0);
    }
    e += Polynomial::constant(v, rng.uniform(-1.0, 1.0));
    std::vector<double> x{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                          rng.uniform(-1.5, 1.5)};
    auto sub = p.substitute(var, e);
    std::vector<double> x2 = x;
    x2[var] = e.evaluate(x);
    CHECK(sub.evaluate(x) == doctest::Approx(p.evaluate(x2)).epsilon(1e-9));
  }
}

TEST_CASE("print/parse round trip is stable") {
  Rng rng(7004);
  for (int trial = 0; trial < 200; ++trial) {
    auto v = vars3();
    auto p = random_poly(rng, v, 4);
    auto s1 = to_string(p);
    auto q = parse_polynomial(s1, v);
    auto s2 = to_string(q);
    CHECK(s1 == s2);
    CHECK(max_coeff_diff(p, q) == 0.0);
  }
  CHECK(to_string(Polynomial::zero(vars2())) == "0");
}

TEST_CASE("parser handles parentheses and reports unknown symbols") {
  auto v = vars3();
  auto p = parse_polynomial("x3 - x2*(x1^2 + x2^4)", v);
  auto q = parse_polynomial("x3 - x2*x1^2 - x2^5", v);
  CHECK(max_coeff_diff(p, q) == 0.0);
  CHECK_THROWS_WITH_AS(parse_polynomial("x1 + y7", v),
                       doctest::Contains("y7"), ParseError);
}

TEST_CASE("slack flag is carried by the indeterminate set") {
  auto v = IndeterminateSet::make({"z1", "z2", "M"}, 2);
  CHECK(v->is_slack(2));
  CHECK(!v->is_slack(0));
  CHECK(v->slack_index() == 2);
}

}  // TEST_SUITE
