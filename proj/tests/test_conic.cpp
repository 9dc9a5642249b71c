#include <doctest.h>

#include <cmath>

#include "smcforge/conic.hpp"
#include "smcforge/rng.hpp"

using namespace smcforge;
using namespace smcforge::conic;

namespace {

// Pins X_ij = rhs; off-diagonal coefficients are halved because a
// symmetric entry contributes twice to the trace inner product.
ConstraintRow entry_row(int block, int i, int j, double rhs) {
  ConstraintRow r;
  r.matrix_terms.push_back({block, i, j, i == j ? 1.0 : 0.5});
  r.rhs = rhs;
  return r;
}

}  // namespace

TEST_SUITE("conic") {

TEST_CASE("pinned feasible 2x2 block") {
  ConicProblem prob;
  prob.block_dims = {2};
  prob.rows.push_back(entry_row(0, 0, 0, 1.0));
  prob.rows.push_back(entry_row(0, 1, 1, 1.0));
  prob.rows.push_back(entry_row(0, 1, 0, 0.6));

  InteriorPointSolver solver;
  auto sol = solver.solve(prob);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.blocks[0](0, 0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(sol.blocks[0](1, 0) == doctest::Approx(0.6).epsilon(1e-7));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sol.blocks[0]);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-9);
}

TEST_CASE("pinned infeasible 2x2 block") {
  ConicProblem prob;
  prob.block_dims = {2};
  prob.rows.push_back(entry_row(0, 0, 0, 1.0));
  prob.rows.push_back(entry_row(0, 1, 1, 1.0));
  prob.rows.push_back(entry_row(0, 1, 0, 1.2));  // |X12| > 1 forces indefinite

  InteriorPointSolver solver;
  auto sol = solver.solve(prob);
  CHECK(sol.status == SolveStatus::infeasible);
}

TEST_CASE("negative scalar block is infeasible") {
  ConicProblem prob;
  prob.block_dims = {1};
  prob.rows.push_back(entry_row(0, 0, 0, -1.0));
  auto sol = InteriorPointSolver().solve(prob);
  CHECK(sol.status == SolveStatus::infeasible);
}

TEST_CASE("correlation-style maximization hits the PSD boundary") {
  // maximize t with X11 = X22 = 1, X12 = t: optimum t = 1.
  ConicProblem prob;
  prob.block_dims = {2};
  prob.num_free = 1;
  prob.objective_free = {1.0};
  prob.rows.push_back(entry_row(0, 0, 0, 1.0));
  prob.rows.push_back(entry_row(0, 1, 1, 1.0));
  ConstraintRow link;
  link.matrix_terms.push_back({0, 1, 0, 0.5});
  link.free_terms.push_back({0, -1.0});
  prob.rows.push_back(link);

  auto sol = InteriorPointSolver().solve(prob);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.free_values[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("unbounded objective through the cone") {
  // maximize t with X11 - t = 0: t can grow without bound.
  ConicProblem prob;
  prob.block_dims = {1};
  prob.num_free = 1;
  prob.objective_free = {1.0};
  ConstraintRow link;
  link.matrix_terms.push_back({0, 0, 0, 1.0});
  link.free_terms.push_back({0, -1.0});
  prob.rows.push_back(link);

  auto sol = InteriorPointSolver().solve(prob);
  CHECK(sol.status == SolveStatus::unbounded);
}

TEST_CASE("unconstrained objective parameter is flagged unbounded") {
  ConicProblem prob;
  prob.block_dims = {1};
  prob.num_free = 2;
  prob.objective_free = {0.0, 1.0};
  ConstraintRow r;  // only touches the first parameter
  r.free_terms.push_back({0, 1.0});
  r.rhs = 1.0;
  prob.rows.push_back(r);
  prob.rows.push_back(entry_row(0, 0, 0, 1.0));

  auto sol = InteriorPointSolver().solve(prob);
  CHECK(sol.status == SolveStatus::unbounded);
}

TEST_CASE("free variable recovery") {
  ConicProblem prob;
  prob.block_dims = {1};
  prob.num_free = 2;
  ConstraintRow r1;  // X11 - t0 = 0
  r1.matrix_terms.push_back({0, 0, 0, 1.0});
  r1.free_terms.push_back({0, -1.0});
  prob.rows.push_back(r1);
  ConstraintRow r2;  // t0 + t1 = 3
  r2.free_terms.push_back({0, 1.0});
  r2.free_terms.push_back({1, 1.0});
  r2.rhs = 3.0;
  prob.rows.push_back(r2);
  prob.rows.push_back(entry_row(0, 0, 0, 2.0));  // X11 = 2

  auto sol = InteriorPointSolver().solve(prob);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.free_values[0] == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(sol.free_values[1] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("boundary optimum with slack block") {
  // maximize t with t + X11 = 1: optimum t = 1 at X11 = 0.
  ConicProblem prob;
  prob.block_dims = {1};
  prob.num_free = 1;
  prob.objective_free = {1.0};
  ConstraintRow r;
  r.free_terms.push_back({0, 1.0});
  r.matrix_terms.push_back({0, 0, 0, 1.0});
  r.rhs = 1.0;
  prob.rows.push_back(r);

  auto sol = InteriorPointSolver().solve(prob);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.free_values[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("random feasible systems solve to tight residuals") {
  Rng rng(4242);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng.next_below(3));
    Eigen::MatrixXd G(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) G(i, j) = rng.uniform(-1.0, 1.0);
    Eigen::MatrixXd X0 = G * G.transpose() + Eigen::MatrixXd::Identity(n, n);

    ConicProblem prob;
    prob.block_dims = {n};
    const int L = n;
    std::vector<Eigen::MatrixXd> As;
    for (int l = 0; l < L; ++l) {
      Eigen::MatrixXd A(n, n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
          A(i, j) = rng.uniform(-1.0, 1.0);
          A(j, i) = A(i, j);
        }
      As.push_back(A);
      ConstraintRow row;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j)
          row.matrix_terms.push_back({0, i, j, A(i, j)});
      row.rhs = (A * X0).trace();
      prob.rows.push_back(row);
    }

    auto sol = InteriorPointSolver().solve(prob);
    REQUIRE(sol.status == SolveStatus::optimal);
    for (int l = 0; l < L; ++l) {
      const double got = (As[l] * sol.blocks[0]).trace();
      CHECK(got == doctest::Approx(prob.rows[l].rhs).epsilon(1e-6));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sol.blocks[0]);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("deterministic resolve") {
  ConicProblem prob;
  prob.block_dims = {2};
  prob.rows.push_back(entry_row(0, 0, 0, 2.0));
  prob.rows.push_back(entry_row(0, 1, 1, 3.0));
  prob.rows.push_back(entry_row(0, 1, 0, 0.5));
  CHECK(prob.serialize() == prob.serialize());

  auto s1 = InteriorPointSolver().solve(prob);
  auto s2 = InteriorPointSolver().solve(prob);
  REQUIRE(s1.status == SolveStatus::optimal);
  CHECK(s1.iterations == s2.iterations);
  CHECK((s1.blocks[0] - s2.blocks[0]).norm() == 0.0);
}

}  // TEST_SUITE
