#include "smcforge/conic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>

namespace smcforge::conic {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

// Packed symmetric (svec) layout per block, off-diagonals scaled by sqrt(2)
// so that svec(A).svec(B) equals the trace inner product.
struct BlockLayout {
  std::vector<int> dims;
  std::vector<int> offsets;
  int total = 0;

  explicit BlockLayout(const std::vector<int>& block_dims) : dims(block_dims) {
    offsets.reserve(dims.size());
    for (int n : dims) {
      offsets.push_back(total);
      total += n * (n + 1) / 2;
    }
  }
  int index(int block, int i, int j) const {  // i >= j
    const int n = dims[block];
    return offsets[block] + j * n - j * (j - 1) / 2 + (i - j);
  }
};

Eigen::MatrixXd unpack(const BlockLayout& lay, const Eigen::VectorXd& v,
                       int block) {
  const int n = lay.dims[block];
  Eigen::MatrixXd m(n, n);
  int idx = lay.offsets[block];
  for (int j = 0; j < n; ++j) {
    m(j, j) = v[idx++];
    for (int i = j + 1; i < n; ++i) {
      const double val = v[idx++] / kSqrt2;
      m(i, j) = val;
      m(j, i) = val;
    }
  }
  return m;
}

void pack(const BlockLayout& lay, const Eigen::MatrixXd& m, int block,
          Eigen::VectorXd& v) {
  const int n = lay.dims[block];
  int idx = lay.offsets[block];
  for (int j = 0; j < n; ++j) {
    v[idx++] = m(j, j);
    for (int i = j + 1; i < n; ++i) v[idx++] = kSqrt2 * 0.5 * (m(i, j) + m(j, i));
  }
}

Eigen::VectorXd svec_identity(const BlockLayout& lay) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(lay.total);
  for (size_t b = 0; b < lay.dims.size(); ++b)
    for (int j = 0; j < lay.dims[b]; ++j) v[lay.index(int(b), j, j)] = 1.0;
  return v;
}

struct NtScaling {
  std::vector<Eigen::MatrixXd> R, Rinv, W;
  std::vector<Eigen::VectorXd> lambda;
};

// Nesterov-Todd scaling point per block: W Z W = X with W = R R^T, and the
// common scaled point Rinv X Rinv^T = R^T Z R = diag(lambda).
bool compute_nt(const BlockLayout& lay, const Eigen::VectorXd& x,
                const Eigen::VectorXd& z, NtScaling& nt) {
  const size_t nb = lay.dims.size();
  nt.R.resize(nb);
  nt.Rinv.resize(nb);
  nt.W.resize(nb);
  nt.lambda.resize(nb);
  for (size_t b = 0; b < nb; ++b) {
    Eigen::MatrixXd X = unpack(lay, x, int(b));
    Eigen::MatrixXd Z = unpack(lay, z, int(b));
    Eigen::LLT<Eigen::MatrixXd> lx(X), lz(Z);
    for (int tries = 0; (lx.info() != Eigen::Success ||
                         lz.info() != Eigen::Success) && tries < 3; ++tries) {
      const double n = std::max<long>(X.rows(), 1);
      const double jitter = std::pow(1e3, tries) * 1e-14;
      X.diagonal().array() += jitter * (1.0 + X.trace() / n);
      Z.diagonal().array() += jitter * (1.0 + Z.trace() / n);
      lx.compute(X);
      lz.compute(Z);
    }
    if (lx.info() != Eigen::Success || lz.info() != Eigen::Success)
      return false;
    Eigen::MatrixXd Lx = lx.matrixL();
    Eigen::MatrixXd Lz = lz.matrixL();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        Lz.transpose() * Lx, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::VectorXd sig = svd.singularValues();
    if (sig.minCoeff() <= 0.0) return false;
    const Eigen::VectorXd isqrt = sig.cwiseSqrt().cwiseInverse();
    nt.R[b] = Lx * svd.matrixV() * isqrt.asDiagonal();
    nt.Rinv[b] = isqrt.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
    nt.W[b] = nt.R[b] * nt.R[b].transpose();
    nt.lambda[b] = sig;
  }
  return true;
}

// svec(W mat(v) W) blockwise.
Eigen::VectorXd w_conjugate(const BlockLayout& lay, const NtScaling& nt,
                            const Eigen::VectorXd& v) {
  Eigen::VectorXd out(lay.total);
  for (size_t b = 0; b < lay.dims.size(); ++b) {
    Eigen::MatrixXd T = nt.W[b] * unpack(lay, v, int(b)) * nt.W[b];
    pack(lay, T, int(b), out);
  }
  return out;
}

// Largest step alpha with mat(point + alpha*dir) staying PSD, measured in the
// scaled frame where the current point is diag(lambda).
double psd_step_limit(const BlockLayout& lay, const NtScaling& nt,
                      const Eigen::VectorXd& dir, bool primal_side) {
  double alpha = std::numeric_limits<double>::infinity();
  for (size_t b = 0; b < lay.dims.size(); ++b) {
    Eigen::MatrixXd D = unpack(lay, dir, int(b));
    Eigen::MatrixXd S;
    if (primal_side)
      S = nt.Rinv[b] * D * nt.Rinv[b].transpose();
    else
      S = nt.R[b].transpose() * D * nt.R[b];
    const Eigen::VectorXd lam_isqrt = nt.lambda[b].cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd scaled =
        lam_isqrt.asDiagonal() * S * lam_isqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled,
                                                       Eigen::EigenvaluesOnly);
    const double mn = eig.eigenvalues().minCoeff();
    if (mn < 0.0) alpha = std::min(alpha, -1.0 / mn);
  }
  return alpha;
}

struct Reduction {
  // Reduced standard-form problem: min <c,X> s.t. A svec(X) = b, X PSD.
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd c;
  double obj_const = 0.0;
  bool maximize = false;

  // Free-variable recovery data.
  int num_free = 0;
  int rank_f = 0;
  Eigen::MatrixXd qt_amat;  // Q^T * [matrix part], top rank_f rows
  Eigen::VectorXd qt_b;     // Q^T * rhs, top rank_f entries
  Eigen::MatrixXd r11;      // leading triangle of the QR of F
  Eigen::PermutationMatrix<Eigen::Dynamic> col_perm{0};
};

}  // namespace

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::numerical_failure: return "numerical_failure";
  }
  return "?";
}

std::string ConicProblem::serialize() const {
  std::ostringstream os;
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
  };
  os << "free " << num_free << "\nblocks";
  for (int d : block_dims) os << " " << d;
  os << "\nobjective";
  for (double v : objective_free) {
    os << " ";
    put(v);
  }
  os << "\n";
  for (const auto& row : rows) {
    os << "row";
    for (const auto& t : row.free_terms) {
      os << " f" << t.index << ":";
      put(t.value);
    }
    for (const auto& t : row.matrix_terms) {
      os << " m" << t.block << "." << t.row << "." << t.col << ":";
      put(t.value);
    }
    os << " = ";
    put(row.rhs);
    os << "\n";
  }
  return os.str();
}

ConicSolution InteriorPointSolver::solve(const ConicProblem& prob) const {
  ConicSolution sol;
  const BlockLayout lay(prob.block_dims);
  const int L = static_cast<int>(prob.rows.size());
  const int N = lay.total;
  const int p = prob.num_free;

  // Dense assembly. Problems produced by the SOS compiler are small enough
  // (a few hundred rows) that dense algebra is both simpler and faster than
  // sparse bookkeeping.
  Eigen::MatrixXd Amat = Eigen::MatrixXd::Zero(L, N);
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(L, std::max(p, 1));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(L);
  for (int l = 0; l < L; ++l) {
    const auto& row = prob.rows[l];
    b[l] = row.rhs;
    for (const auto& t : row.free_terms) F(l, t.index) += t.value;
    for (const auto& t : row.matrix_terms) {
      const double scale = (t.row == t.col) ? 1.0 : kSqrt2;
      Amat(l, lay.index(t.block, t.row, t.col)) += scale * t.value;
    }
  }

  Eigen::VectorXd d = Eigen::VectorXd::Zero(std::max(p, 1));
  const bool has_objective = !prob.objective_free.empty();
  for (size_t i = 0; i < prob.objective_free.size(); ++i)
    d[static_cast<int>(i)] = prob.objective_free[i];

  // --- Eliminate free variables: F*theta = b - Amat*svec(X). -------------
  Reduction red;
  red.num_free = p;
  Eigen::MatrixXd At;
  Eigen::VectorXd bt;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(N);
  double obj_const = 0.0;
  if (p > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(F.leftCols(p));
    qr.setThreshold(1e-10);
    const int r = static_cast<int>(qr.rank());
    red.rank_f = r;
    red.col_perm = qr.colsPermutation();
    Eigen::MatrixXd Q = qr.householderQ();
    Eigen::MatrixXd QtA = Q.transpose() * Amat;
    Eigen::VectorXd Qtb = Q.transpose() * b;
    Eigen::MatrixXd R = qr.matrixR()
                            .topLeftCorner(r, p)
                            .template triangularView<Eigen::Upper>();
    red.r11 = R.leftCols(r);
    red.qt_amat = QtA.topRows(r);
    red.qt_b = Qtb.head(r);
    At = QtA.bottomRows(L - r);
    bt = Qtb.tail(L - r);

    if (has_objective) {
      // min -d.theta after maximization flip; theta = P [R11^{-1} rhs1; 0].
      Eigen::VectorXd c0 = -d;
      Eigen::VectorXd c0p = red.col_perm.transpose() * c0;
      if (r < p) {
        // Objective component along directions unconstrained by any row
        // means the optimum is unbounded.
        Eigen::VectorXd u1 = red.r11.transpose()
                                 .triangularView<Eigen::Lower>()
                                 .solve(c0p.head(r));
        Eigen::MatrixXd R12 = R.rightCols(p - r);
        Eigen::VectorXd reduced_grad = c0p.tail(p - r) - R12.transpose() * u1;
        if (reduced_grad.lpNorm<Eigen::Infinity>() >
            1e-9 * (1.0 + c0.lpNorm<Eigen::Infinity>())) {
          sol.status = SolveStatus::unbounded;
          sol.message = "objective unbounded along unconstrained parameters";
          return sol;
        }
      }
      Eigen::VectorXd u = red.r11.transpose()
                              .triangularView<Eigen::Lower>()
                              .solve(c0p.head(r));
      c = -red.qt_amat.transpose() * u;
      obj_const = u.dot(red.qt_b);
    }
  } else {
    At = Amat;
    bt = b;
  }
  red.c = c;
  red.obj_const = obj_const;

  // --- Row cleanup: drop zero and dependent rows. ------------------------
  std::vector<int> keep;
  {
    const int Lr = static_cast<int>(At.rows());
    std::vector<int> nonzero;
    for (int l = 0; l < Lr; ++l) {
      const double an = At.row(l).lpNorm<Eigen::Infinity>();
      const double scale = std::max(an, std::abs(bt[l]));
      if (an < 1e-13) {
        if (std::abs(bt[l]) > 1e-9) {
          sol.status = SolveStatus::infeasible;
          sol.message = "inconsistent affine constraint with no cone terms";
          return sol;
        }
        continue;  // vacuous row
      }
      At.row(l) /= scale;
      bt[l] /= scale;
      nonzero.push_back(l);
    }
    if (!nonzero.empty()) {
      Eigen::MatrixXd Anz(nonzero.size(), N);
      Eigen::VectorXd bnz(nonzero.size());
      for (size_t i = 0; i < nonzero.size(); ++i) {
        Anz.row(i) = At.row(nonzero[i]);
        bnz[i] = bt[nonzero[i]];
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr2(Anz.transpose());
      qr2.setThreshold(1e-10);
      const int r2 = static_cast<int>(qr2.rank());
      std::vector<char> is_kept(nonzero.size(), 0);
      for (int i = 0; i < r2; ++i)
        is_kept[qr2.colsPermutation().indices()[i]] = 1;
      Eigen::MatrixXd K(r2, N);
      Eigen::VectorXd kb(r2);
      {
        int idx = 0;
        for (size_t i = 0; i < nonzero.size(); ++i)
          if (is_kept[i]) {
            K.row(idx) = Anz.row(i);
            kb[idx] = bnz[i];
            ++idx;
          }
      }
      // Dropped rows must be consistent combinations of kept ones.
      Eigen::LLT<Eigen::MatrixXd> gram(K * K.transpose());
      for (size_t i = 0; i < nonzero.size(); ++i) {
        if (is_kept[i]) continue;
        Eigen::VectorXd lam = gram.solve(K * Anz.row(i).transpose());
        const double mismatch = std::abs(bnz[i] - lam.dot(kb));
        if (mismatch > 1e-6) {
          sol.status = SolveStatus::infeasible;
          sol.message = "inconsistent redundant affine constraints";
          return sol;
        }
      }
      At = K;
      bt = kb;
    } else {
      At.resize(0, N);
      bt.resize(0);
    }
  }
  const int Lr = static_cast<int>(At.rows());

  auto finish_optimal = [&](const Eigen::VectorXd& xsol) {
    sol.blocks.resize(lay.dims.size());
    for (size_t bidx = 0; bidx < lay.dims.size(); ++bidx)
      sol.blocks[bidx] = unpack(lay, xsol, int(bidx));
    if (p > 0) {
      Eigen::VectorXd rhs1 = red.qt_b - red.qt_amat * xsol;
      Eigen::VectorXd phi1 =
          red.r11.triangularView<Eigen::Upper>().solve(rhs1);
      Eigen::VectorXd phi = Eigen::VectorXd::Zero(p);
      phi.head(red.rank_f) = phi1;
      sol.free_values = red.col_perm * phi;
    } else {
      sol.free_values.resize(0);
    }
    sol.objective = has_objective && p > 0 ? d.dot(sol.free_values) : 0.0;
    sol.status = SolveStatus::optimal;
  };

  if (Lr == 0) {
    // No coupling constraints remain: X = 0 is feasible; the objective is
    // unbounded iff c has a negative direction on the cone.
    bool c_psd = true;
    for (size_t bidx = 0; bidx < lay.dims.size() && c_psd; ++bidx) {
      Eigen::MatrixXd C = unpack(lay, c, int(bidx));
      if (C.rows() == 0) continue;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
          C, Eigen::EigenvaluesOnly);
      if (eig.eigenvalues().minCoeff() < -1e-12) c_psd = false;
    }
    if (!c_psd) {
      sol.status = SolveStatus::unbounded;
      sol.message = "cone objective unbounded with no coupling constraints";
      return sol;
    }
    finish_optimal(Eigen::VectorXd::Zero(N));
    return sol;
  }

  // --- Homogeneous self-dual interior-point iteration. -------------------
  const double nu = static_cast<double>(
      std::accumulate(lay.dims.begin(), lay.dims.end(), 0));
  Eigen::VectorXd x = svec_identity(lay);
  Eigen::VectorXd z = svec_identity(lay);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(Lr);
  double tau = 1.0, kappa = 1.0;

  const double bnorm = 1.0 + bt.lpNorm<Eigen::Infinity>();
  const double cnorm = 1.0 + c.lpNorm<Eigen::Infinity>();

  double best_metric = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x = x, best_y = y, best_z = z;
  double best_tau = tau;
  double best_pres = 1e30, best_dres = 1e30, best_gap = 1e30;
  double best_pinf_quality = 1e30, best_dinf_quality = 1e30;
  int stall_count = 0;
  const bool pure_feasibility =
      !has_objective && c.lpNorm<Eigen::Infinity>() == 0.0;

  NtScaling nt;
  // Per-iteration diagnostics, enabled through the environment.
  const bool trace = std::getenv("SMCFORGE_IPM_TRACE") != nullptr;
  for (int iter = 0; iter < settings_.max_iterations; ++iter) {
    sol.iterations = iter;
    const double mu = (x.dot(z) + tau * kappa) / (nu + 1.0);

    // Residuals of the embedding.
    Eigen::VectorXd rp = At * x - bt * tau;
    Eigen::VectorXd rd = -At.transpose() * y - z + c * tau;
    const double rg = c.dot(x) - bt.dot(y) + kappa;

    // Convergence metrics at the de-homogenized point.
    const double pres = (At * (x / tau) - bt).lpNorm<Eigen::Infinity>() / bnorm;
    const double dres =
        (At.transpose() * (y / tau) + z / tau - c).lpNorm<Eigen::Infinity>() /
        cnorm;
    const double pobj = c.dot(x) / tau;
    const double dobj = bt.dot(y) / tau;
    const double gap = x.dot(z) / (tau * tau);
    const double relgap = gap / (1.0 + std::abs(pobj) + std::abs(dobj));

    if (trace)
      std::fprintf(stderr,
                   "it=%2d mu=%9.2e pres=%9.2e dres=%9.2e relgap=%9.2e "
                   "tau=%9.2e kap=%9.2e\n",
                   iter, mu, pres, dres, relgap, tau, kappa);

    const double metric =
        pure_feasibility ? pres + dres : pres + dres + relgap;
    if (metric < best_metric) {
      best_metric = metric;
      best_x = x;
      best_y = y;
      best_z = z;
      best_tau = tau;
      best_pres = pres;
      best_dres = dres;
      best_gap = relgap;
      stall_count = 0;
    } else if (++stall_count > 25) {
      break;  // no progress on the residuals; evaluate the best iterate
    }

    // Pure feasibility problems still run to full centering when they can;
    // the stall path below accepts a merely-feasible point otherwise.
    if (pres <= settings_.eps_feas && dres <= settings_.eps_feas &&
        relgap <= settings_.eps_gap) {
      finish_optimal(x / tau);
      sol.iterations = iter;
      return sol;
    }

    // Infeasibility certificates.
    const double by = bt.dot(y);
    if (by > 0.0) {
      const double quality =
          (At.transpose() * y + z).lpNorm<Eigen::Infinity>() / by;
      best_pinf_quality = std::min(best_pinf_quality, quality);
      if (quality <= settings_.eps_infeas) {
        sol.status = SolveStatus::infeasible;
        sol.message = "primal infeasibility certificate found";
        sol.iterations = iter;
        return sol;
      }
    }
    const double cx = c.dot(x);
    if (cx < 0.0) {
      const double quality = (At * x).lpNorm<Eigen::Infinity>() / (-cx);
      best_dinf_quality = std::min(best_dinf_quality, quality);
      if (quality <= settings_.eps_infeas) {
        sol.status = SolveStatus::unbounded;
        sol.message = "dual infeasibility certificate found";
        sol.iterations = iter;
        return sol;
      }
    }

    if (!compute_nt(lay, x, z, nt)) {
      sol.message = "scaling breakdown";
      break;
    }

    // Schur complement M = A W A^T with W the NT conjugation.
    Eigen::MatrixXd AW(Lr, N);
    for (int l = 0; l < Lr; ++l)
      AW.row(l) = w_conjugate(lay, nt, At.row(l).transpose()).transpose();
    Eigen::MatrixXd M = AW * At.transpose();
    M = 0.5 * (M + M.transpose());
    Eigen::LLT<Eigen::MatrixXd> mllt(M);
    {
      double reg = 1e-13 * (1.0 + M.trace() / std::max(Lr, 1));
      int tries = 0;
      while (mllt.info() != Eigen::Success && tries < 8) {
        M.diagonal().array() += reg;
        mllt.compute(M);
        reg *= 100.0;
        ++tries;
      }
      if (mllt.info() != Eigen::Success) {
        sol.message = "Schur complement factorization failed";
        break;
      }
    }

    Eigen::VectorXd wc = w_conjugate(lay, nt, c);
    Eigen::VectorXd g2 = At * wc + bt;
    Eigen::VectorXd dy2 = mllt.solve(g2);
    Eigen::VectorXd x2 = w_conjugate(lay, nt, At.transpose() * dy2) - wc;
    Eigen::VectorXd z2 = -At.transpose() * dy2 + c;

    // One direction solve for a given complementarity target.
    auto solve_direction = [&](const std::vector<Eigen::MatrixXd>& target,
                               double rhs5, Eigen::VectorXd& dx,
                               Eigen::VectorXd& dyv, Eigen::VectorXd& dz,
                               double& dtau, double& dkappa) -> bool {
      Eigen::VectorXd h(N);
      for (size_t bidx = 0; bidx < lay.dims.size(); ++bidx) {
        const Eigen::VectorXd& lam = nt.lambda[bidx];
        Eigen::MatrixXd T = target[bidx];
        for (int i = 0; i < T.rows(); ++i)
          for (int j = 0; j < T.cols(); ++j)
            T(i, j) = 2.0 * T(i, j) / (lam[i] + lam[j]);
        Eigen::MatrixXd Hm = nt.R[bidx] * T * nt.R[bidx].transpose();
        pack(lay, Hm, int(bidx), h);
      }
      Eigen::VectorXd wrd = w_conjugate(lay, nt, rd);
      Eigen::VectorXd g1 = -rp - At * (h - wrd);
      Eigen::VectorXd dy1 = mllt.solve(g1);
      Eigen::VectorXd x1 = h - wrd + w_conjugate(lay, nt, At.transpose() * dy1);
      Eigen::VectorXd z1 = rd - At.transpose() * dy1;
      const double den = c.dot(x2) - bt.dot(dy2) - kappa / tau;
      if (std::abs(den) < 1e-300) return false;
      dtau = (-rg - c.dot(x1) + bt.dot(dy1) - rhs5 / tau) / den;
      dx = x1 + dtau * x2;
      dyv = dy1 + dtau * dy2;
      dz = z1 + dtau * z2;
      dkappa = (rhs5 - kappa * dtau) / tau;
      return true;
    };

    auto step_limit = [&](const Eigen::VectorXd& dx, const Eigen::VectorXd& dz,
                          double dtau, double dkappa) {
      double a = std::min(psd_step_limit(lay, nt, dx, true),
                          psd_step_limit(lay, nt, dz, false));
      if (dtau < 0.0) a = std::min(a, -tau / dtau);
      if (dkappa < 0.0) a = std::min(a, -kappa / dkappa);
      return a;
    };

    // Predictor.
    std::vector<Eigen::MatrixXd> target(lay.dims.size());
    for (size_t bidx = 0; bidx < lay.dims.size(); ++bidx) {
      target[bidx] = Eigen::MatrixXd(
          (-nt.lambda[bidx].array().square()).matrix().asDiagonal());
    }
    Eigen::VectorXd dx_a, dy_a, dz_a;
    double dtau_a, dkap_a;
    if (!solve_direction(target, -tau * kappa, dx_a, dy_a, dz_a, dtau_a,
                         dkap_a)) {
      sol.message = "singular embedding system";
      break;
    }
    const double alpha_aff = std::min(1.0, step_limit(dx_a, dz_a, dtau_a,
                                                      dkap_a));

    // Mehrotra centering weight.
    const double gap_aff =
        ((x + alpha_aff * dx_a).dot(z + alpha_aff * dz_a) +
         (tau + alpha_aff * dtau_a) * (kappa + alpha_aff * dkap_a)) /
        (nu + 1.0);
    double sigma = std::pow(std::clamp(gap_aff / mu, 0.0, 1.0), 3.0);
    sigma = std::clamp(sigma, 1e-9, 1.0 - 1e-9);

    // Corrector with second-order term in the scaled frame.
    for (size_t bidx = 0; bidx < lay.dims.size(); ++bidx) {
      Eigen::MatrixXd dXs = nt.Rinv[bidx] * unpack(lay, dx_a, int(bidx)) *
                            nt.Rinv[bidx].transpose();
      Eigen::MatrixXd dZs = nt.R[bidx].transpose() *
                            unpack(lay, dz_a, int(bidx)) * nt.R[bidx];
      Eigen::MatrixXd corr = 0.5 * (dXs * dZs + dZs * dXs);
      Eigen::MatrixXd T = Eigen::MatrixXd(
          (-nt.lambda[bidx].array().square() + sigma * mu).matrix()
              .asDiagonal());
      target[bidx] = T - corr;
    }
    Eigen::VectorXd dx, dyv, dz;
    double dtau, dkappa;
    if (!solve_direction(target, sigma * mu - tau * kappa - dtau_a * dkap_a,
                         dx, dyv, dz, dtau, dkappa)) {
      sol.message = "singular embedding system";
      break;
    }
    double alpha =
        settings_.step_fraction * step_limit(dx, dz, dtau, dkappa);
    alpha = std::min(alpha, 1.0);
    if (alpha < 1e-8) {
      sol.message = "step length collapsed";
      break;
    }

    x += alpha * dx;
    y += alpha * dyv;
    z += alpha * dz;
    tau += alpha * dtau;
    kappa += alpha * dkappa;

    // The embedding is homogeneous, so the iterate can be renormalized
    // freely; without this, feasibility problems drift along the solution
    // ray with tau growing unboundedly.
    if (tau > 10.0 || tau < 0.1) {
      const double s = 1.0 / tau;
      x *= s;
      y *= s;
      z *= s;
      kappa *= s;
      tau = 1.0;
    }
  }

  // Stalled or iteration-capped: accept the best iterate at reduced accuracy
  // if it is within factor of the targets; otherwise report failure. For a
  // pure feasibility problem a primal-feasible point is a complete answer,
  // so the stalled duality measures are not held against it; these arise
  // routinely when the feasible Gram set has empty interior.
  const double f = settings_.reduced_accuracy_factor;
  if (best_pres <= f * settings_.eps_feas && best_dres <= f * settings_.eps_feas &&
      best_gap <= f * settings_.eps_gap) {
    finish_optimal(best_x / best_tau);
    std::ostringstream os;
    os << "reduced accuracy (pres=" << best_pres << ", dres=" << best_dres
       << ", relgap=" << best_gap << ")";
    sol.message = os.str();
    return sol;
  }
  if (pure_feasibility && best_pres <= f * settings_.eps_feas) {
    finish_optimal(best_x / best_tau);
    std::ostringstream os;
    os << "feasible point with stalled centering (pres=" << best_pres << ")";
    sol.message = os.str();
    return sol;
  }
  if (best_pinf_quality <= f * settings_.eps_infeas) {
    sol.status = SolveStatus::infeasible;
    sol.message = "primal infeasibility certificate at reduced accuracy";
    return sol;
  }
  if (best_dinf_quality <= f * settings_.eps_infeas) {
    sol.status = SolveStatus::unbounded;
    sol.message = "dual infeasibility certificate at reduced accuracy";
    return sol;
  }
  sol.status = SolveStatus::numerical_failure;
  if (sol.message.empty()) sol.message = "iteration limit reached";
  return sol;
}

}  // namespace smcforge::conic
