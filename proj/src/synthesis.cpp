#include "smcforge/synthesis.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "smcforge/rng.hpp"
#include "smcforge/sim.hpp"

namespace smcforge::synthesis {

using json = nlohmann::ordered_json;
using poly::Monomial;
using poly::StructuralError;
using sosprog::AffExpr;
using sosprog::GramCertificate;
using sosprog::ParametricPolynomial;
using sosprog::SosProgram;
using sosprog::UnknownPoly;

const char* to_string(Mode m) {
  switch (m) {
    case Mode::roa: return "roa";
    case Mode::global: return "global";
    case Mode::finite: return "finite";
    case Mode::finite_global: return "finite-global";
  }
  return "?";
}

std::optional<Mode> mode_from_string(const std::string& s) {
  if (s == "roa") return Mode::roa;
  if (s == "global") return Mode::global;
  if (s == "finite") return Mode::finite;
  if (s == "finite-global") return Mode::finite_global;
  return std::nullopt;
}

const char* to_string(SynthStatus s) {
  switch (s) {
    case SynthStatus::success: return "success";
    case SynthStatus::infeasible_from_init: return "infeasible-from-init";
    case SynthStatus::iteration_cap: return "iteration-cap";
    case SynthStatus::solver_failure: return "solver-failure";
    case SynthStatus::zero_rate: return "zero-rate";
  }
  return "?";
}

Polynomial even_power_floor(const VarsPtr& vars,
                            const std::vector<int>& indices,
                            const Eigen::MatrixXd& eps) {
  if (eps.rows() != static_cast<long>(indices.size()) || eps.cols() < 1)
    throw StructuralError("floor table must have one row per variable");
  Polynomial l = Polynomial::zero(vars);
  for (long i = 0; i < eps.rows(); ++i) {
    double row_sum = 0.0;
    for (long j = 0; j < eps.cols(); ++j) {
      const double e = eps(i, j);
      if (e < 0.0) throw StructuralError("floor coefficients must be >= 0");
      row_sum += e;
      if (e > 0.0) {
        Monomial m = Monomial::unit(vars->count());
        m.exponents[indices[i]] = static_cast<uint16_t>(2 * (j + 1));
        l += Polynomial::term(vars, m, e);
      }
    }
    if (row_sum <= 0.0)
      throw StructuralError("every floor row needs a positive entry");
  }
  return l;
}

VarsPtr slack_extended_vars(const RegularFormSystem& sys) {
  if (sys.vars->slack_index()) return sys.vars;
  std::vector<std::string> names = sys.vars->names();
  names.push_back("M");
  return poly::IndeterminateSet::make(std::move(names),
                                      static_cast<int>(names.size()) - 1);
}

namespace {

std::vector<Monomial> monos_range(const VarsPtr& vars, int lo, int hi,
                                  const std::vector<int>& support) {
  std::vector<Monomial> out;
  for (auto& m : poly::monomials_up_to(vars, hi, support)) {
    const int d = m.degree();
    if (d >= lo && d <= hi) out.push_back(m);
  }
  return out;
}

ParametricPolynomial pp(Polynomial p) {
  return ParametricPolynomial(std::move(p));
}

// Concrete data for one synthesis call: resolved defaults over the working
// variable set, with the plant transplanted when the set was extended.
struct Resolved {
  VarsPtr vars;
  std::vector<int> z1, z2, states, all;
  int slack = -1;
  PolyVector f1;
  Polynomial l1, l2, shape, init_s2;
  PolyVector init_q, w;
  Polynomial m_var;    // slack variable as a polynomial (finite only)
  Polynomial variety;  // M^r - (w'w)^p
  PolyVector wdot;     // d/dt of w along f1
};

Resolved resolve(const RegularFormSystem& sys, const SynthesisConfig& cfg,
                 bool finite) {
  sys.validate();
  Resolved r;
  r.vars = finite ? slack_extended_vars(sys) : sys.vars;
  r.z1 = sys.z1_indices();
  r.z2 = sys.z2_indices();
  for (int i = 0; i < sys.n; ++i) r.states.push_back(i);
  for (int i = 0; i < r.vars->count(); ++i) r.all.push_back(i);
  if (auto s = r.vars->slack_index()) r.slack = *s;

  r.f1 = poly::transplant(sys.f1, r.vars);

  Eigen::MatrixXd table = cfg.eps_table;
  if (table.size() == 0)
    table = Eigen::MatrixXd::Constant(sys.n, 1, cfg.eps_l);
  if (table.rows() != sys.n)
    throw StructuralError("floor table must have one row per state");
  Eigen::MatrixXd z1_table = table.topRows(sys.n - sys.m);
  r.l1 = even_power_floor(r.vars, r.z1, z1_table);
  r.l2 = even_power_floor(r.vars, r.states, table);

  auto sum_of_squares = [&](double scale) {
    Polynomial p = Polynomial::zero(r.vars);
    for (int i : r.states) {
      Monomial m = Monomial::unit(r.vars->count());
      m.exponents[i] = 2;
      p += Polynomial::term(r.vars, m, scale);
    }
    return p;
  };
  r.shape = cfg.shape.vars() ? poly::transplant(cfg.shape, r.vars)
                             : sum_of_squares(1.0);
  // The region multiplier must vanish at the origin or the decrease
  // constraint is violated there; 0.5*|z|^2 also keeps its quadratic slice
  // clear of the manifold-coupling terms. Finite-time runs start from the
  // vacuous region restriction instead, which the rate phase re-optimizes.
  r.init_s2 = cfg.init_s2.vars() ? poly::transplant(cfg.init_s2, r.vars)
              : finite            ? Polynomial::zero(r.vars)
                                  : sum_of_squares(0.5);

  if (cfg.init_q.size() > 0) {
    if (cfg.init_q.size() != sys.m)
      throw StructuralError("init_q needs one row per input channel");
    r.init_q = poly::transplant(cfg.init_q, r.vars);
  } else {
    Polynomial row = Polynomial::zero(r.vars);
    for (int i : r.states) row += Polynomial::variable(r.vars, i);
    std::vector<Polynomial> rows(sys.m, row);
    r.init_q = PolyVector(rows);
  }
  for (int i = 0; i < r.init_q.size(); ++i)
    if (std::abs(r.init_q[i].constant_term()) > 0.0)
      throw StructuralError("init_q must vanish at the origin");

  if (finite) {
    if (!(cfg.r_exp > cfg.p_exp && cfg.p_exp > 0))
      throw StructuralError("finite-time synthesis needs r_exp > p_exp > 0");
    if (cfg.r_exp % 2 == 0)
      throw StructuralError(
          "finite-time synthesis needs an odd r_exp: the decrease is "
          "certified through the strictly monotone r-th power");
    if (cfg.w.size() > 0) {
      r.w = poly::transplant(cfg.w, r.vars);
    } else {
      std::vector<Polynomial> rows;
      for (int i : r.z1) rows.push_back(Polynomial::variable(r.vars, i));
      r.w = PolyVector(rows);
    }
    r.m_var = Polynomial::variable(r.vars, r.slack);
    r.variety =
        r.m_var.pow(cfg.r_exp) - r.w.dot(r.w).pow(cfg.p_exp);
    poly::PolyMatrix jw = r.w.jacobian(r.z1);
    std::vector<Polynomial> wd;
    for (int i = 0; i < r.w.size(); ++i) {
      Polynomial acc = Polynomial::zero(r.vars);
      for (size_t j = 0; j < r.z1.size(); ++j)
        acc += jw(i, static_cast<int>(j)) * r.f1[static_cast<int>(j)];
      wd.push_back(acc);
    }
    r.wdot = PolyVector(wd);
  }
  return r;
}

conic::InteriorPointSolver make_solver(const SynthesisConfig& cfg) {
  return conic::InteriorPointSolver(cfg.solver);
}

// The shape polynomial must be positive definite; certified through
// shape - eps * sum z_i^2 being a sum of squares.
void require_shape_positive_definite(const Resolved& r,
                                     const SynthesisConfig& cfg) {
  Polynomial floor = Polynomial::zero(r.vars);
  for (int i : r.states) {
    Monomial m = Monomial::unit(r.vars->count());
    m.exponents[i] = 2;
    floor += Polynomial::term(r.vars, m, cfg.eps_l);
  }
  SosProgram prog(r.vars);
  prog.add_sos_constraint(pp(r.shape - floor), "shape floor");
  auto sol = sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
  if (sol.status != conic::SolveStatus::optimal)
    throw StructuralError(
        "shape polynomial is not certified positive definite");
}

// Manifold rows normalized to z2_i + free terms; the pure-linear z2
// monomials are pinned to the identity so dS/dz2(0) = I and the manifold
// condition S(0, z2) = 0 => z2 = 0 holds locally by construction.
struct ManifoldUnknown {
  std::vector<UnknownPoly> rows;
  std::vector<ParametricPolynomial> pps;
  std::vector<Polynomial> fixed_parts;
};

ManifoldUnknown manifold_unknowns(SosProgram& prog, const Resolved& r,
                                  const RegularFormSystem& sys,
                                  const SynthesisConfig& cfg,
                                  bool allow_slack_monos) {
  ManifoldUnknown mu;
  std::vector<Monomial> candidates =
      monos_range(r.vars, 1, cfg.deg_S, r.all);
  std::vector<Monomial> kept;
  for (const auto& m : candidates) {
    if (m.degree() == 1) {
      bool pure_z2 = false;
      for (int j : r.z2)
        if (m.exponents[j] == 1) pure_z2 = true;
      if (pure_z2) continue;
    }
    if (!allow_slack_monos && r.slack >= 0 && m.exponents[r.slack] > 0)
      continue;
    kept.push_back(m);
  }
  for (int i = 0; i < sys.m; ++i) {
    auto u = prog.add_unknown_polynomial(kept, "S" + std::to_string(i + 1));
    Polynomial fixed = Polynomial::variable(r.vars, r.z2[i]);
    ParametricPolynomial p = u.as_parametric(r.vars) + pp(fixed);
    mu.rows.push_back(u);
    mu.pps.push_back(p);
    mu.fixed_parts.push_back(fixed);
  }
  return mu;
}

PolyVector extract_manifold(const ManifoldUnknown& mu, const VarsPtr& vars,
                            const Eigen::VectorXd& values) {
  std::vector<Polynomial> rows;
  for (size_t i = 0; i < mu.rows.size(); ++i)
    rows.push_back(mu.fixed_parts[i] + mu.rows[i].value(vars, values));
  return PolyVector(rows);
}

}  // namespace

// ---------------------------------------------------------------------------
// Certificate steps

StepOutcome certificate_step_roa(const RegularFormSystem& sys,
                                 const SynthesisConfig& cfg,
                                 const Polynomial& s2, const PolyVector& q,
                                 double beta) {
  Resolved r = resolve(sys, cfg, false);
  const Polynomial s2w = poly::transplant(s2, r.vars);
  const PolyVector qw = poly::transplant(q, r.vars);

  SosProgram prog(r.vars);
  auto Vu = prog.add_unknown_polynomial(monos_range(r.vars, 1, cfg.deg_V, r.z1),
                                        "V");
  auto Vpp = Vu.as_parametric(r.vars);
  auto mu = manifold_unknowns(prog, r, sys, cfg, false);
  auto s1u = prog.add_unknown_polynomial(
      monos_range(r.vars, 0, cfg.deg_s1, r.all), "s1");
  auto s1pp = s1u.as_parametric(r.vars);

  prog.add_sos_constraint(Vpp - pp(r.l1), "V floor");

  ParametricPolynomial dec = pp(-s2w - r.l2);
  for (size_t i = 0; i < r.z1.size(); ++i)
    dec = dec - Vpp.differentiate(r.z1[i]).times(r.f1[static_cast<int>(i)]);
  dec = dec + Vpp.times(s2w);
  for (int i = 0; i < sys.m; ++i) dec = dec + mu.pps[i].times(qw[i]);
  prog.add_sos_constraint(dec, "decrease");

  ParametricPolynomial cont =
      pp(Polynomial::constant(r.vars, 1.0)) - Vpp +
      s1pp.times(r.shape - Polynomial::constant(r.vars, beta));
  prog.add_sos_constraint(cont, "containment");
  prog.add_sos_constraint(s1pp, "multiplier s1");

  auto sol = sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
  StepOutcome out;
  out.status = sol.status;
  out.message = sol.message;
  if (sol.status != conic::SolveStatus::optimal) return out;
  out.V = Vu.value(r.vars, sol.param_values);
  out.S = extract_manifold(mu, r.vars, sol.param_values);
  out.multipliers["s1"] = s1u.value(r.vars, sol.param_values);
  out.certificates = sol.certificates;
  return out;
}

StepOutcome certificate_step_global(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const PolyVector& q, double beta) {
  Resolved r = resolve(sys, cfg, false);
  const PolyVector qw = poly::transplant(q, r.vars);

  // The feasibility program is first solved with a maximized decrease
  // margin against the floor l1, which steers the pair toward higher rates
  // and cuts alternation rounds; a plain feasibility pass is the fallback.
  auto attempt = [&](bool with_margin) {
    SosProgram prog(r.vars);
    auto v_monos = monos_range(r.vars, 1, cfg.deg_V, r.z1);
    auto Vu = prog.add_unknown_polynomial(v_monos, "V");
    auto Vpp = Vu.as_parametric(r.vars);
    auto mu = manifold_unknowns(prog, r, sys, cfg, false);

    prog.add_sos_constraint(Vpp - pp(r.l1), "V floor");

    ParametricPolynomial dec = pp(Polynomial::zero(r.vars));
    for (size_t i = 0; i < r.z1.size(); ++i)
      dec = dec - Vpp.differentiate(r.z1[i]).times(r.f1[static_cast<int>(i)]);
    for (int i = 0; i < sys.m; ++i) dec = dec + mu.pps[i].times(qw[i]);
    dec = dec + Vpp * (-beta);
    if (with_margin) {
      auto margin = prog.add_parameter("margin");
      dec.add_param_term(margin, -r.l1);
      prog.set_objective_maximize(AffExpr::param(margin));
    }
    prog.add_sos_constraint(dec, "decrease");

    // The constraints are scale-invariant in (V, S); pinning the trace of
    // V's quadratic part removes the free ray and keeps iterates
    // comparable.
    AffExpr trace;
    for (size_t i = 0; i < v_monos.size(); ++i) {
      if (v_monos[i].degree() != 2) continue;
      for (int zi : r.z1)
        if (v_monos[i].exponents[zi] == 2)
          trace += AffExpr::param(Vu.params[i]);
    }
    trace.constant = -static_cast<double>(r.z1.size());
    prog.add_equality(trace);

    auto sol =
        sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
    StepOutcome out;
    out.status = sol.status;
    out.message = sol.message;
    if (sol.status != conic::SolveStatus::optimal) return out;
    out.V = Vu.value(r.vars, sol.param_values);
    out.S = extract_manifold(mu, r.vars, sol.param_values);
    out.certificates = sol.certificates;
    return out;
  };

  StepOutcome out = attempt(true);
  if (out.status == conic::SolveStatus::optimal ||
      out.status == conic::SolveStatus::infeasible)
    return out;
  return attempt(false);
}

StepOutcome certificate_step_finite(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const Polynomial& s2, const PolyVector& q,
                                    double c, bool global_variant) {
  Resolved r = resolve(sys, cfg, true);
  const Polynomial s2w = poly::transplant(s2, r.vars);
  const PolyVector qw = poly::transplant(q, r.vars);
  const int dw = r.w.size();

  // The decrease statement is certified through its r-th power, which is
  // strictly monotone for odd r and removes the slack symbol from the rate
  // term: along any ray off the recast variety the plain form is unbounded
  // below in M, so no multiplier degree can certify a positive rate there.
  // The power form is cubic (for r = 3) in the Gram of V, so the Gram is
  // frozen at its trace-normalized initialization and the alternation
  // searches the manifold and multipliers; the shape of V is chosen through
  // w instead.
  const Eigen::MatrixXd Qfix = Eigen::MatrixXd::Identity(dw, dw);

  SosProgram prog(r.vars);
  auto Qu = prog.add_symmetric_matrix(dw, "Q");
  prog.require_matrix_psd(Qu, cfg.eps_Q, "Q floor");
  for (int i = 0; i < dw; ++i)
    for (int j = 0; j <= i; ++j) {
      AffExpr pin = AffExpr::param(Qu.params[i][j]);
      pin.constant = -Qfix(i, j);
      prog.add_equality(pin);
    }

  Polynomial V = Polynomial::zero(r.vars);
  Polynomial Vdot = Polynomial::zero(r.vars);
  for (int i = 0; i < dw; ++i)
    for (int j = 0; j < dw; ++j) {
      V += r.w[i] * r.w[j] * Qfix(i, j);
      Vdot += (r.wdot[i] * r.w[j] + r.w[i] * r.wdot[j]) * Qfix(i, j);
    }

  std::optional<ManifoldUnknown> mu;
  std::vector<ParametricPolynomial> s_pps;
  PolyVector fixed_s;
  if (cfg.fixed_S) {
    fixed_s = poly::transplant(*cfg.fixed_S, r.vars);
    if (fixed_s.size() != sys.m)
      throw StructuralError("fixed_S needs one row per input channel");
    for (int i = 0; i < sys.m; ++i) s_pps.push_back(pp(fixed_s[i]));
  } else {
    mu = manifold_unknowns(prog, r, sys, cfg, cfg.manifold_uses_slack);
    s_pps = mu->pps;
  }

  auto Ku = prog.add_unknown_polynomial(
      monos_range(r.vars, 0, cfg.deg_K, r.all), "K");

  ParametricPolynomial dec =
      pp(-Vdot.pow(cfg.r_exp) -
         r.w.dot(r.w).pow(cfg.p_exp) * std::pow(c, cfg.r_exp));
  dec = dec + Ku.as_parametric(r.vars).times(r.variety);
  if (!global_variant) {
    dec = dec + pp(s2w * (V - Polynomial::constant(r.vars, 1.0)));
  }
  for (int i = 0; i < sys.m; ++i) dec = dec + s_pps[i].times(qw[i]);
  prog.add_sos_constraint(dec, "decrease");

  std::optional<UnknownPoly> s1u;
  if (!global_variant) {
    s1u = prog.add_unknown_polynomial(
        monos_range(r.vars, 0, cfg.deg_s1, r.all), "s1");
    ParametricPolynomial cont =
        pp(Polynomial::constant(r.vars, 1.0) - V) +
        s1u->as_parametric(r.vars).times(
            r.shape -
            Polynomial::constant(r.vars, cfg.finite_containment_level));
    prog.add_sos_constraint(cont, "containment");
    prog.add_sos_constraint(s1u->as_parametric(r.vars), "multiplier s1");
  }

  auto sol = sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
  StepOutcome out;
  out.status = sol.status;
  out.message = sol.message;
  if (sol.status != conic::SolveStatus::optimal) return out;
  out.Q = Qu.value(sol.param_values);
  out.V = V;
  out.S = cfg.fixed_S ? fixed_s
                      : extract_manifold(*mu, r.vars, sol.param_values);
  out.multipliers["K"] = Ku.value(r.vars, sol.param_values);
  if (s1u) out.multipliers["s1"] = s1u->value(r.vars, sol.param_values);
  out.certificates = sol.certificates;
  return out;
}

// ---------------------------------------------------------------------------
// Objective maximization by bisection

namespace {

struct ProbeResult {
  conic::SolveStatus status = conic::SolveStatus::numerical_failure;
  bool certificates_ok = false;
  std::map<std::string, Polynomial> multipliers;
  std::vector<GramCertificate> certificates;
  std::string message;
};

MaximizeResult run_bisection(const std::function<ProbeResult(double)>& probe,
                             double lo_hint, const SynthesisConfig& cfg) {
  MaximizeResult out;
  auto attempt = [&](double value) {
    ++out.probes;
    return probe(value);
  };

  double lo = std::max(0.0, lo_hint);
  double hi;
  ProbeResult best;
  ProbeResult r = attempt(lo);
  if (r.status == conic::SolveStatus::optimal) {
    best = r;
    hi = cfg.beta_hi;
    ProbeResult rh = attempt(hi);
    if (rh.status == conic::SolveStatus::optimal) {
      out.outcome = MaxOutcome::bracket_top_feasible;
      out.value = hi;
      out.multipliers = rh.multipliers;
      out.certificates = rh.certificates;
      out.message = "objective still feasible at the bracket top";
      return out;
    }
    if (rh.status != conic::SolveStatus::infeasible) {
      out.outcome = MaxOutcome::solver_failure;
      out.message = rh.message;
      return out;
    }
  } else if (r.status == conic::SolveStatus::infeasible && lo_hint < lo) {
    ProbeResult r2 = attempt(lo_hint);
    if (r2.status == conic::SolveStatus::infeasible) {
      out.outcome = MaxOutcome::infeasible_at_lo;
      out.value = lo_hint;
      return out;
    }
    if (r2.status != conic::SolveStatus::optimal) {
      out.outcome = MaxOutcome::solver_failure;
      out.message = r2.message;
      return out;
    }
    best = r2;
    hi = lo;  // known infeasible
    lo = lo_hint;
  } else if (r.status == conic::SolveStatus::infeasible) {
    out.outcome = MaxOutcome::infeasible_at_lo;
    out.value = lo;
    return out;
  } else {
    out.outcome = MaxOutcome::solver_failure;
    out.message = r.message;
    return out;
  }

  while (hi - lo > cfg.beta_tol) {
    const double mid = 0.5 * (lo + hi);
    ProbeResult rm = attempt(mid);
    if (rm.status == conic::SolveStatus::optimal) {
      lo = mid;
      best = rm;
    } else if (rm.status == conic::SolveStatus::infeasible) {
      hi = mid;
    } else {
      out.outcome = MaxOutcome::solver_failure;
      out.message = rm.message;
      return out;
    }
  }
  // Step down until the returned point carries clean certificates; loose
  // interior-point exits can otherwise overstate the objective slightly.
  for (int polish = 0; polish < 5 && !best.certificates_ok; ++polish) {
    const double cand = lo - cfg.beta_tol * std::pow(2.0, polish);
    ProbeResult rp = attempt(cand);
    if (rp.status == conic::SolveStatus::optimal) {
      lo = cand;
      best = rp;
    }
  }
  out.outcome = MaxOutcome::found;
  out.value = lo;
  out.multipliers = best.multipliers;
  out.certificates = best.certificates;
  if (!best.certificates_ok)
    out.message = "certificates at the returned objective are loose";
  return out;
}

}  // namespace

MaximizeResult maximize_beta(const RegularFormSystem& sys,
                             const SynthesisConfig& cfg, const Polynomial& V,
                             const PolyVector& S, double lo_hint) {
  Resolved r = resolve(sys, cfg, false);
  const Polynomial Vw = poly::transplant(V, r.vars);
  const PolyVector Sw = poly::transplant(S, r.vars);

  Polynomial neg_vdot = Polynomial::zero(r.vars);
  for (size_t i = 0; i < r.z1.size(); ++i)
    neg_vdot -= Vw.differentiate(r.z1[i]) * r.f1[static_cast<int>(i)];

  auto probe = [&](double beta) {
    SosProgram prog(r.vars);
    auto s2u = prog.add_unknown_polynomial(
        monos_range(r.vars, 0, cfg.deg_s2, r.all), "s2");
    auto s3u = prog.add_unknown_polynomial(
        monos_range(r.vars, 0, cfg.deg_s3, r.all), "s3");
    std::vector<UnknownPoly> qu;
    for (int i = 0; i < sys.m; ++i)
      qu.push_back(prog.add_unknown_polynomial(
          monos_range(r.vars, 1, cfg.deg_q, r.all),
          "q" + std::to_string(i + 1)));

    prog.add_sos_constraint(pp(Vw - r.l1), "V floor");

    ParametricPolynomial dec = pp(neg_vdot - r.l2);
    dec = dec + s2u.as_parametric(r.vars).times(
                    Vw - Polynomial::constant(r.vars, 1.0));
    for (int i = 0; i < sys.m; ++i)
      dec = dec + qu[i].as_parametric(r.vars).times(Sw[i]);
    prog.add_sos_constraint(dec, "decrease");

    ParametricPolynomial cont =
        pp(Polynomial::constant(r.vars, 1.0) - Vw) +
        s3u.as_parametric(r.vars).times(
            r.shape - Polynomial::constant(r.vars, beta));
    prog.add_sos_constraint(cont, "containment");
    prog.add_sos_constraint(s2u.as_parametric(r.vars), "multiplier s2");
    prog.add_sos_constraint(s3u.as_parametric(r.vars), "multiplier s3");

    auto sol =
        sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
    ProbeResult res;
    res.status = sol.status;
    res.certificates_ok = sol.all_certificates_ok;
    res.message = sol.message;
    if (sol.status == conic::SolveStatus::optimal) {
      res.multipliers["s2"] = s2u.value(r.vars, sol.param_values);
      res.multipliers["s3"] = s3u.value(r.vars, sol.param_values);
      for (int i = 0; i < sys.m; ++i)
        res.multipliers["q" + std::to_string(i + 1)] =
            qu[i].value(r.vars, sol.param_values);
      res.certificates = sol.certificates;
    }
    return res;
  };
  return run_bisection(probe, lo_hint, cfg);
}

MaximizeResult maximize_rate_global(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const Polynomial& V, const PolyVector& S,
                                    double lo_hint) {
  Resolved r = resolve(sys, cfg, false);
  const Polynomial Vw = poly::transplant(V, r.vars);
  const PolyVector Sw = poly::transplant(S, r.vars);

  Polynomial neg_vdot = Polynomial::zero(r.vars);
  for (size_t i = 0; i < r.z1.size(); ++i)
    neg_vdot -= Vw.differentiate(r.z1[i]) * r.f1[static_cast<int>(i)];

  auto probe = [&](double beta) {
    SosProgram prog(r.vars);
    std::vector<UnknownPoly> qu;
    for (int i = 0; i < sys.m; ++i)
      qu.push_back(prog.add_unknown_polynomial(
          monos_range(r.vars, 1, cfg.deg_q, r.all),
          "q" + std::to_string(i + 1)));

    prog.add_sos_constraint(pp(Vw - r.l1), "V floor");
    ParametricPolynomial dec = pp(neg_vdot - Vw * beta);
    for (int i = 0; i < sys.m; ++i)
      dec = dec + qu[i].as_parametric(r.vars).times(Sw[i]);
    prog.add_sos_constraint(dec, "decrease");

    auto sol =
        sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
    ProbeResult res;
    res.status = sol.status;
    res.certificates_ok = sol.all_certificates_ok;
    res.message = sol.message;
    if (sol.status == conic::SolveStatus::optimal) {
      for (int i = 0; i < sys.m; ++i)
        res.multipliers["q" + std::to_string(i + 1)] =
            qu[i].value(r.vars, sol.param_values);
      res.certificates = sol.certificates;
    }
    return res;
  };
  return run_bisection(probe, lo_hint, cfg);
}

MaximizeResult maximize_rate_finite(const RegularFormSystem& sys,
                                    const SynthesisConfig& cfg,
                                    const Eigen::MatrixXd& Q,
                                    const PolyVector& S, double lo_hint,
                                    bool global_variant) {
  Resolved r = resolve(sys, cfg, true);
  const PolyVector Sw = poly::transplant(S, r.vars);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q);
  if (eig.eigenvalues().minCoeff() < cfg.eps_Q - 1e-9) {
    MaximizeResult out;
    out.outcome = MaxOutcome::solver_failure;
    out.message = "fixed Q violates its positive-definite floor";
    return out;
  }

  Polynomial V = Polynomial::zero(r.vars);
  Polynomial Vdot = Polynomial::zero(r.vars);
  for (int i = 0; i < r.w.size(); ++i)
    for (int j = 0; j < r.w.size(); ++j) {
      V += r.w[i] * r.w[j] * Q(i, j);
      Vdot += (r.wdot[i] * r.w[j] + r.w[i] * r.wdot[j]) * Q(i, j);
    }

  auto probe = [&](double c) {
    SosProgram prog(r.vars);
    auto Ku = prog.add_unknown_polynomial(
        monos_range(r.vars, 0, cfg.deg_K, r.all), "K");
    std::vector<UnknownPoly> qu;
    for (int i = 0; i < sys.m; ++i)
      qu.push_back(prog.add_unknown_polynomial(
          monos_range(r.vars, 1, cfg.deg_q, r.all),
          "q" + std::to_string(i + 1)));

    ParametricPolynomial dec =
        pp(-Vdot.pow(cfg.r_exp) -
           r.w.dot(r.w).pow(cfg.p_exp) * std::pow(c, cfg.r_exp));
    dec = dec + Ku.as_parametric(r.vars).times(r.variety);
    std::optional<UnknownPoly> s2u, s3u;
    if (!global_variant) {
      s2u = prog.add_unknown_polynomial(
          monos_range(r.vars, 0, cfg.deg_s2, r.all), "s2");
      dec = dec + s2u->as_parametric(r.vars).times(
                      V - Polynomial::constant(r.vars, 1.0));
    }
    for (int i = 0; i < sys.m; ++i)
      dec = dec + qu[i].as_parametric(r.vars).times(Sw[i]);
    prog.add_sos_constraint(dec, "decrease");

    if (!global_variant) {
      s3u = prog.add_unknown_polynomial(
          monos_range(r.vars, 0, cfg.deg_s3, r.all), "s3");
      ParametricPolynomial cont =
          pp(Polynomial::constant(r.vars, 1.0) - V) +
          s3u->as_parametric(r.vars).times(
              r.shape -
              Polynomial::constant(r.vars, cfg.finite_containment_level));
      prog.add_sos_constraint(cont, "containment");
      prog.add_sos_constraint(s2u->as_parametric(r.vars), "multiplier s2");
      prog.add_sos_constraint(s3u->as_parametric(r.vars), "multiplier s3");
    }

    auto sol =
        sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
    ProbeResult res;
    res.status = sol.status;
    res.certificates_ok = sol.all_certificates_ok;
    res.message = sol.message;
    if (sol.status == conic::SolveStatus::optimal) {
      res.multipliers["K"] = Ku.value(r.vars, sol.param_values);
      if (s2u) res.multipliers["s2"] = s2u->value(r.vars, sol.param_values);
      if (s3u) res.multipliers["s3"] = s3u->value(r.vars, sol.param_values);
      for (int i = 0; i < sys.m; ++i)
        res.multipliers["q" + std::to_string(i + 1)] =
            qu[i].value(r.vars, sol.param_values);
      res.certificates = sol.certificates;
    }
    return res;
  };
  return run_bisection(probe, lo_hint, cfg);
}

MaximizeResult maximize_containment(const Polynomial& V,
                                    const Polynomial& shape,
                                    const SynthesisConfig& cfg) {
  const VarsPtr vars = V.vars() ? V.vars() : shape.vars();
  const Polynomial Vw = poly::transplant(V, vars);
  const Polynomial pw = poly::transplant(shape, vars);
  std::vector<int> all;
  for (int i = 0; i < vars->count(); ++i) all.push_back(i);

  auto probe = [&](double beta) {
    SosProgram prog(vars);
    auto s3u = prog.add_unknown_polynomial(
        monos_range(vars, 0, cfg.deg_s3, all), "s3");
    ParametricPolynomial cont =
        pp(Polynomial::constant(vars, 1.0) - Vw) +
        s3u.as_parametric(vars).times(pw - Polynomial::constant(vars, beta));
    prog.add_sos_constraint(cont, "containment");
    prog.add_sos_constraint(s3u.as_parametric(vars), "multiplier s3");
    auto sol =
        sosprog::solve(prog, make_solver(cfg), cfg.cert_tol, cfg.eig_tol);
    ProbeResult res;
    res.status = sol.status;
    res.certificates_ok = sol.all_certificates_ok;
    res.message = sol.message;
    if (sol.status == conic::SolveStatus::optimal) {
      res.multipliers["s3"] = s3u.value(vars, sol.param_values);
      res.certificates = sol.certificates;
    }
    return res;
  };
  return run_bisection(probe, 0.0, cfg);
}

// ---------------------------------------------------------------------------
// Alternation drivers

namespace {

struct AlternationHooks {
  std::function<StepOutcome(const Polynomial& s2, const PolyVector& q,
                            double objective)>
      certificate;
  std::function<MaximizeResult(const StepOutcome& step, double lo_hint)>
      maximize;
  bool rate_semantics = false;  // zero objective is a distinct edge case
};

SynthesisResult run_alternation(const RegularFormSystem& sys,
                                const SynthesisConfig& cfg, Mode mode,
                                const AlternationHooks& hooks) {
  Resolved r = resolve(sys, cfg, mode == Mode::finite ||
                                     mode == Mode::finite_global);
  SynthesisResult result;
  result.mode = mode;
  result.vars = r.vars;
  result.floor_l1 = r.l1;
  result.floor_l2 = r.l2;
  result.shape = r.shape;
  if (mode == Mode::finite || mode == Mode::finite_global) {
    result.w = r.w;
    result.p_exp = cfg.p_exp;
    result.r_exp = cfg.r_exp;
    result.alpha = double(cfg.p_exp) / double(cfg.r_exp);
    result.containment_level = cfg.finite_containment_level;
  }

  double objective = cfg.beta_lo;
  Polynomial s2 = r.init_s2;
  PolyVector q = r.init_q;

  for (int iter = 1; iter <= cfg.max_iter; ++iter) {
    // The maximize phase reports its value only to beta_tol, so the
    // certificate phase targets one tolerance below it.
    const double cert_target = objective - cfg.beta_tol;
    StepOutcome step = hooks.certificate(s2, q, cert_target);
    result.log.push_back(
        {iter, "certificate", conic::to_string(step.status), cert_target});
    if (step.status == conic::SolveStatus::infeasible) {
      result.status = iter == 1 ? SynthStatus::infeasible_from_init
                                : SynthStatus::solver_failure;
      result.note = iter == 1
                        ? "no certificate exists for the initial multipliers"
                        : "lost feasibility after a successful iteration";
      return result;
    }
    if (step.status != conic::SolveStatus::optimal) {
      result.status = SynthStatus::solver_failure;
      result.note = step.message;
      return result;
    }
    result.V = step.V;
    result.S = step.S;
    result.Q = step.Q;

    MaximizeResult mx = hooks.maximize(step, objective);
    result.log.push_back({iter, "maximize",
                          mx.outcome == MaxOutcome::found
                              ? "found"
                              : mx.outcome == MaxOutcome::bracket_top_feasible
                                    ? "bracket-top"
                                    : mx.outcome == MaxOutcome::infeasible_at_lo
                                          ? "infeasible-at-lo"
                                          : "failure",
                          std::isnan(mx.value) ? objective : mx.value});
    if (mx.outcome == MaxOutcome::solver_failure) {
      result.status = SynthStatus::solver_failure;
      result.note = mx.message;
      return result;
    }
    if (mx.outcome == MaxOutcome::infeasible_at_lo) {
      result.status = iter == 1 ? SynthStatus::infeasible_from_init
                                : SynthStatus::solver_failure;
      result.note = "objective search lost the known feasible level";
      return result;
    }

    const double improvement = mx.value - objective;
    objective = mx.value;
    result.objective = objective;
    result.multipliers = mx.multipliers;
    for (const auto& [k, v] : step.multipliers)
      if (!result.multipliers.count(k)) result.multipliers[k] = v;
    result.certificates = mx.certificates;

    // Rates below the bisection tolerance sit under the numerical noise
    // floor of the certificates and are not accepted as success.
    if (objective > cfg.beta_tol) {
      result.status = SynthStatus::success;
      if (mx.outcome == MaxOutcome::bracket_top_feasible)
        result.note = mx.message;
      if (mode == Mode::roa) result.containment_level = objective;
      return result;
    }
    if (improvement < cfg.beta_tol) {
      if (hooks.rate_semantics && std::abs(objective) <= cfg.beta_tol) {
        result.status = SynthStatus::zero_rate;
        result.note = "decrease certified only at vanishing rate";
      } else {
        result.status = SynthStatus::iteration_cap;
        result.note = "alternation stalled below the acceptance threshold";
      }
      return result;
    }
    if (mx.multipliers.count("s2")) s2 = mx.multipliers.at("s2");
    {
      std::vector<Polynomial> qrows;
      for (int i = 0; i < sys.m; ++i) {
        auto it = mx.multipliers.find("q" + std::to_string(i + 1));
        qrows.push_back(it != mx.multipliers.end() ? it->second : q[i]);
      }
      q = PolyVector(qrows);
    }
  }
  result.status = SynthStatus::iteration_cap;
  result.note = "iteration cap reached";
  return result;
}

}  // namespace

SynthesisResult synthesize_roa(const RegularFormSystem& sys,
                               const SynthesisConfig& cfg) {
  require_shape_positive_definite(resolve(sys, cfg, false), cfg);
  AlternationHooks hooks;
  hooks.certificate = [&](const Polynomial& s2, const PolyVector& q,
                          double beta) {
    return certificate_step_roa(sys, cfg, s2, q, beta);
  };
  hooks.maximize = [&](const StepOutcome& step, double lo) {
    return maximize_beta(sys, cfg, step.V, step.S, lo);
  };
  hooks.rate_semantics = false;
  return run_alternation(sys, cfg, Mode::roa, hooks);
}

SynthesisResult synthesize_global(const RegularFormSystem& sys,
                                  const SynthesisConfig& cfg) {
  AlternationHooks hooks;
  hooks.certificate = [&](const Polynomial&, const PolyVector& q,
                          double beta) {
    return certificate_step_global(sys, cfg, q, beta);
  };
  hooks.maximize = [&](const StepOutcome& step, double lo) {
    return maximize_rate_global(sys, cfg, step.V, step.S, lo);
  };
  hooks.rate_semantics = true;
  return run_alternation(sys, cfg, Mode::global, hooks);
}

SynthesisResult synthesize_finite_time(const RegularFormSystem& sys,
                                       const SynthesisConfig& cfg,
                                       bool global_variant) {
  if (!global_variant)
    require_shape_positive_definite(resolve(sys, cfg, true), cfg);

  // With the manifold pinned and the Gram of V frozen, nothing is left for
  // the certificate phase to search: the rate maximization alone decides.
  if (cfg.fixed_S) {
    Resolved r = resolve(sys, cfg, true);
    SynthesisResult result;
    result.mode = global_variant ? Mode::finite_global : Mode::finite;
    result.vars = r.vars;
    result.floor_l1 = r.l1;
    result.floor_l2 = r.l2;
    result.shape = r.shape;
    result.w = r.w;
    result.p_exp = cfg.p_exp;
    result.r_exp = cfg.r_exp;
    result.alpha = double(cfg.p_exp) / double(cfg.r_exp);
    result.containment_level = cfg.finite_containment_level;
    result.S = poly::transplant(*cfg.fixed_S, r.vars);
    result.Q = Eigen::MatrixXd::Identity(r.w.size(), r.w.size());
    result.V = r.w.dot(r.w);

    MaximizeResult mx = maximize_rate_finite(sys, cfg, result.Q, result.S,
                                             cfg.beta_lo, global_variant);
    result.log.push_back({1, "maximize",
                          mx.outcome == MaxOutcome::found ? "found" : "other",
                          std::isnan(mx.value) ? cfg.beta_lo : mx.value});
    switch (mx.outcome) {
      case MaxOutcome::solver_failure:
        result.status = SynthStatus::solver_failure;
        result.note = mx.message;
        return result;
      case MaxOutcome::infeasible_at_lo:
        result.status = SynthStatus::infeasible_from_init;
        result.note = "no decrease certificate exists for the fixed manifold";
        return result;
      default:
        break;
    }
    result.objective = mx.value;
    result.multipliers = mx.multipliers;
    result.certificates = mx.certificates;
    if (mx.value > cfg.beta_tol) {
      result.status = SynthStatus::success;
      if (mx.outcome == MaxOutcome::bracket_top_feasible)
        result.note = mx.message;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(result.Q);
      result.lambda_min_Q_inv = 1.0 / eig.eigenvalues().maxCoeff();
      result.settling_coeff =
          1.0 /
          (result.objective * std::pow(result.lambda_min_Q_inv, result.alpha) *
           (1.0 - result.alpha));
    } else if (std::abs(mx.value) <= cfg.beta_tol) {
      result.status = SynthStatus::zero_rate;
      result.note = "decrease certified only at vanishing rate";
    } else {
      result.status = SynthStatus::iteration_cap;
      result.note = "fixed manifold caps the certified rate below zero";
    }
    return result;
  }

  AlternationHooks hooks;
  hooks.certificate = [&](const Polynomial& s2, const PolyVector& q,
                          double c) {
    return certificate_step_finite(sys, cfg, s2, q, c, global_variant);
  };
  hooks.maximize = [&](const StepOutcome& step, double lo) {
    return maximize_rate_finite(sys, cfg, step.Q, step.S, lo, global_variant);
  };
  hooks.rate_semantics = true;
  SynthesisResult result = run_alternation(
      sys, cfg, global_variant ? Mode::finite_global : Mode::finite, hooks);
  if (result.status == SynthStatus::success && result.Q.size() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(result.Q);
    const double lmax = eig.eigenvalues().maxCoeff();
    result.lambda_min_Q_inv = 1.0 / lmax;
    const double a = result.alpha;
    result.settling_coeff =
        1.0 / (result.objective * std::pow(result.lambda_min_Q_inv, a) *
               (1.0 - a));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Independent verification

namespace {

std::optional<double> enclosing_radius(const Polynomial& g, double level,
                                       const std::vector<int>& indices,
                                       int total_dims, Rng& rng) {
  double radius = 1.0;
  for (int grow = 0; grow < 120; ++grow) {
    double worst = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 256; ++s) {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(total_dims);
      double norm = 0.0;
      std::vector<double> dir(indices.size());
      for (auto& d : dir) {
        d = rng.uniform(-1.0, 1.0);
        norm += d * d;
      }
      norm = std::sqrt(std::max(norm, 1e-12));
      for (size_t i = 0; i < indices.size(); ++i)
        x[indices[i]] = radius * dir[i] / norm;
      worst = std::min(worst, g.evaluate(x));
    }
    if (worst > level) return radius;
    radius *= 1.3;
  }
  return std::nullopt;
}

}  // namespace

VerifyReport verify_result(const RegularFormSystem& sys,
                           const SynthesisResult& result, long samples,
                           uint64_t seed) {
  VerifyReport report;
  if (result.status != SynthStatus::success) {
    report.constraints_rebuilt = false;
    report.notes.push_back("result did not report success");
    return report;
  }
  const VarsPtr& vars = result.vars;
  const bool finite =
      result.mode == Mode::finite || result.mode == Mode::finite_global;
  const PolyVector f1 = poly::transplant(sys.f1, vars);
  const auto z1 = sys.z1_indices();

  auto mult = [&](const std::string& name) -> std::optional<Polynomial> {
    auto it = result.multipliers.find(name);
    if (it == result.multipliers.end()) return std::nullopt;
    return it->second;
  };

  // Rebuild the certified constraint polynomials from the stored pieces and
  // re-check each stored Gram certificate against them.
  std::map<std::string, Polynomial> expected;
  expected["V floor"] = result.V - result.floor_l1;
  {
    Polynomial vdot = Polynomial::zero(vars);
    if (finite) {
      poly::PolyMatrix jw = result.w.jacobian(z1);
      for (int i = 0; i < result.w.size(); ++i) {
        Polynomial wdot_i = Polynomial::zero(vars);
        for (size_t j = 0; j < z1.size(); ++j)
          wdot_i += jw(i, static_cast<int>(j)) * f1[static_cast<int>(j)];
        for (int j = 0; j < result.w.size(); ++j)
          vdot += (wdot_i * result.w[j]) *
                  result.Q(i, j) * 2.0;
      }
      // V = w'Qw with symmetric Q: d/dt gives 2 w'Q wdot. The certificate
      // carries the decrease through its r-th power.
      Polynomial dec =
          -vdot.pow(result.r_exp) - result.w.dot(result.w).pow(result.p_exp) *
                                        std::pow(result.objective,
                                                 result.r_exp);
      const int slack = *vars->slack_index();
      if (auto K = mult("K")) {
        Polynomial variety = Polynomial::variable(vars, slack).pow(result.r_exp) -
                             result.w.dot(result.w).pow(result.p_exp);
        dec += *K * variety;
      }
      if (result.mode == Mode::finite) {
        if (auto s2 = mult("s2"))
          dec += *s2 * (result.V - Polynomial::constant(vars, 1.0));
      }
      for (int i = 0; i < sys.m; ++i)
        if (auto qi = mult("q" + std::to_string(i + 1))) dec += *qi * result.S[i];
      expected["decrease"] = dec;
      expected.erase("V floor");  // positivity is the Q eigenvalue floor here
    } else {
      for (size_t i = 0; i < z1.size(); ++i)
        vdot += result.V.differentiate(z1[i]) * f1[static_cast<int>(i)];
      Polynomial dec = -vdot;
      if (result.mode == Mode::roa) {
        if (auto s2 = mult("s2"))
          dec += *s2 * (result.V - Polynomial::constant(vars, 1.0));
        dec -= result.floor_l2;
      } else {
        dec -= result.V * result.objective;
      }
      for (int i = 0; i < sys.m; ++i)
        if (auto qi = mult("q" + std::to_string(i + 1))) dec += *qi * result.S[i];
      expected["decrease"] = dec;
    }
  }
  if (result.mode == Mode::roa || result.mode == Mode::finite) {
    const double level = result.mode == Mode::roa ? result.objective
                                                  : result.containment_level;
    if (auto s3 = mult("s3"))
      expected["containment"] =
          *s3 * (result.shape - Polynomial::constant(vars, level)) +
          Polynomial::constant(vars, 1.0) - result.V;
  }
  for (const auto& name : {"s2", "s3"})
    if (auto s = mult(name)) expected[std::string("multiplier ") + name] = *s;

  for (const auto& cert : result.certificates) {
    auto it = expected.find(cert.label);
    if (it == expected.end()) {
      report.notes.push_back("no rebuild rule for certificate '" + cert.label +
                             "'");
      continue;
    }
    ++report.certificates_checked;
    if (!sosprog::check_certificate(it->second, cert)) {
      ++report.certificate_failures;
      auto fresh = sosprog::make_certificate(cert.label, it->second,
                                             cert.basis, cert.gram);
      report.notes.push_back("certificate '" + cert.label +
                             "' failed: residual=" +
                             std::to_string(fresh.residual) +
                             " min_eig=" + std::to_string(fresh.min_eig));
    }
  }
  if (finite) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(result.Q);
    ++report.certificates_checked;
    if (eig.eigenvalues().minCoeff() < -1e-9) ++report.certificate_failures;
  }

  // Sampling checks.
  Rng rng(seed);
  const int nv = vars->count();
  smc::ControlLaw law;
  law.S = result.S;
  if (finite)
    law.slack = smc::SlackDef{result.w, result.p_exp, result.r_exp};
  std::optional<smc::SlidingDynamics> sliding;
  try {
    sliding.emplace(law, sys);
  } catch (const smc::UnsolvableManifold& e) {
    report.notes.push_back(std::string("manifold not reducible: ") + e.what());
  }

  // Containment: {shape <= beta} must sit inside {V <= 1}.
  if (result.mode == Mode::roa && result.objective > 0.0) {
    std::vector<int> state_idx;
    for (int i = 0; i < sys.n; ++i) state_idx.push_back(i);
    auto radius =
        enclosing_radius(result.shape, result.objective, state_idx, nv, rng);
    if (!radius) {
      report.notes.push_back("could not bound the shape sublevel set");
    } else {
      Eigen::VectorXd x = Eigen::VectorXd::Zero(nv);
      for (long i = 0; i < samples; ++i) {
        for (int d : state_idx) x[d] = rng.uniform(-*radius, *radius);
        if (result.shape.evaluate(x) > result.objective) continue;
        ++report.containment_tested;
        if (result.V.evaluate(x) > 1.0 + 1e-6) ++report.containment_violations;
      }
    }
  }

  // Decrease along the reduced dynamics.
  if (sliding) {
    const int dz1 = sys.n - sys.m;
    std::vector<int> z1idx(z1.begin(), z1.end());
    std::optional<double> vradius;
    if (result.mode == Mode::roa || result.mode == Mode::finite)
      vradius = enclosing_radius(result.V, 1.0, z1idx, nv, rng);

    Polynomial vdot_poly = Polynomial::zero(vars);
    if (finite) {
      poly::PolyMatrix jw = result.w.jacobian(z1);
      for (int i = 0; i < result.w.size(); ++i) {
        Polynomial wdot_i = Polynomial::zero(vars);
        for (size_t j = 0; j < z1.size(); ++j)
          wdot_i += jw(i, static_cast<int>(j)) * f1[static_cast<int>(j)];
        for (int j = 0; j < result.w.size(); ++j)
          vdot_poly += wdot_i * result.w[j] * result.Q(i, j) * 2.0;
      }
    } else {
      for (size_t i = 0; i < z1.size(); ++i)
        vdot_poly += result.V.differentiate(z1[i]) * f1[static_cast<int>(i)];
    }

    for (long i = 0; i < samples; ++i) {
      Eigen::VectorXd z1v(dz1);
      const double box = vradius ? *vradius : 2.0;
      for (int d = 0; d < dz1; ++d) z1v[d] = rng.uniform(-box, box);
      Eigen::VectorXd probe_state = Eigen::VectorXd::Zero(nv);
      for (int d = 0; d < dz1; ++d) probe_state[d] = z1v[d];
      const double vval = result.V.evaluate(probe_state);
      if (result.mode == Mode::roa || result.mode == Mode::finite)
        if (vval > 1.0) continue;
      if (z1v.norm() < 1e-3) continue;
      Eigen::VectorXd full;
      try {
        full = sliding->full_state(z1v);
      } catch (const smc::UnsolvableManifold&) {
        ++report.root_failures;
        continue;
      }
      if (result.mode == Mode::global && full.norm() > 2.0) continue;
      const Eigen::VectorXd aug = law.augment(full);
      ++report.decrease_tested;
      const double vdot = vdot_poly.evaluate(aug);
      if (vdot >= 0.0) ++report.decrease_violations;
      if (result.mode == Mode::roa &&
          vdot > -result.floor_l2.evaluate(aug) + 1e-6)
        ++report.floor_violations;
      if (result.mode == Mode::global &&
          vdot + result.objective * result.V.evaluate(aug) > 1e-6)
        ++report.rate_violations;
      if (finite) {
        const double mval = law.slack->value(full);
        if (vdot + result.objective * mval > 1e-6) ++report.rate_violations;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json poly_json(const Polynomial& p) { return poly::to_string(p); }

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (long i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) return Eigen::MatrixXd();
  const long rows = static_cast<long>(j.size());
  const long cols = static_cast<long>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (long i = 0; i < rows; ++i)
    for (long c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  return m;
}

json maybe_nan(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

double nan_or(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

}  // namespace

std::string result_to_json(const SynthesisResult& result) {
  json j;
  j["format"] = "smcforge-result-v1";
  j["mode"] = to_string(result.mode);
  j["status"] = to_string(result.status);
  j["variables"] = result.vars->names();
  if (auto s = result.vars->slack_index())
    j["slack_index"] = *s;
  else
    j["slack_index"] = nullptr;
  j["objective"] = maybe_nan(result.objective);
  j["containment_level"] = maybe_nan(result.containment_level);
  j["alpha"] = maybe_nan(result.alpha);
  j["settling_coeff"] = maybe_nan(result.settling_coeff);
  j["lambda_min_Q_inv"] = maybe_nan(result.lambda_min_Q_inv);
  j["V"] = poly_json(result.V);
  json srows = json::array();
  for (int i = 0; i < result.S.size(); ++i) srows.push_back(poly_json(result.S[i]));
  j["S"] = srows;
  j["Q"] = result.Q.size() > 0 ? matrix_json(result.Q) : json(nullptr);
  if (result.w.size() > 0) {
    json wrows = json::array();
    for (int i = 0; i < result.w.size(); ++i) wrows.push_back(poly_json(result.w[i]));
    j["w"] = wrows;
    j["p_exp"] = result.p_exp;
    j["r_exp"] = result.r_exp;
  } else {
    j["w"] = nullptr;
    j["p_exp"] = 0;
    j["r_exp"] = 0;
  }
  json mults = json::object();
  for (const auto& [k, v] : result.multipliers) mults[k] = poly_json(v);
  j["multipliers"] = mults;
  j["floor_l1"] = poly_json(result.floor_l1);
  j["floor_l2"] = poly_json(result.floor_l2);
  j["shape"] = poly_json(result.shape);
  json certs = json::array();
  for (const auto& c : result.certificates) {
    json cj;
    cj["label"] = c.label;
    json basis = json::array();
    for (const auto& m : c.basis) basis.push_back(to_string(m, *result.vars));
    cj["basis"] = basis;
    cj["gram"] = matrix_json(c.gram);
    cj["residual"] = c.residual;
    cj["min_eig"] = c.min_eig;
    cj["trace_norm"] = c.trace_norm;
    certs.push_back(cj);
  }
  j["certificates"] = certs;
  json log = json::array();
  for (const auto& rec : result.log) {
    json lj;
    lj["iteration"] = rec.iteration;
    lj["phase"] = rec.phase;
    lj["outcome"] = rec.outcome;
    lj["objective"] = rec.objective;
    log.push_back(lj);
  }
  j["log"] = log;
  j["note"] = result.note;
  return j.dump(2) + "\n";
}

SynthesisResult result_from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.contains("format") || j["format"] != "smcforge-result-v1")
    throw StructuralError("unrecognized result document");
  SynthesisResult r;
  auto mode = mode_from_string(j["mode"].get<std::string>());
  if (!mode) throw StructuralError("unknown mode in result document");
  r.mode = *mode;
  if (j.contains("status"))
    for (int s = 0; s < 5; ++s)
      if (j["status"].get<std::string>() ==
          to_string(static_cast<SynthStatus>(s)))
        r.status = static_cast<SynthStatus>(s);
  std::vector<std::string> names = j["variables"].get<std::vector<std::string>>();
  std::optional<int> slack;
  if (j.contains("slack_index") && !j["slack_index"].is_null())
    slack = j["slack_index"].get<int>();
  r.vars = poly::IndeterminateSet::make(names, slack);
  auto field = [&](const char* key) {
    return j.contains(key) ? j.at(key) : json(nullptr);
  };
  r.objective = nan_or(field("objective"));
  r.containment_level = nan_or(field("containment_level"));
  r.alpha = nan_or(field("alpha"));
  r.settling_coeff = nan_or(field("settling_coeff"));
  r.lambda_min_Q_inv = nan_or(field("lambda_min_Q_inv"));
  r.V = poly::parse_polynomial(j["V"].get<std::string>(), r.vars);
  {
    std::vector<Polynomial> rows;
    for (const auto& s : j["S"])
      rows.push_back(poly::parse_polynomial(s.get<std::string>(), r.vars));
    if (!rows.empty()) r.S = PolyVector(rows);
  }
  if (!field("Q").is_null()) r.Q = matrix_from_json(j["Q"]);
  if (!field("w").is_null()) {
    std::vector<Polynomial> rows;
    for (const auto& s : j["w"])
      rows.push_back(poly::parse_polynomial(s.get<std::string>(), r.vars));
    r.w = PolyVector(rows);
    r.p_exp = j.value("p_exp", 0);
    r.r_exp = j.value("r_exp", 0);
  }
  if (j.contains("multipliers"))
    for (const auto& [k, v] : j["multipliers"].items())
      r.multipliers[k] = poly::parse_polynomial(v.get<std::string>(), r.vars);
  if (j.contains("floor_l1"))
    r.floor_l1 =
        poly::parse_polynomial(j["floor_l1"].get<std::string>(), r.vars);
  if (j.contains("floor_l2"))
    r.floor_l2 =
        poly::parse_polynomial(j["floor_l2"].get<std::string>(), r.vars);
  if (j.contains("shape"))
    r.shape = poly::parse_polynomial(j["shape"].get<std::string>(), r.vars);
  if (j.contains("certificates"))
    for (const auto& cj : j["certificates"]) {
      GramCertificate c;
      c.label = cj["label"].get<std::string>();
      for (const auto& b : cj["basis"]) {
        Polynomial pb = poly::parse_polynomial(b.get<std::string>(), r.vars);
        c.basis.push_back(pb.terms().begin()->first);
      }
      c.gram = matrix_from_json(cj["gram"]);
      c.residual = cj["residual"].get<double>();
      c.min_eig = cj["min_eig"].get<double>();
      c.trace_norm = cj["trace_norm"].get<double>();
      r.certificates.push_back(std::move(c));
    }
  if (j.contains("log"))
    for (const auto& lj : j["log"])
      r.log.push_back({lj["iteration"].get<int>(),
                       lj["phase"].get<std::string>(),
                       lj["outcome"].get<std::string>(),
                       lj["objective"].get<double>()});
  r.note = j.value("note", std::string());
  return r;
}

}  // namespace smcforge::synthesis
