#include "smcforge/problem.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace smcforge::problem {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using poly::Polynomial;
using poly::PolyVector;
using poly::VarsPtr;
using synthesis::SynthesisResult;

namespace {

[[noreturn]] void fail(const std::string& origin, const std::string& key,
                       const std::string& msg) {
  throw ProblemError(origin + ": key '" + key + "': " + msg);
}

Polynomial parse_expr(const json& j, const std::string& key,
                      const VarsPtr& vars, const std::string& origin) {
  if (!j.is_string()) fail(origin, key, "expected a polynomial expression string");
  try {
    return poly::parse_polynomial(j.get<std::string>(), vars);
  } catch (const std::exception& e) {
    fail(origin, key, e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ProblemError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ProblemError("cannot write " + path);
  out << content;
  if (!out) throw ProblemError("write failed for " + path);
}

}  // namespace

ProblemFile parse_problem_text(const std::string& text,
                               const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ProblemError(origin + ": " + e.what());
  }
  ProblemFile p;
  auto require = [&](const char* key) -> const json& {
    if (!j.contains(key)) fail(origin, key, "missing");
    return j.at(key);
  };

  p.name = j.value("name", std::string("problem"));
  const int n = require("n").get<int>();
  const int m = require("m").get<int>();
  if (n <= 0 || m <= 0 || m >= n)
    fail(origin, "n/m", "need 0 < m < n");

  std::vector<std::string> names =
      require("state_names").get<std::vector<std::string>>();
  if (static_cast<int>(names.size()) != n)
    fail(origin, "state_names", "need exactly n names");
  for (const auto& s : names)
    if (s == "M") fail(origin, "state_names", "'M' is reserved for the slack");
  auto vars = poly::IndeterminateSet::make(names);
  // Synthesis-side expressions may reference the slack symbol.
  std::vector<std::string> ext_names = names;
  ext_names.push_back("M");
  auto ext = poly::IndeterminateSet::make(ext_names,
                                          static_cast<int>(names.size()));

  p.system.n = n;
  p.system.m = m;
  p.system.vars = vars;

  const json& f1 = require("f1");
  if (!f1.is_array() || static_cast<int>(f1.size()) != n - m)
    fail(origin, "f1", "need n-m expressions");
  std::vector<Polynomial> f1_rows;
  for (size_t i = 0; i < f1.size(); ++i)
    f1_rows.push_back(
        parse_expr(f1[i], "f1[" + std::to_string(i) + "]", vars, origin));
  p.system.f1 = PolyVector(f1_rows);

  const json& f2 = require("f2");
  if (!f2.is_array() || static_cast<int>(f2.size()) != m)
    fail(origin, "f2", "need m expressions");
  std::vector<Polynomial> f2_rows;
  for (size_t i = 0; i < f2.size(); ++i)
    f2_rows.push_back(
        parse_expr(f2[i], "f2[" + std::to_string(i) + "]", vars, origin));
  p.system.f2 = PolyVector(f2_rows);

  const json& L = require("L");
  if (!L.is_array() || static_cast<int>(L.size()) != m)
    fail(origin, "L", "need an m x m matrix of expressions");
  p.system.L = poly::PolyMatrix(vars, m, m);
  for (int r = 0; r < m; ++r) {
    if (!L[r].is_array() || static_cast<int>(L[r].size()) != m)
      fail(origin, "L", "need an m x m matrix of expressions");
    for (int c = 0; c < m; ++c)
      p.system.L(r, c) = parse_expr(
          L[r][c], "L[" + std::to_string(r) + "][" + std::to_string(c) + "]",
          vars, origin);
  }

  p.system.phi1 = parse_expr(require("phi1"), "phi1", vars, origin);
  p.system.eta = j.value("eta", 0.1);
  try {
    p.system.validate();
  } catch (const std::exception& e) {
    fail(origin, "system", e.what());
  }

  const std::string mode_str = j.value("mode", std::string("global"));
  auto mode = synthesis::mode_from_string(mode_str);
  if (!mode) fail(origin, "mode", "unknown mode '" + mode_str + "'");
  p.mode = *mode;

  if (j.contains("synthesis")) {
    const json& sj = j.at("synthesis");
    auto& cfg = p.config;
    cfg.deg_V = sj.value("deg_V", cfg.deg_V);
    cfg.deg_S = sj.value("deg_S", cfg.deg_S);
    cfg.deg_q = sj.value("deg_q", cfg.deg_q);
    cfg.deg_s1 = sj.value("deg_s1", cfg.deg_s1);
    cfg.deg_s2 = sj.value("deg_s2", cfg.deg_s2);
    cfg.deg_s3 = sj.value("deg_s3", cfg.deg_s3);
    cfg.deg_K = sj.value("deg_K", cfg.deg_K);
    cfg.eps_l = sj.value("eps_l", cfg.eps_l);
    cfg.eps_Q = sj.value("eps_Q", cfg.eps_Q);
    cfg.beta_lo = sj.value("beta_lo", cfg.beta_lo);
    cfg.beta_hi = sj.value("beta_hi", cfg.beta_hi);
    cfg.beta_tol = sj.value("beta_tol", cfg.beta_tol);
    cfg.max_iter = sj.value("max_iter", cfg.max_iter);
    cfg.p_exp = sj.value("p_exp", cfg.p_exp);
    cfg.r_exp = sj.value("r_exp", cfg.r_exp);
    cfg.finite_containment_level =
        sj.value("finite_containment_level", cfg.finite_containment_level);
    cfg.manifold_uses_slack =
        sj.value("manifold_uses_slack", cfg.manifold_uses_slack);
    if (sj.contains("shape"))
      cfg.shape = parse_expr(sj.at("shape"), "synthesis.shape", vars, origin);
    if (sj.contains("init_s2"))
      cfg.init_s2 =
          parse_expr(sj.at("init_s2"), "synthesis.init_s2", vars, origin);
    auto parse_rows = [&](const char* key, int expect) {
      const json& rows = sj.at(key);
      if (!rows.is_array() || static_cast<int>(rows.size()) != expect)
        fail(origin, std::string("synthesis.") + key,
             "need " + std::to_string(expect) + " expressions");
      std::vector<Polynomial> out;
      for (size_t i = 0; i < rows.size(); ++i)
        out.push_back(parse_expr(rows[i],
                                 std::string("synthesis.") + key + "[" +
                                     std::to_string(i) + "]",
                                 ext, origin));
      return PolyVector(out);
    };
    if (sj.contains("init_q")) cfg.init_q = parse_rows("init_q", m);
    if (sj.contains("w")) cfg.w = parse_rows("w", n - m);
    if (sj.contains("fixed_S")) cfg.fixed_S = parse_rows("fixed_S", m);
  }

  if (j.contains("sim")) {
    const json& sj = j.at("sim");
    if (sj.contains("x0")) {
      auto x0 = sj.at("x0").get<std::vector<double>>();
      if (static_cast<int>(x0.size()) != n)
        fail(origin, "sim.x0", "need n entries");
      p.sim.x0 = Eigen::Map<Eigen::VectorXd>(x0.data(), x0.size());
    }
    p.sim.tf = sj.value("tf", p.sim.tf);
    p.sim.dt = sj.value("dt", p.sim.dt);
    p.sim.delta = sj.value("delta", p.sim.delta);
    if (sj.contains("perturbation")) {
      const json& pj = sj.at("perturbation");
      const std::string kind = pj.value("kind", std::string("zero"));
      if (kind == "zero")
        p.sim.perturbation.kind = sim::PerturbationModel::Kind::zero;
      else if (kind == "sinusoid")
        p.sim.perturbation.kind = sim::PerturbationModel::Kind::sinusoid;
      else if (kind == "worst-case-anti-sliding")
        p.sim.perturbation.kind =
            sim::PerturbationModel::Kind::worst_case_anti_sliding;
      else
        fail(origin, "sim.perturbation.kind", "unknown kind '" + kind + "'");
      if (pj.contains("amplitude"))
        p.sim.perturbation.amplitude = parse_expr(
            pj.at("amplitude"), "sim.perturbation.amplitude", vars, origin);
      p.sim.perturbation.omega = pj.value("omega", 5.0);
      p.sim.perturbation.phase = pj.value("phase", 0.0);
    }
  }
  if (p.sim.x0.size() == 0) p.sim.x0 = Eigen::VectorXd::Zero(n);
  return p;
}

ProblemFile parse_problem(const std::string& path) {
  return parse_problem_text(read_file(path), path);
}

std::string problem_to_json(const ProblemFile& p) {
  json j;
  j["name"] = p.name;
  j["n"] = p.system.n;
  j["m"] = p.system.m;
  j["state_names"] = p.system.vars->names();
  json f1 = json::array();
  for (int i = 0; i < p.system.f1.size(); ++i)
    f1.push_back(poly::to_string(p.system.f1[i]));
  j["f1"] = f1;
  json f2 = json::array();
  for (int i = 0; i < p.system.f2.size(); ++i)
    f2.push_back(poly::to_string(p.system.f2[i]));
  j["f2"] = f2;
  json L = json::array();
  for (int r = 0; r < p.system.L.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < p.system.L.cols(); ++c)
      row.push_back(poly::to_string(p.system.L(r, c)));
    L.push_back(row);
  }
  j["L"] = L;
  j["phi1"] = poly::to_string(p.system.phi1);
  j["eta"] = p.system.eta;
  j["mode"] = synthesis::to_string(p.mode);

  json sj;
  sj["deg_V"] = p.config.deg_V;
  sj["deg_S"] = p.config.deg_S;
  sj["deg_q"] = p.config.deg_q;
  sj["deg_s1"] = p.config.deg_s1;
  sj["deg_s2"] = p.config.deg_s2;
  sj["deg_s3"] = p.config.deg_s3;
  sj["deg_K"] = p.config.deg_K;
  sj["eps_l"] = p.config.eps_l;
  sj["eps_Q"] = p.config.eps_Q;
  sj["beta_lo"] = p.config.beta_lo;
  sj["beta_hi"] = p.config.beta_hi;
  sj["beta_tol"] = p.config.beta_tol;
  sj["max_iter"] = p.config.max_iter;
  sj["p_exp"] = p.config.p_exp;
  sj["r_exp"] = p.config.r_exp;
  sj["finite_containment_level"] = p.config.finite_containment_level;
  sj["manifold_uses_slack"] = p.config.manifold_uses_slack;
  if (p.config.shape.vars()) sj["shape"] = poly::to_string(p.config.shape);
  if (p.config.init_s2.vars())
    sj["init_s2"] = poly::to_string(p.config.init_s2);
  auto rows_json = [&](const PolyVector& v) {
    json rows = json::array();
    for (int i = 0; i < v.size(); ++i) rows.push_back(poly::to_string(v[i]));
    return rows;
  };
  if (p.config.init_q.size() > 0) sj["init_q"] = rows_json(p.config.init_q);
  if (p.config.w.size() > 0) sj["w"] = rows_json(p.config.w);
  if (p.config.fixed_S) sj["fixed_S"] = rows_json(*p.config.fixed_S);
  j["synthesis"] = sj;

  json simj;
  simj["x0"] = std::vector<double>(p.sim.x0.data(),
                                   p.sim.x0.data() + p.sim.x0.size());
  simj["tf"] = p.sim.tf;
  simj["dt"] = p.sim.dt;
  simj["delta"] = p.sim.delta;
  json pj;
  switch (p.sim.perturbation.kind) {
    case sim::PerturbationModel::Kind::zero:
      pj["kind"] = "zero";
      break;
    case sim::PerturbationModel::Kind::sinusoid:
      pj["kind"] = "sinusoid";
      break;
    case sim::PerturbationModel::Kind::worst_case_anti_sliding:
      pj["kind"] = "worst-case-anti-sliding";
      break;
  }
  if (p.sim.perturbation.amplitude.vars())
    pj["amplitude"] = poly::to_string(p.sim.perturbation.amplitude);
  pj["omega"] = p.sim.perturbation.omega;
  pj["phase"] = p.sim.perturbation.phase;
  simj["perturbation"] = pj;
  j["sim"] = simj;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Pipelines

smc::ControlLaw law_from_result(const ProblemFile& p,
                                const SynthesisResult& result) {
  smc::ControlLaw law;
  law.S = result.S;
  law.delta = p.sim.delta;
  if (result.mode == synthesis::Mode::finite ||
      result.mode == synthesis::Mode::finite_global) {
    law.slack = smc::SlackDef{result.w, result.p_exp, result.r_exp};
  }
  return law;
}

namespace {

json verify_to_json(const synthesis::VerifyReport& rep) {
  json j;
  j["ok"] = rep.ok();
  j["containment_tested"] = rep.containment_tested;
  j["containment_violations"] = rep.containment_violations;
  j["decrease_tested"] = rep.decrease_tested;
  j["decrease_violations"] = rep.decrease_violations;
  j["floor_violations"] = rep.floor_violations;
  j["rate_violations"] = rep.rate_violations;
  j["root_failures"] = rep.root_failures;
  j["certificates_checked"] = rep.certificates_checked;
  j["certificate_failures"] = rep.certificate_failures;
  j["constraints_rebuilt"] = rep.constraints_rebuilt;
  j["notes"] = rep.notes;
  return j;
}

SynthesisResult run_mode(const ProblemFile& p) {
  switch (p.mode) {
    case synthesis::Mode::roa:
      return synthesis::synthesize_roa(p.system, p.config);
    case synthesis::Mode::global:
      return synthesis::synthesize_global(p.system, p.config);
    case synthesis::Mode::finite:
      return synthesis::synthesize_finite_time(p.system, p.config, false);
    case synthesis::Mode::finite_global:
      return synthesis::synthesize_finite_time(p.system, p.config, true);
  }
  throw ProblemError("unreachable mode");
}

int status_exit_code(synthesis::SynthStatus s) {
  switch (s) {
    case synthesis::SynthStatus::success:
      return kExitSuccess;
    case synthesis::SynthStatus::infeasible_from_init:
    case synthesis::SynthStatus::iteration_cap:
    case synthesis::SynthStatus::zero_rate:
      return kExitInfeasible;
    case synthesis::SynthStatus::solver_failure:
      return kExitSolverFailure;
  }
  return kExitUsage;
}

}  // namespace

int run_synth(const ProblemFile& p, const CommonOptions& opt,
              std::optional<int> max_iter, std::ostream& diag) {
  ProblemFile prob = p;
  if (max_iter) prob.config.max_iter = *max_iter;
  SynthesisResult result = run_mode(prob);
  write_file(opt.out_dir + "/result.json", synthesis::result_to_json(result));
  diag << "synthesis: " << synthesis::to_string(result.status)
       << " objective=" << result.objective << "\n";
  if (result.status != synthesis::SynthStatus::success)
    return status_exit_code(result.status);

  // A successful synthesis is never reported without an independent check.
  auto rep =
      synthesis::verify_result(prob.system, result, opt.verify_samples, opt.seed);
  write_file(opt.out_dir + "/verify.json", verify_to_json(rep).dump(2) + "\n");
  diag << "verify: " << (rep.ok() ? "ok" : "FAILED") << "\n";
  if (!rep.ok()) {
    for (const auto& n : rep.notes) diag << "  " << n << "\n";
    return kExitSolverFailure;
  }
  return kExitSuccess;
}

int run_check(const ProblemFile& p, const std::string& certificate_path,
              const CommonOptions& opt, std::ostream& diag) {
  SynthesisResult result;
  const std::string text = read_file(certificate_path);
  try {
    result = synthesis::result_from_json(text);
  } catch (const std::exception& e) {
    throw ProblemError(certificate_path + ": " + e.what());
  }

  if (result.certificates.empty()) {
    // Bare (V, S) pair: re-derive the algebraic certificates before the
    // sampling pass.
    synthesis::MaximizeResult mx;
    switch (result.mode) {
      case synthesis::Mode::roa:
        mx = synthesis::maximize_beta(p.system, p.config, result.V, result.S,
                                      p.config.beta_lo);
        break;
      case synthesis::Mode::global:
        mx = synthesis::maximize_rate_global(p.system, p.config, result.V,
                                             result.S, p.config.beta_lo);
        break;
      default: {
        Eigen::MatrixXd Q = result.Q;
        if (Q.size() == 0)
          Q = Eigen::MatrixXd::Identity(p.system.n - p.system.m,
                                        p.system.n - p.system.m);
        mx = synthesis::maximize_rate_finite(
            p.system, p.config, Q, result.S, p.config.beta_lo,
            result.mode == synthesis::Mode::finite_global);
        break;
      }
    }
    diag << "re-certification objective: " << mx.value << "\n";
    if (mx.outcome == synthesis::MaxOutcome::solver_failure)
      return kExitSolverFailure;
    if (mx.outcome == synthesis::MaxOutcome::infeasible_at_lo)
      return kExitInfeasible;
    result.status = mx.value > p.config.beta_tol
                        ? synthesis::SynthStatus::success
                        : synthesis::SynthStatus::zero_rate;
    result.objective = mx.value;
    result.multipliers = mx.multipliers;
    result.certificates = mx.certificates;
    if (result.mode == synthesis::Mode::roa)
      result.containment_level = mx.value;
    if (result.status != synthesis::SynthStatus::success)
      return kExitInfeasible;
  }

  // Bare documents carry no floors or shape; they follow this problem's
  // configuration.
  if (!result.floor_l1.vars()) {
    Eigen::MatrixXd table =
        Eigen::MatrixXd::Constant(p.system.n, 1, p.config.eps_l);
    result.floor_l1 = synthesis::even_power_floor(
        result.vars, p.system.z1_indices(), table.topRows(p.system.n - p.system.m));
    std::vector<int> states;
    for (int i = 0; i < p.system.n; ++i) states.push_back(i);
    result.floor_l2 =
        synthesis::even_power_floor(result.vars, states, table);
  }
  if (!result.shape.vars()) {
    if (p.config.shape.vars()) {
      result.shape = poly::transplant(p.config.shape, result.vars);
    } else {
      poly::Polynomial sum = poly::Polynomial::zero(result.vars);
      for (int i = 0; i < p.system.n; ++i) {
        poly::Monomial mo = poly::Monomial::unit(result.vars->count());
        mo.exponents[i] = 2;
        sum += poly::Polynomial::term(result.vars, mo, 1.0);
      }
      result.shape = sum;
    }
  }

  auto rep = synthesis::verify_result(p.system, result, opt.verify_samples,
                                      opt.seed);
  write_file(opt.out_dir + "/verify.json", verify_to_json(rep).dump(2) + "\n");
  write_file(opt.out_dir + "/result.json", synthesis::result_to_json(result));
  diag << "verify: " << (rep.ok() ? "ok" : "FAILED") << "\n";
  for (const auto& n : rep.notes) diag << "  " << n << "\n";
  return rep.ok() ? kExitSuccess : kExitSolverFailure;
}

void emit_plot_data(const sim::Trajectory& traj,
                    const std::vector<std::string>& state_names, int m,
                    const std::string& out_dir) {
  if (traj.size() == 0) throw ProblemError("empty trajectory");
  std::ostringstream states;
  states << "t";
  for (const auto& n : state_names) states << "," << n;
  states << "\n";
  std::ostringstream ctrl;
  ctrl << "t";
  for (int i = 1; i <= m; ++i) ctrl << ",u" << i;
  for (int i = 1; i <= m; ++i) ctrl << ",S" << i;
  ctrl << "\n";
  for (int k = 0; k < traj.size(); ++k) {
    states << sim::format_sig9(traj.times[k]);
    for (int d = 0; d < traj.states[k].size(); ++d)
      states << "," << sim::format_sig9(traj.states[k][d]);
    states << "\n";
    ctrl << sim::format_sig9(traj.times[k]);
    for (int d = 0; d < m; ++d)
      ctrl << "," << sim::format_sig9(traj.inputs[k][d]);
    for (int d = 0; d < m; ++d)
      ctrl << "," << sim::format_sig9(traj.sliding[k][d]);
    ctrl << "\n";
  }
  write_file(out_dir + "/states.csv", states.str());
  write_file(out_dir + "/control_sliding.csv", ctrl.str());
}

int run_sim(const ProblemFile& p, const std::string& certificate_path,
            const CommonOptions& opt, std::optional<Eigen::VectorXd> x0,
            std::optional<double> tf, std::ostream& diag) {
  SynthesisResult result =
      synthesis::result_from_json(read_file(certificate_path));
  if (result.S.size() != p.system.m)
    throw ProblemError("certificate manifold does not match the plant");
  auto law = law_from_result(p, result);

  const Eigen::VectorXd start = x0 ? *x0 : p.sim.x0;
  const double horizon = tf ? *tf : p.sim.tf;
  sim::SimResult run;
  try {
    run = sim::simulate(p.system, law, p.sim.perturbation, start, horizon,
                        p.sim.dt, result.V.vars() ? &result.V : nullptr);
  } catch (const smc::SingularJacobianError& e) {
    diag << "simulation aborted: " << e.what()
         << " (condition number " << e.condition_number << ")\n";
    return kExitSolverFailure;
  }
  write_file(opt.out_dir + "/trajectory.csv",
             sim::trajectory_csv(run.trajectory, p.system.vars->names(),
                                 p.system.m));
  emit_plot_data(run.trajectory, p.system.vars->names(), p.system.m,
                 opt.out_dir);

  auto metrics = sim::reaching_metrics(run.trajectory, p.sim.delta,
                                       p.system.eta);
  auto settle =
      sim::settling_time(run.trajectory, 1e-3, p.system.n - p.system.m);
  json summary;
  summary["diverged"] = run.diverged;
  summary["final_norm"] = run.trajectory.states.back().norm();
  summary["t_reach"] =
      metrics.t_reach ? json(*metrics.t_reach) : json(nullptr);
  summary["max_post_reach_excursion"] = metrics.max_post_reach_excursion;
  summary["reaching_violations"] = metrics.violations;
  summary["settling_time"] = settle ? json(*settle) : json(nullptr);
  write_file(opt.out_dir + "/sim_summary.json", summary.dump(2) + "\n");
  diag << "simulation: " << (run.diverged ? "diverged" : "completed")
       << " final_norm=" << run.trajectory.states.back().norm() << "\n";
  return run.diverged ? kExitSolverFailure : kExitSuccess;
}

int run_report(const std::string& run_dir, std::ostream& diag) {
  json report;
  report["run_dir"] = run_dir;
  json artifacts = json::array();
  for (const char* name :
       {"result.json", "verify.json", "sim_summary.json", "trajectory.csv",
        "states.csv", "control_sliding.csv"})
    if (fs::exists(fs::path(run_dir) / name)) artifacts.push_back(name);
  report["artifacts"] = artifacts;

  const fs::path result_path = fs::path(run_dir) / "result.json";
  if (fs::exists(result_path)) {
    auto result = synthesis::result_from_json(read_file(result_path.string()));
    json rj;
    rj["status"] = synthesis::to_string(result.status);
    rj["mode"] = synthesis::to_string(result.mode);
    rj["objective"] = result.objective;
    report["result"] = rj;
    if (result.status == synthesis::SynthStatus::success) {
      const fs::path verify_path = fs::path(run_dir) / "verify.json";
      if (!fs::exists(verify_path)) {
        diag << "refusing to report an unverified result\n";
        return kExitUsage;
      }
      json vj = json::parse(read_file(verify_path.string()));
      report["verify"] = vj;
      if (!vj.value("ok", false)) {
        diag << "refusing to report a result that failed verification\n";
        return kExitUsage;
      }
    }
  }
  const fs::path sim_path = fs::path(run_dir) / "sim_summary.json";
  if (fs::exists(sim_path))
    report["simulation"] = json::parse(read_file(sim_path.string()));

  write_file((fs::path(run_dir) / "run_report.json").string(),
             report.dump(2) + "\n");
  diag << "report written\n";
  return kExitSuccess;
}

}  // namespace smcforge::problem
