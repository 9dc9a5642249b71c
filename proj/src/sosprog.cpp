#include "smcforge/sosprog.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace smcforge::sosprog {

using poly::GrlexLess;
using poly::StructuralError;

// ---------------------------------------------------------------------------
// AffExpr

AffExpr& AffExpr::operator+=(const AffExpr& o) {
  constant += o.constant;
  for (const auto& [id, c] : o.coeffs) {
    coeffs[id] += c;
    if (coeffs[id] == 0.0) coeffs.erase(id);
  }
  return *this;
}

AffExpr AffExpr::operator+(const AffExpr& o) const {
  AffExpr r = *this;
  r += o;
  return r;
}

AffExpr AffExpr::operator-(const AffExpr& o) const {
  return *this + o * -1.0;
}

AffExpr AffExpr::operator*(double s) const {
  AffExpr r;
  r.constant = constant * s;
  for (const auto& [id, c] : coeffs)
    if (c * s != 0.0) r.coeffs[id] = c * s;
  return r;
}

double AffExpr::evaluate(const Eigen::VectorXd& values) const {
  double v = constant;
  for (const auto& [id, c] : coeffs) v += c * values[id];
  return v;
}

// ---------------------------------------------------------------------------
// ParametricPolynomial

void ParametricPolynomial::add_param_term(ParamId id, const Polynomial& shape) {
  if (shape.is_zero()) return;
  auto it = shapes_.find(id);
  if (it == shapes_.end())
    shapes_.emplace(id, shape);
  else {
    it->second += shape;
    if (it->second.is_zero()) shapes_.erase(it);
  }
}

ParametricPolynomial ParametricPolynomial::operator+(
    const ParametricPolynomial& o) const {
  ParametricPolynomial r(fixed_ + o.fixed_);
  r.shapes_ = shapes_;
  for (const auto& [id, s] : o.shapes_) r.add_param_term(id, s);
  return r;
}

ParametricPolynomial ParametricPolynomial::operator-(
    const ParametricPolynomial& o) const {
  return *this + (-o);
}

ParametricPolynomial ParametricPolynomial::operator-() const {
  ParametricPolynomial r(-fixed_);
  for (const auto& [id, s] : shapes_) r.shapes_.emplace(id, -s);
  return r;
}

ParametricPolynomial ParametricPolynomial::times(const Polynomial& known) const {
  ParametricPolynomial r(fixed_ * known);
  for (const auto& [id, s] : shapes_) r.add_param_term(id, s * known);
  return r;
}

ParametricPolynomial ParametricPolynomial::operator*(double s) const {
  ParametricPolynomial r(fixed_ * s);
  for (const auto& [id, sh] : shapes_) r.add_param_term(id, sh * s);
  return r;
}

ParametricPolynomial ParametricPolynomial::differentiate(int var) const {
  ParametricPolynomial r(fixed_.differentiate(var));
  for (const auto& [id, s] : shapes_) r.add_param_term(id, s.differentiate(var));
  return r;
}

Polynomial ParametricPolynomial::substitute_params(
    const Eigen::VectorXd& values) const {
  Polynomial p = fixed_;
  for (const auto& [id, s] : shapes_) p += s * values[id];
  return p;
}

int ParametricPolynomial::max_degree() const {
  int d = fixed_.is_zero() ? 0 : fixed_.degree();
  for (const auto& [id, s] : shapes_) d = std::max(d, s.degree());
  return d;
}

std::vector<int> ParametricPolynomial::support_vars() const {
  const int n = vars() ? vars()->count() : 0;
  std::vector<char> used(n, 0);
  auto scan = [&](const Polynomial& p) {
    for (const auto& [m, c] : p.terms())
      for (int i = 0; i < n; ++i)
        if (m.exponents[i] > 0) used[i] = 1;
  };
  scan(fixed_);
  for (const auto& [id, s] : shapes_) scan(s);
  std::vector<int> out;
  for (int i = 0; i < n; ++i)
    if (used[i]) out.push_back(i);
  return out;
}

ParametricPolynomial UnknownPoly::as_parametric(const VarsPtr& vars) const {
  ParametricPolynomial p(Polynomial::zero(vars));
  for (size_t i = 0; i < monomials.size(); ++i)
    p.add_param_term(params[i], Polynomial::term(vars, monomials[i], 1.0));
  return p;
}

Polynomial UnknownPoly::value(const VarsPtr& vars,
                              const Eigen::VectorXd& values) const {
  Polynomial p = Polynomial::zero(vars);
  for (size_t i = 0; i < monomials.size(); ++i)
    p += Polynomial::term(vars, monomials[i], values[params[i]]);
  return p;
}

Eigen::MatrixXd UnknownSymMatrix::value(const Eigen::VectorXd& values) const {
  Eigen::MatrixXd m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j <= i; ++j) {
      m(i, j) = values[params[i][j]];
      m(j, i) = m(i, j);
    }
  return m;
}

// ---------------------------------------------------------------------------
// SosProgram

ParamId SosProgram::add_parameter(const std::string& name) {
  param_names_.push_back(name);
  return static_cast<ParamId>(param_names_.size()) - 1;
}

UnknownPoly SosProgram::add_unknown_polynomial(
    const std::vector<Monomial>& monomials, const std::string& name) {
  UnknownPoly u;
  u.monomials = monomials;
  for (const auto& m : monomials)
    u.params.push_back(add_parameter(name + "[" + to_string(m, *vars_) + "]"));
  return u;
}

UnknownSymMatrix SosProgram::add_symmetric_matrix(int dim,
                                                  const std::string& name) {
  UnknownSymMatrix u;
  u.dim = dim;
  u.params.resize(dim);
  for (int i = 0; i < dim; ++i) {
    u.params[i].resize(i + 1);
    for (int j = 0; j <= i; ++j)
      u.params[i][j] = add_parameter(name + "(" + std::to_string(i) + "," +
                                     std::to_string(j) + ")");
  }
  return u;
}

void SosProgram::check_registered(const ParametricPolynomial& p) const {
  for (const auto& [id, s] : p.shapes())
    if (id < 0 || id >= num_params())
      throw StructuralError("constraint references unregistered parameter");
}

void SosProgram::add_sos_constraint(ParametricPolynomial p,
                                    const std::string& label) {
  check_registered(p);
  sos_.push_back({std::move(p), label});
}

void SosProgram::require_matrix_psd(const UnknownSymMatrix& m,
                                    double eps_shift,
                                    const std::string& label) {
  for (const auto& row : m.params)
    for (ParamId id : row)
      if (id < 0 || id >= num_params())
        throw StructuralError(
            "matrix constraint references unregistered parameter");
  matrix_psd_.push_back({m, eps_shift, label});
}

void SosProgram::add_equality(const AffExpr& e) { equalities_.push_back(e); }

void SosProgram::set_objective_maximize(const AffExpr& obj) {
  objective_ = obj;
  has_objective_ = true;
}

std::vector<Monomial> gram_basis(const ParametricPolynomial& p) {
  const int deg = p.max_degree();
  if (deg % 2 != 0) {
    // A fixed odd top degree can never be matched by a Gram expansion. When
    // the top degree is parametric the program may drive those coefficients
    // to zero, so the basis is enlarged to cover them instead.
    if (p.is_purely_fixed())
      throw StructuralError(
          "structurally non-SOS: constraint has odd overall degree " +
          std::to_string(deg));
    return poly::monomials_up_to(p.vars(), (deg + 1) / 2, p.support_vars());
  }
  return poly::monomials_up_to(p.vars(), deg / 2, p.support_vars());
}

std::vector<std::vector<Monomial>> SosProgram::gram_bases() const {
  std::vector<std::vector<Monomial>> out;
  out.reserve(sos_.size());
  for (const auto& e : sos_) out.push_back(gram_basis(e.pp));
  return out;
}

conic::ConicProblem SosProgram::compile() const {
  conic::ConicProblem prob;
  prob.num_free = num_params();

  const auto bases = gram_bases();
  for (const auto& b : bases)
    prob.block_dims.push_back(static_cast<int>(b.size()));
  for (const auto& m : matrix_psd_) prob.block_dims.push_back(m.unknown.dim);

  // Coefficient matching per SOS constraint: for every monomial expressible
  // as a product of two basis elements, the Gram expansion must equal the
  // parametric coefficient.
  for (size_t k = 0; k < sos_.size(); ++k) {
    const auto& basis = bases[k];
    const auto& pp = sos_[k].pp;
    const int nb = static_cast<int>(basis.size());
    std::map<Monomial, std::vector<std::pair<int, int>>, GrlexLess> products;
    for (int i = 0; i < nb; ++i)
      for (int j = 0; j <= i; ++j)
        products[basis[i].times(basis[j])].push_back({i, j});

    for (const auto& [id, shape] : pp.shapes())
      for (const auto& [mono, c] : shape.terms())
        if (!products.count(mono))
          throw StructuralError("parametric monomial outside Gram support");
    for (const auto& [mono, c] : pp.fixed().terms())
      if (!products.count(mono))
        throw StructuralError("fixed monomial outside Gram support");

    for (const auto& [mono, pairs] : products) {
      conic::ConstraintRow row;
      for (const auto& [i, j] : pairs)
        row.matrix_terms.push_back({static_cast<int>(k), i, j, 1.0});
      row.rhs = pp.fixed().coeff(mono);
      for (const auto& [id, shape] : pp.shapes()) {
        const double c = shape.coeff(mono);
        if (c != 0.0) row.free_terms.push_back({id, -c});
      }
      prob.rows.push_back(std::move(row));
    }
  }

  // Matrix PSD requirements: slack block pinned entrywise to M - eps*I.
  for (size_t mk = 0; mk < matrix_psd_.size(); ++mk) {
    const int block = static_cast<int>(sos_.size() + mk);
    const auto& entry = matrix_psd_[mk];
    for (int i = 0; i < entry.unknown.dim; ++i)
      for (int j = 0; j <= i; ++j) {
        conic::ConstraintRow row;
        row.matrix_terms.push_back({block, i, j, i == j ? 1.0 : 0.5});
        row.free_terms.push_back({entry.unknown.params[i][j], -1.0});
        row.rhs = (i == j) ? -entry.eps_shift : 0.0;
        prob.rows.push_back(std::move(row));
      }
  }

  for (const auto& eq : equalities_) {
    conic::ConstraintRow row;
    for (const auto& [id, c] : eq.coeffs) row.free_terms.push_back({id, c});
    row.rhs = -eq.constant;
    prob.rows.push_back(std::move(row));
  }

  if (has_objective_) {
    prob.objective_free.assign(num_params(), 0.0);
    for (const auto& [id, c] : objective_.coeffs) prob.objective_free[id] = c;
  }
  return prob;
}

// ---------------------------------------------------------------------------
// Certificates

Polynomial gram_to_polynomial(const VarsPtr& vars,
                              const std::vector<Monomial>& basis,
                              const Eigen::MatrixXd& gram) {
  Polynomial p = Polynomial::zero(vars);
  const int nb = static_cast<int>(basis.size());
  for (int i = 0; i < nb; ++i)
    for (int j = 0; j <= i; ++j) {
      const double w = (i == j) ? gram(i, i) : gram(i, j) + gram(j, i);
      if (w != 0.0) p += Polynomial::term(vars, basis[i].times(basis[j]), w);
    }
  return p;
}

GramCertificate make_certificate(const std::string& label, const Polynomial& p,
                                 const std::vector<Monomial>& basis,
                                 const Eigen::MatrixXd& gram) {
  GramCertificate cert;
  cert.label = label;
  cert.basis = basis;
  cert.gram = 0.5 * (gram + gram.transpose());

  const Polynomial rec = gram_to_polynomial(p.vars(), basis, cert.gram);
  double residual = 0.0;
  for (const auto& [m, c] : p.terms())
    residual = std::max(residual, std::abs(c - rec.coeff(m)));
  for (const auto& [m, c] : rec.terms())
    residual = std::max(residual, std::abs(c - p.coeff(m)));
  cert.residual = residual;

  if (cert.gram.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cert.gram,
                                                       Eigen::EigenvaluesOnly);
    cert.min_eig = eig.eigenvalues().minCoeff();
    cert.trace_norm = eig.eigenvalues().cwiseAbs().sum();
  }
  return cert;
}

bool check_certificate(const Polynomial& p, const GramCertificate& cert,
                       double cert_tol, double eig_tol) {
  // Re-derive everything; the stored numbers are not trusted.
  GramCertificate fresh =
      make_certificate(cert.label, p, cert.basis, cert.gram);
  return fresh.residual <= cert_tol &&
         fresh.min_eig >= -eig_tol * (1.0 + fresh.trace_norm);
}

SosSolveResult solve(const SosProgram& program,
                     const conic::SolverHandle& solver, double cert_tol,
                     double eig_tol) {
  SosSolveResult result;
  const auto prob = program.compile();
  const auto bases = program.gram_bases();
  auto sol = solver.solve(prob);
  result.status = sol.status;
  result.message = sol.message;
  if (sol.status != conic::SolveStatus::optimal) return result;

  result.param_values = sol.free_values;
  result.objective = sol.objective;
  result.all_certificates_ok = true;
  for (size_t k = 0; k < bases.size(); ++k) {
    const Polynomial pk = program.sos_constraint(static_cast<int>(k))
                              .substitute_params(result.param_values);
    GramCertificate cert = make_certificate(
        program.sos_label(static_cast<int>(k)), pk, bases[k], sol.blocks[k]);
    if (!check_certificate(pk, cert, cert_tol, eig_tol))
      result.all_certificates_ok = false;
    result.certificates.push_back(std::move(cert));
  }
  for (size_t mk = bases.size(); mk < sol.blocks.size(); ++mk)
    result.matrix_values.push_back(sol.blocks[mk]);
  return result;
}

}  // namespace smcforge::sosprog
