#include "smcforge/poly.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>

namespace smcforge::poly {

// ---------------------------------------------------------------------------
// IndeterminateSet

IndeterminateSet::IndeterminateSet(std::vector<std::string> names,
                                   std::optional<int> slack)
    : names_(std::move(names)), slack_index_(slack) {}

std::shared_ptr<const IndeterminateSet> IndeterminateSet::make(
    std::vector<std::string> names, std::optional<int> slack_index) {
  if (names.empty()) throw StructuralError("indeterminate set must be nonempty");
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw StructuralError("empty indeterminate name");
    if (!seen.insert(n).second)
      throw StructuralError("duplicate indeterminate name: " + n);
  }
  if (slack_index && (*slack_index < 0 ||
                      *slack_index >= static_cast<int>(names.size())))
    throw StructuralError("slack index out of range");
  return std::shared_ptr<const IndeterminateSet>(
      new IndeterminateSet(std::move(names), slack_index));
}

std::optional<int> IndeterminateSet::index_of(const std::string& name) const {
  for (int i = 0; i < count(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Monomial

int Monomial::degree() const {
  int d = 0;
  for (auto e : exponents) d += e;
  return d;
}

Monomial Monomial::times(const Monomial& other) const {
  if (exponents.size() != other.exponents.size())
    throw StructuralError("monomial size mismatch");
  Monomial r = *this;
  for (size_t i = 0; i < exponents.size(); ++i)
    r.exponents[i] = static_cast<uint16_t>(r.exponents[i] + other.exponents[i]);
  return r;
}

static double int_pow(double x, int e) {
  double r = 1.0;
  double base = x;
  while (e > 0) {
    if (e & 1) r *= base;
    base *= base;
    e >>= 1;
  }
  return r;
}

double Monomial::evaluate(std::span<const double> point) const {
  if (point.size() != exponents.size())
    throw StructuralError("evaluation point length mismatch");
  double r = 1.0;
  for (size_t i = 0; i < exponents.size(); ++i)
    if (exponents[i] != 0) r *= int_pow(point[i], exponents[i]);
  return r;
}

bool GrlexLess::operator()(const Monomial& a, const Monomial& b) const {
  const int da = a.degree(), db = b.degree();
  if (da != db) return da < db;
  // Within a degree, larger exponent on an earlier variable sorts first.
  return std::lexicographical_compare(b.exponents.begin(), b.exponents.end(),
                                      a.exponents.begin(), a.exponents.end());
}

// ---------------------------------------------------------------------------
// Polynomial

Polynomial Polynomial::zero(VarsPtr vars) { return Polynomial(std::move(vars)); }

Polynomial Polynomial::constant(VarsPtr vars, double c) {
  Polynomial p(std::move(vars));
  p.add_term(Monomial::unit(p.vars_->count()), c);
  return p;
}

Polynomial Polynomial::variable(VarsPtr vars, int index) {
  Polynomial p(std::move(vars));
  if (index < 0 || index >= p.vars_->count())
    throw StructuralError("variable index out of range");
  Monomial m = Monomial::unit(p.vars_->count());
  m.exponents[index] = 1;
  p.add_term(m, 1.0);
  return p;
}

Polynomial Polynomial::term(VarsPtr vars, Monomial m, double coeff) {
  Polynomial p(std::move(vars));
  if (static_cast<int>(m.exponents.size()) != p.vars_->count())
    throw StructuralError("monomial arity mismatch");
  p.add_term(m, coeff);
  return p;
}

int Polynomial::degree() const {
  if (terms_.empty()) return 0;
  return terms_.rbegin()->first.degree();
}

double Polynomial::coeff(const Monomial& m) const {
  auto it = terms_.find(m);
  return it == terms_.end() ? 0.0 : it->second;
}

double Polynomial::constant_term() const {
  if (!vars_) return 0.0;
  return coeff(Monomial::unit(vars_->count()));
}

int Polynomial::degree_in(int var) const {
  int d = 0;
  for (const auto& [m, c] : terms_) d = std::max(d, int(m.exponents.at(var)));
  return d;
}

void Polynomial::require_vars(const Polynomial& other) const {
  if (!same_vars(other))
    throw StructuralError("polynomials over different indeterminate sets");
}

bool Polynomial::same_vars(const Polynomial& other) const {
  if (vars_ == other.vars_) return true;
  if (!vars_ || !other.vars_) return false;
  return vars_->names() == other.vars_->names();
}

void Polynomial::add_term(const Monomial& m, double coeff) {
  auto it = terms_.find(m);
  if (it == terms_.end()) {
    if (std::abs(coeff) >= kPruneThreshold) terms_.emplace(m, coeff);
    return;
  }
  it->second += coeff;
  if (std::abs(it->second) < kPruneThreshold) terms_.erase(it);
}

Polynomial Polynomial::operator+(const Polynomial& other) const {
  require_vars(other);
  Polynomial r = *this;
  for (const auto& [m, c] : other.terms_) r.add_term(m, c);
  return r;
}

Polynomial& Polynomial::operator+=(const Polynomial& other) {
  require_vars(other);
  for (const auto& [m, c] : other.terms_) add_term(m, c);
  return *this;
}

Polynomial Polynomial::operator-(const Polynomial& other) const {
  require_vars(other);
  Polynomial r = *this;
  for (const auto& [m, c] : other.terms_) r.add_term(m, -c);
  return r;
}

Polynomial& Polynomial::operator-=(const Polynomial& other) {
  require_vars(other);
  for (const auto& [m, c] : other.terms_) add_term(m, -c);
  return *this;
}

Polynomial Polynomial::operator-() const {
  Polynomial r(vars_);
  for (const auto& [m, c] : terms_) r.terms_.emplace(m, -c);
  return r;
}

Polynomial Polynomial::operator*(double s) const {
  Polynomial r(vars_);
  for (const auto& [m, c] : terms_) r.add_term(m, c * s);
  return r;
}

Polynomial Polynomial::operator*(const Polynomial& other) const {
  require_vars(other);
  Polynomial r(vars_);
  for (const auto& [ma, ca] : terms_)
    for (const auto& [mb, cb] : other.terms_) r.add_term(ma.times(mb), ca * cb);
  return r;
}

Polynomial Polynomial::pow(int k) const {
  if (k < 0) throw StructuralError("negative polynomial power");
  Polynomial r = Polynomial::constant(vars_, 1.0);
  Polynomial base = *this;
  while (k > 0) {
    if (k & 1) r = r * base;
    base = base * base;
    k >>= 1;
  }
  return r;
}

Polynomial Polynomial::differentiate(int var) const {
  if (var < 0 || var >= vars_->count())
    throw StructuralError("derivative variable index out of range");
  Polynomial r(vars_);
  for (const auto& [m, c] : terms_) {
    const int e = m.exponents[var];
    if (e == 0) continue;
    Monomial d = m;
    d.exponents[var] = static_cast<uint16_t>(e - 1);
    r.add_term(d, c * e);
  }
  return r;
}

double Polynomial::evaluate(std::span<const double> point) const {
  if (static_cast<int>(point.size()) != vars_->count())
    throw StructuralError("evaluation point length mismatch");
  double r = 0.0;
  for (const auto& [m, c] : terms_) r += c * m.evaluate(point);
  return r;
}

double Polynomial::evaluate(const Eigen::VectorXd& point) const {
  return evaluate(std::span<const double>(point.data(), point.size()));
}

Polynomial Polynomial::substitute(int var, const Polynomial& expr) const {
  require_vars(expr);
  if (var < 0 || var >= vars_->count())
    throw StructuralError("substitution variable index out of range");
  if (expr.depends_on(var))
    throw StructuralError("substitution expression contains the variable: " +
                          vars_->name(var));
  const int max_pow = degree_in(var);
  std::vector<Polynomial> powers;
  powers.push_back(Polynomial::constant(vars_, 1.0));
  for (int k = 1; k <= max_pow; ++k) powers.push_back(powers.back() * expr);

  Polynomial r(vars_);
  for (const auto& [m, c] : terms_) {
    Monomial rest = m;
    const int e = rest.exponents[var];
    rest.exponents[var] = 0;
    r += Polynomial::term(vars_, rest, c) * powers[e];
  }
  return r;
}

// ---------------------------------------------------------------------------
// Monomial enumeration

static void enumerate_rec(const std::vector<int>& support, size_t pos,
                          int remaining, Monomial& cur,
                          std::vector<Monomial>& out) {
  if (pos == support.size()) {
    out.push_back(cur);
    return;
  }
  for (int e = 0; e <= remaining; ++e) {
    cur.exponents[support[pos]] = static_cast<uint16_t>(e);
    enumerate_rec(support, pos + 1, remaining - e, cur, out);
  }
  cur.exponents[support[pos]] = 0;
}

std::vector<Monomial> monomials_up_to(const VarsPtr& vars, int d,
                                      const std::vector<int>& support) {
  if (d < 0) throw StructuralError("negative degree bound");
  Monomial cur = Monomial::unit(vars->count());
  std::vector<Monomial> out;
  enumerate_rec(support, 0, d, cur, out);
  std::sort(out.begin(), out.end(), GrlexLess{});
  return out;
}

std::vector<Monomial> monomials_up_to(const VarsPtr& vars, int d) {
  std::vector<int> support(vars->count());
  for (int i = 0; i < vars->count(); ++i) support[i] = i;
  return monomials_up_to(vars, d, support);
}

// ---------------------------------------------------------------------------
// PolyVector / PolyMatrix

PolyVector::PolyVector(VarsPtr vars, int size) : vars_(std::move(vars)) {
  entries_.assign(size, Polynomial::zero(vars_));
}

PolyVector::PolyVector(std::vector<Polynomial> entries)
    : entries_(std::move(entries)) {
  if (entries_.empty()) throw StructuralError("empty polynomial vector");
  vars_ = entries_.front().vars();
  for (const auto& p : entries_)
    if (!p.same_vars(entries_.front()))
      throw StructuralError("vector entries over different indeterminate sets");
}

Eigen::VectorXd PolyVector::evaluate(std::span<const double> point) const {
  Eigen::VectorXd v(size());
  for (int i = 0; i < size(); ++i) v[i] = entries_[i].evaluate(point);
  return v;
}

Eigen::VectorXd PolyVector::evaluate(const Eigen::VectorXd& point) const {
  return evaluate(std::span<const double>(point.data(), point.size()));
}

Polynomial PolyVector::dot(const PolyVector& other) const {
  if (size() != other.size()) throw StructuralError("dot size mismatch");
  Polynomial r = Polynomial::zero(vars_);
  for (int i = 0; i < size(); ++i) r += entries_[i] * other.entries_[i];
  return r;
}

PolyMatrix PolyVector::jacobian(const std::vector<int>& wrt) const {
  PolyMatrix j(vars_, size(), static_cast<int>(wrt.size()));
  for (int r = 0; r < size(); ++r)
    for (size_t c = 0; c < wrt.size(); ++c)
      j(r, static_cast<int>(c)) = entries_[r].differentiate(wrt[c]);
  return j;
}

PolyMatrix::PolyMatrix(VarsPtr vars, int rows, int cols)
    : vars_(std::move(vars)), rows_(rows), cols_(cols) {
  entries_.assign(static_cast<size_t>(rows) * cols, Polynomial::zero(vars_));
}

Eigen::MatrixXd PolyMatrix::evaluate(std::span<const double> point) const {
  Eigen::MatrixXd m(rows_, cols_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) m(r, c) = (*this)(r, c).evaluate(point);
  return m;
}

Eigen::MatrixXd PolyMatrix::evaluate(const Eigen::VectorXd& point) const {
  return evaluate(std::span<const double>(point.data(), point.size()));
}

PolyVector PolyMatrix::apply(const PolyVector& v) const {
  if (v.size() != cols_) throw StructuralError("matrix-vector size mismatch");
  PolyVector out(vars_, rows_);
  for (int r = 0; r < rows_; ++r) {
    Polynomial acc = Polynomial::zero(vars_);
    for (int c = 0; c < cols_; ++c) acc += (*this)(r, c) * v[c];
    out[r] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Printing

std::string format_double(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  return buf;
}

std::string to_string(const Monomial& m, const IndeterminateSet& vars) {
  std::string s;
  for (size_t i = 0; i < m.exponents.size(); ++i) {
    if (m.exponents[i] == 0) continue;
    if (!s.empty()) s += "*";
    s += vars.name(static_cast<int>(i));
    if (m.exponents[i] > 1) s += "^" + std::to_string(m.exponents[i]);
  }
  return s.empty() ? "1" : s;
}

std::string to_string(const Polynomial& p) {
  if (p.is_zero()) return "0";
  std::string out;
  // Highest-degree terms first.
  for (auto it = p.terms().rbegin(); it != p.terms().rend(); ++it) {
    const double c = it->second;
    const bool first = out.empty();
    const double a = std::abs(c);
    if (first)
      out += (c < 0 ? "-" : "");
    else
      out += (c < 0 ? " - " : " + ");
    const std::string mono = to_string(it->first, *p.vars());
    if (mono == "1") {
      out += format_double(a);
    } else if (a == 1.0) {
      out += mono;
    } else {
      out += format_double(a) + "*" + mono;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct Lexer {
  const std::string& s;
  size_t pos = 0;

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
      ++pos;
  }
  bool eof() {
    skip_ws();
    return pos >= s.size();
  }
  char peek() {
    skip_ws();
    return pos < s.size() ? s[pos] : '\0';
  }
  bool accept(char c) {
    skip_ws();
    if (pos < s.size() && s[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& msg) {
    throw ParseError(msg + " at position " + std::to_string(pos) + " in '" +
                     s + "'");
  }
};

class Parser {
 public:
  Parser(const std::string& text, const VarsPtr& vars)
      : lex_{text}, vars_(vars) {}

  Polynomial parse() {
    Polynomial p = expr();
    if (!lex_.eof()) lex_.fail("unexpected trailing input");
    return p;
  }

 private:
  Polynomial expr() {
    bool neg = false;
    if (lex_.accept('-'))
      neg = true;
    else
      lex_.accept('+');
    Polynomial acc = term();
    if (neg) acc = -acc;
    while (true) {
      if (lex_.accept('+'))
        acc += term();
      else if (lex_.accept('-'))
        acc -= term();
      else
        break;
    }
    return acc;
  }

  Polynomial term() {
    Polynomial acc = factor();
    while (lex_.accept('*')) acc = acc * factor();
    return acc;
  }

  Polynomial factor() {
    Polynomial base = primary();
    if (lex_.accept('^')) {
      const int e = integer();
      base = base.pow(e);
    }
    return base;
  }

  Polynomial primary() {
    const char c = lex_.peek();
    if (c == '(') {
      lex_.accept('(');
      Polynomial p = expr();
      if (!lex_.accept(')')) lex_.fail("expected ')'");
      return p;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
    lex_.fail("expected number, variable or '('");
  }

  Polynomial number() {
    lex_.skip_ws();
    const char* start = lex_.s.c_str() + lex_.pos;
    char* end = nullptr;
    const double v = std::strtod(start, &end);
    if (end == start) lex_.fail("malformed number");
    lex_.pos += static_cast<size_t>(end - start);
    return Polynomial::constant(vars_, v);
  }

  Polynomial identifier() {
    lex_.skip_ws();
    size_t start = lex_.pos;
    while (lex_.pos < lex_.s.size() &&
           (std::isalnum(static_cast<unsigned char>(lex_.s[lex_.pos])) ||
            lex_.s[lex_.pos] == '_'))
      ++lex_.pos;
    const std::string name = lex_.s.substr(start, lex_.pos - start);
    auto idx = vars_->index_of(name);
    if (!idx) throw ParseError("unknown variable name: " + name);
    return Polynomial::variable(vars_, *idx);
  }

  int integer() {
    lex_.skip_ws();
    size_t start = lex_.pos;
    while (lex_.pos < lex_.s.size() &&
           std::isdigit(static_cast<unsigned char>(lex_.s[lex_.pos])))
      ++lex_.pos;
    if (lex_.pos == start) lex_.fail("expected integer exponent");
    return std::stoi(lex_.s.substr(start, lex_.pos - start));
  }

  Lexer lex_;
  VarsPtr vars_;
};

}  // namespace

Polynomial parse_polynomial(const std::string& text, const VarsPtr& vars) {
  return Parser(text, vars).parse();
}

Polynomial transplant(const Polynomial& p, const VarsPtr& target) {
  if (p.vars() && p.vars()->names() == target->names()) {
    Polynomial q = p;
    return q;
  }
  // Only variables actually used need to exist in the target set.
  std::vector<int> map(p.vars()->count(), -1);
  Polynomial out = Polynomial::zero(target);
  for (const auto& [m, c] : p.terms()) {
    Monomial t = Monomial::unit(target->count());
    for (size_t i = 0; i < m.exponents.size(); ++i) {
      if (m.exponents[i] == 0) continue;
      if (map[i] < 0) {
        auto idx = target->index_of(p.vars()->name(static_cast<int>(i)));
        if (!idx)
          throw StructuralError("transplant target lacks variable " +
                                p.vars()->name(static_cast<int>(i)));
        map[i] = *idx;
      }
      t.exponents[map[i]] = m.exponents[i];
    }
    out.add_term(t, c);
  }
  return out;
}

PolyVector transplant(const PolyVector& v, const VarsPtr& target) {
  std::vector<Polynomial> entries;
  entries.reserve(v.size());
  for (int i = 0; i < v.size(); ++i) entries.push_back(transplant(v[i], target));
  return PolyVector(std::move(entries));
}

}  // namespace smcforge::poly
