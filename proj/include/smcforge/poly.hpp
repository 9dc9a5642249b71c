#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace smcforge::poly {

struct StructuralError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ordered, immutable set of variable names. One of them may be flagged as
/// the slack symbol used for recasting fractional powers; it behaves like any
/// other variable algebraically and is only treated specially at numeric
/// evaluation time by the simulator.
class IndeterminateSet {
 public:
  static std::shared_ptr<const IndeterminateSet> make(
      std::vector<std::string> names, std::optional<int> slack_index = {});

  int count() const { return static_cast<int>(names_.size()); }
  const std::string& name(int i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int> index_of(const std::string& name) const;
  std::optional<int> slack_index() const { return slack_index_; }
  bool is_slack(int i) const { return slack_index_ && *slack_index_ == i; }

 private:
  IndeterminateSet(std::vector<std::string> names, std::optional<int> slack);
  std::vector<std::string> names_;
  std::optional<int> slack_index_;
};

using VarsPtr = std::shared_ptr<const IndeterminateSet>;

/// Exponent vector over a fixed IndeterminateSet; the all-zero vector is the
/// constant monomial 1.
struct Monomial {
  std::vector<uint16_t> exponents;

  Monomial() = default;
  explicit Monomial(std::vector<uint16_t> e) : exponents(std::move(e)) {}
  static Monomial unit(int nvars) {
    return Monomial(std::vector<uint16_t>(nvars, 0));
  }

  int degree() const;
  bool is_constant() const { return degree() == 0; }
  Monomial times(const Monomial& other) const;
  double evaluate(std::span<const double> point) const;
  bool operator==(const Monomial& other) const {
    return exponents == other.exponents;
  }
};

/// Graded lexicographic order: lower total degree first; within a degree,
/// larger exponent on an earlier variable comes first (x1^2, x1*x2, x2^2).
struct GrlexLess {
  bool operator()(const Monomial& a, const Monomial& b) const;
};

class Polynomial {
 public:
  using TermMap = std::map<Monomial, double, GrlexLess>;

  Polynomial() = default;
  static Polynomial zero(VarsPtr vars);
  static Polynomial constant(VarsPtr vars, double c);
  static Polynomial variable(VarsPtr vars, int index);
  static Polynomial term(VarsPtr vars, Monomial m, double coeff);

  const VarsPtr& vars() const { return vars_; }
  const TermMap& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  int degree() const;
  double coeff(const Monomial& m) const;
  double constant_term() const;
  /// Degree in a single variable.
  int degree_in(int var) const;
  bool depends_on(int var) const { return degree_in(var) > 0; }

  Polynomial operator+(const Polynomial& other) const;
  Polynomial operator-(const Polynomial& other) const;
  Polynomial operator*(const Polynomial& other) const;
  Polynomial operator-() const;
  Polynomial operator*(double s) const;
  Polynomial& operator+=(const Polynomial& other);
  Polynomial& operator-=(const Polynomial& other);
  Polynomial pow(int k) const;

  Polynomial differentiate(int var) const;
  double evaluate(std::span<const double> point) const;
  double evaluate(const Eigen::VectorXd& point) const;
  Polynomial substitute(int var, const Polynomial& expr) const;
  /// Adds a term in place, pruning if the result falls below threshold.
  void add_term(const Monomial& m, double coeff);

  bool same_vars(const Polynomial& other) const;

  static constexpr double kPruneThreshold = 1e-12;

 private:
  explicit Polynomial(VarsPtr vars) : vars_(std::move(vars)) {}
  void require_vars(const Polynomial& other) const;
  VarsPtr vars_;
  TermMap terms_;
};

inline Polynomial operator*(double s, const Polynomial& p) { return p * s; }

/// All monomials of total degree <= d, graded-lex ordered. Count is
/// C(nvars + d, d).
std::vector<Monomial> monomials_up_to(const VarsPtr& vars, int d);
/// Same, restricted to a subset of variables (others held at exponent 0).
std::vector<Monomial> monomials_up_to(const VarsPtr& vars, int d,
                                      const std::vector<int>& support);

class PolyVector {
 public:
  PolyVector() = default;
  PolyVector(VarsPtr vars, int size);
  explicit PolyVector(std::vector<Polynomial> entries);

  int size() const { return static_cast<int>(entries_.size()); }
  const Polynomial& operator[](int i) const { return entries_.at(i); }
  Polynomial& operator[](int i) { return entries_.at(i); }
  const VarsPtr& vars() const { return vars_; }

  Eigen::VectorXd evaluate(std::span<const double> point) const;
  Eigen::VectorXd evaluate(const Eigen::VectorXd& point) const;
  Polynomial dot(const PolyVector& other) const;
  /// Jacobian columns restricted to the given variable indices.
  class PolyMatrix jacobian(const std::vector<int>& wrt) const;

 private:
  VarsPtr vars_;
  std::vector<Polynomial> entries_;
};

class PolyMatrix {
 public:
  PolyMatrix() = default;
  PolyMatrix(VarsPtr vars, int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const Polynomial& operator()(int r, int c) const {
    return entries_.at(r * cols_ + c);
  }
  Polynomial& operator()(int r, int c) { return entries_.at(r * cols_ + c); }
  const VarsPtr& vars() const { return vars_; }

  Eigen::MatrixXd evaluate(std::span<const double> point) const;
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& point) const;
  PolyVector apply(const PolyVector& v) const;

 private:
  VarsPtr vars_;
  int rows_ = 0, cols_ = 0;
  std::vector<Polynomial> entries_;
};

/// Canonical text form: highest-degree terms first, '+'/'-' separated,
/// coefficients printed with the shortest representation that parses back to
/// the identical double.
std::string to_string(const Polynomial& p);
std::string to_string(const Monomial& m, const IndeterminateSet& vars);
std::string format_double(double v);

/// Parses the expression grammar. Beyond the minimal form
/// (coeff*var^k*... joined by +/-), parenthesised subexpressions and powers
/// of them are accepted; '*' is required between factors.
Polynomial parse_polynomial(const std::string& text, const VarsPtr& vars);

/// Re-expresses p over a superset of variables, matching by name.
Polynomial transplant(const Polynomial& p, const VarsPtr& target);
PolyVector transplant(const PolyVector& v, const VarsPtr& target);

}  // namespace smcforge::poly
