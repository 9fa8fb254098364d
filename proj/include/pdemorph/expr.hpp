#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdemorph/errors.hpp"

namespace pdemorph {

enum class ExprKind { Constant, Variable, Unary, Binary };

enum class UnaryOp { Neg, Exp, Log, Sin, Cos, Sqrt, Abs, Sign };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };

/// Variable assignment used by eval(). Later set() calls on the same name
/// overwrite earlier ones.
class Bindings {
 public:
  Bindings() = default;
  Bindings& set(std::string name, double value);
  const double* find(std::string_view name) const;
  double at(std::string_view name) const;  // throws EvalError if unbound
  const std::vector<std::pair<std::string, double>>& entries() const { return vars_; }

 private:
  std::vector<std::pair<std::string, double>> vars_;
};

/// Immutable symbolic expression. Copies share structure; all operations
/// build new values, so Expr is safe to share across threads.
class Expr {
 public:
  struct Node;

  Expr();  // constant 0

  static Expr constant(double v);
  static Expr variable(std::string name);

  ExprKind kind() const;
  double constant_value() const;         // Constant only
  const std::string& var_name() const;   // Variable only
  UnaryOp unary_op() const;              // Unary only
  BinaryOp binary_op() const;            // Binary only
  const Expr& child0() const;            // Unary/Binary
  const Expr& child1() const;            // Binary only

  bool is_constant(double v) const;

 private:
  explicit Expr(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const Node> node_;

  friend Expr make_unary(UnaryOp, Expr);
  friend Expr make_binary(BinaryOp, Expr, Expr);
};

// Smart constructors. Constant subtrees fold (including additive and
// multiplicative identities); nothing else is simplified.
Expr make_unary(UnaryOp op, Expr a);
Expr make_binary(BinaryOp op, Expr a, Expr b);

Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);
Expr operator/(Expr a, Expr b);
Expr operator-(Expr a);
Expr pow(Expr base, Expr exponent);
Expr exp(Expr a);
Expr log(Expr a);
Expr sin(Expr a);
Expr cos(Expr a);
Expr sqrt(Expr a);
Expr abs(Expr a);
Expr sign(Expr a);

/// Parses the expression grammar:
///   expr  := term (('+'|'-') term)*
///   term  := unary (('*'|'/') unary)*
///   unary := '-' unary | power
///   power := base ('^' unary)?          (right-associative)
///   base  := number | ident | ident '(' expr ')' | '(' expr ')'
/// Functions: exp, log, sin, cos, sqrt, abs, sign. Unknown function names and
/// malformed input throw ParseError with a byte offset.
Expr parse(std::string_view src);

/// Evaluates with every free variable bound. Domain failures (log/sqrt out of
/// domain, division by zero, fractional power of a negative base, non-finite
/// result) throw EvalError.
double eval(const Expr& e, const Bindings& b);

/// Partial derivative with respect to `var`. abs differentiates to sign;
/// sign'(x) := 0 everywhere (matching the abs'(0) := 0 convention).
Expr diff(const Expr& e, std::string_view var);

/// Simultaneous substitution of variables by expressions.
Expr subst(const Expr& e, const std::map<std::string, Expr>& repl);

std::set<std::string> free_vars(const Expr& e);
bool depends_on(const Expr& e, std::string_view var);

/// Structural equality (after the constructors' constant folding).
bool equal(const Expr& a, const Expr& b);

/// Prints with minimal parentheses; parse(to_string(e)) rebuilds an
/// identical tree. Constants use shortest exact decimal form.
std::string to_string(const Expr& e);

}  // namespace pdemorph
