#include "pdemorph/expr.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace pdemorph {

struct Expr::Node {
  ExprKind kind = ExprKind::Constant;
  double value = 0.0;
  std::string name;
  UnaryOp uop = UnaryOp::Neg;
  BinaryOp bop = BinaryOp::Add;
  Expr a, b;
};

namespace {

std::shared_ptr<const Expr::Node> const_node(double v) {
  auto n = std::make_shared<Expr::Node>();
  n->kind = ExprKind::Constant;
  n->value = v;
  return n;
}

}  // namespace

Expr::Expr() : node_(const_node(0.0)) {}

Expr Expr::constant(double v) { return Expr(const_node(v)); }

Expr Expr::variable(std::string name) {
  auto n = std::make_shared<Node>();
  n->kind = ExprKind::Variable;
  n->name = std::move(name);
  return Expr(std::move(n));
}

ExprKind Expr::kind() const { return node_->kind; }
double Expr::constant_value() const { return node_->value; }
const std::string& Expr::var_name() const { return node_->name; }
UnaryOp Expr::unary_op() const { return node_->uop; }
BinaryOp Expr::binary_op() const { return node_->bop; }
const Expr& Expr::child0() const { return node_->a; }
const Expr& Expr::child1() const { return node_->b; }

bool Expr::is_constant(double v) const {
  return node_->kind == ExprKind::Constant && node_->value == v;
}

Bindings& Bindings::set(std::string name, double value) {
  for (auto& [n, v] : vars_) {
    if (n == name) {
      v = value;
      return *this;
    }
  }
  vars_.emplace_back(std::move(name), value);
  return *this;
}

const double* Bindings::find(std::string_view name) const {
  for (const auto& [n, v] : vars_) {
    if (n == name) return &v;
  }
  return nullptr;
}

double Bindings::at(std::string_view name) const {
  const double* p = find(name);
  if (!p) throw EvalError("unbound variable '" + std::string(name) + "'");
  return *p;
}

namespace {

// Applies a unary op to a constant. Returns false when the value is outside
// the op's domain or the result is non-finite, so folding is skipped and the
// error surfaces at eval time instead.
bool try_unary(UnaryOp op, double v, double& out) {
  switch (op) {
    case UnaryOp::Neg: out = -v; break;
    case UnaryOp::Exp: out = std::exp(v); break;
    case UnaryOp::Log:
      if (v <= 0) return false;
      out = std::log(v);
      break;
    case UnaryOp::Sin: out = std::sin(v); break;
    case UnaryOp::Cos: out = std::cos(v); break;
    case UnaryOp::Sqrt:
      if (v < 0) return false;
      out = std::sqrt(v);
      break;
    case UnaryOp::Abs: out = std::fabs(v); break;
    case UnaryOp::Sign: out = static_cast<double>((v > 0) - (v < 0)); break;
  }
  return std::isfinite(out);
}

bool is_integer(double v) {
  return std::nearbyint(v) == v && std::fabs(v) < 9.0e15;
}

bool try_binary(BinaryOp op, double x, double y, double& out) {
  switch (op) {
    case BinaryOp::Add: out = x + y; break;
    case BinaryOp::Sub: out = x - y; break;
    case BinaryOp::Mul: out = x * y; break;
    case BinaryOp::Div:
      if (y == 0) return false;
      out = x / y;
      break;
    case BinaryOp::Pow:
      if (x < 0 && !is_integer(y)) return false;
      if (x == 0 && y < 0) return false;
      out = std::pow(x, y);
      break;
  }
  return std::isfinite(out);
}

}  // namespace

Expr make_unary(UnaryOp op, Expr a) {
  if (a.kind() == ExprKind::Constant) {
    double r;
    if (try_unary(op, a.constant_value(), r)) return Expr::constant(r);
  }
  if (op == UnaryOp::Neg && a.kind() == ExprKind::Unary &&
      a.unary_op() == UnaryOp::Neg) {
    return a.child0();
  }
  auto n = std::make_shared<Expr::Node>();
  n->kind = ExprKind::Unary;
  n->uop = op;
  n->a = std::move(a);
  return Expr(std::move(n));
}

Expr make_binary(BinaryOp op, Expr a, Expr b) {
  if (a.kind() == ExprKind::Constant && b.kind() == ExprKind::Constant) {
    double r;
    if (try_binary(op, a.constant_value(), b.constant_value(), r)) {
      return Expr::constant(r);
    }
  }
  switch (op) {
    case BinaryOp::Add:
      if (a.is_constant(0)) return b;
      if (b.is_constant(0)) return a;
      break;
    case BinaryOp::Sub:
      if (b.is_constant(0)) return a;
      if (a.is_constant(0)) return make_unary(UnaryOp::Neg, std::move(b));
      break;
    case BinaryOp::Mul:
      if (a.is_constant(0) || b.is_constant(0)) return Expr::constant(0);
      if (a.is_constant(1)) return b;
      if (b.is_constant(1)) return a;
      break;
    case BinaryOp::Div:
      if (a.is_constant(0)) return Expr::constant(0);
      if (b.is_constant(1)) return a;
      break;
    case BinaryOp::Pow:
      if (b.is_constant(0)) return Expr::constant(1);  // x^0 := 1, incl. 0^0
      if (b.is_constant(1)) return a;
      if (a.is_constant(1)) return Expr::constant(1);
      break;
  }
  auto n = std::make_shared<Expr::Node>();
  n->kind = ExprKind::Binary;
  n->bop = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return Expr(std::move(n));
}

Expr operator+(Expr a, Expr b) { return make_binary(BinaryOp::Add, std::move(a), std::move(b)); }
Expr operator-(Expr a, Expr b) { return make_binary(BinaryOp::Sub, std::move(a), std::move(b)); }
Expr operator*(Expr a, Expr b) { return make_binary(BinaryOp::Mul, std::move(a), std::move(b)); }
Expr operator/(Expr a, Expr b) { return make_binary(BinaryOp::Div, std::move(a), std::move(b)); }
Expr operator-(Expr a) { return make_unary(UnaryOp::Neg, std::move(a)); }
Expr pow(Expr base, Expr exponent) { return make_binary(BinaryOp::Pow, std::move(base), std::move(exponent)); }
Expr exp(Expr a) { return make_unary(UnaryOp::Exp, std::move(a)); }
Expr log(Expr a) { return make_unary(UnaryOp::Log, std::move(a)); }
Expr sin(Expr a) { return make_unary(UnaryOp::Sin, std::move(a)); }
Expr cos(Expr a) { return make_unary(UnaryOp::Cos, std::move(a)); }
Expr sqrt(Expr a) { return make_unary(UnaryOp::Sqrt, std::move(a)); }
Expr abs(Expr a) { return make_unary(UnaryOp::Abs, std::move(a)); }
Expr sign(Expr a) { return make_unary(UnaryOp::Sign, std::move(a)); }

double eval(const Expr& e, const Bindings& b) {
  switch (e.kind()) {
    case ExprKind::Constant:
      return e.constant_value();
    case ExprKind::Variable:
      return b.at(e.var_name());
    case ExprKind::Unary: {
      double v = eval(e.child0(), b);
      double r;
      if (!try_unary(e.unary_op(), v, r)) {
        const char* what = "";
        switch (e.unary_op()) {
          case UnaryOp::Log: what = "log of non-positive value"; break;
          case UnaryOp::Sqrt: what = "sqrt of negative value"; break;
          default: what = "non-finite result"; break;
        }
        std::ostringstream os;
        os << what << " (argument " << v << ")";
        throw EvalError(os.str());
      }
      return r;
    }
    case ExprKind::Binary: {
      double x = eval(e.child0(), b);
      double y = eval(e.child1(), b);
      double r;
      if (!try_binary(e.binary_op(), x, y, r)) {
        std::ostringstream os;
        if (e.binary_op() == BinaryOp::Div && y == 0) {
          os << "division by zero";
        } else if (e.binary_op() == BinaryOp::Pow) {
          os << "power domain error (base " << x << ", exponent " << y << ")";
        } else {
          os << "non-finite result";
        }
        throw EvalError(os.str());
      }
      return r;
    }
  }
  throw EvalError("corrupt expression node");
}

Expr diff(const Expr& e, std::string_view var) {
  switch (e.kind()) {
    case ExprKind::Constant:
      return Expr::constant(0);
    case ExprKind::Variable:
      return Expr::constant(e.var_name() == var ? 1 : 0);
    case ExprKind::Unary: {
      const Expr& a = e.child0();
      Expr da = diff(a, var);
      switch (e.unary_op()) {
        case UnaryOp::Neg: return -da;
        case UnaryOp::Exp: return exp(a) * da;
        case UnaryOp::Log: return da / a;
        case UnaryOp::Sin: return cos(a) * da;
        case UnaryOp::Cos: return -(sin(a) * da);
        case UnaryOp::Sqrt: return da / (Expr::constant(2) * sqrt(a));
        case UnaryOp::Abs: return sign(a) * da;  // abs'(0) := 0 via sign(0) = 0
        case UnaryOp::Sign: return Expr::constant(0);
      }
      break;
    }
    case ExprKind::Binary: {
      const Expr& a = e.child0();
      const Expr& b = e.child1();
      switch (e.binary_op()) {
        case BinaryOp::Add: return diff(a, var) + diff(b, var);
        case BinaryOp::Sub: return diff(a, var) - diff(b, var);
        case BinaryOp::Mul: return diff(a, var) * b + a * diff(b, var);
        case BinaryOp::Div:
          return (diff(a, var) * b - a * diff(b, var)) / (b * b);
        case BinaryOp::Pow:
          if (b.kind() == ExprKind::Constant) {
            double n = b.constant_value();
            return Expr::constant(n) * pow(a, Expr::constant(n - 1)) * diff(a, var);
          }
          return pow(a, b) * (diff(b, var) * log(a) + b * diff(a, var) / a);
      }
      break;
    }
  }
  throw EvalError("corrupt expression node");
}

Expr subst(const Expr& e, const std::map<std::string, Expr>& repl) {
  switch (e.kind()) {
    case ExprKind::Constant:
      return e;
    case ExprKind::Variable: {
      auto it = repl.find(e.var_name());
      return it == repl.end() ? e : it->second;
    }
    case ExprKind::Unary:
      return make_unary(e.unary_op(), subst(e.child0(), repl));
    case ExprKind::Binary:
      return make_binary(e.binary_op(), subst(e.child0(), repl),
                         subst(e.child1(), repl));
  }
  throw EvalError("corrupt expression node");
}

namespace {

void collect_vars(const Expr& e, std::set<std::string>& out) {
  switch (e.kind()) {
    case ExprKind::Constant: return;
    case ExprKind::Variable: out.insert(e.var_name()); return;
    case ExprKind::Unary: collect_vars(e.child0(), out); return;
    case ExprKind::Binary:
      collect_vars(e.child0(), out);
      collect_vars(e.child1(), out);
      return;
  }
}

}  // namespace

std::set<std::string> free_vars(const Expr& e) {
  std::set<std::string> out;
  collect_vars(e, out);
  return out;
}

bool depends_on(const Expr& e, std::string_view var) {
  switch (e.kind()) {
    case ExprKind::Constant: return false;
    case ExprKind::Variable: return e.var_name() == var;
    case ExprKind::Unary: return depends_on(e.child0(), var);
    case ExprKind::Binary:
      return depends_on(e.child0(), var) || depends_on(e.child1(), var);
  }
  return false;
}

bool equal(const Expr& a, const Expr& b) {
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case ExprKind::Constant: {
      double x = a.constant_value(), y = b.constant_value();
      return x == y || (std::isnan(x) && std::isnan(y));
    }
    case ExprKind::Variable:
      return a.var_name() == b.var_name();
    case ExprKind::Unary:
      return a.unary_op() == b.unary_op() && equal(a.child0(), b.child0());
    case ExprKind::Binary:
      return a.binary_op() == b.binary_op() && equal(a.child0(), b.child0()) &&
             equal(a.child1(), b.child1());
  }
  return false;
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

namespace {

// Precedence levels: + - = 1, * / = 2, unary minus = 3, ^ = 4, atoms = 5.
int level_of(const Expr& e) {
  switch (e.kind()) {
    case ExprKind::Constant:
      return e.constant_value() < 0 ? 3 : 5;
    case ExprKind::Variable:
      return 5;
    case ExprKind::Unary:
      return e.unary_op() == UnaryOp::Neg ? 3 : 5;
    case ExprKind::Binary:
      switch (e.binary_op()) {
        case BinaryOp::Add:
        case BinaryOp::Sub: return 1;
        case BinaryOp::Mul:
        case BinaryOp::Div: return 2;
        case BinaryOp::Pow: return 4;
      }
  }
  return 5;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

const char* func_name(UnaryOp op) {
  switch (op) {
    case UnaryOp::Exp: return "exp";
    case UnaryOp::Log: return "log";
    case UnaryOp::Sin: return "sin";
    case UnaryOp::Cos: return "cos";
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Abs: return "abs";
    case UnaryOp::Sign: return "sign";
    case UnaryOp::Neg: return "-";
  }
  return "?";
}

void print_expr(const Expr& e, int min_level, std::string& out) {
  int lvl = level_of(e);
  bool parens = lvl < min_level;
  if (parens) out += '(';
  switch (e.kind()) {
    case ExprKind::Constant:
      out += format_double(e.constant_value());
      break;
    case ExprKind::Variable:
      out += e.var_name();
      break;
    case ExprKind::Unary:
      if (e.unary_op() == UnaryOp::Neg) {
        out += '-';
        print_expr(e.child0(), 3, out);
      } else {
        out += func_name(e.unary_op());
        out += '(';
        print_expr(e.child0(), 0, out);
        out += ')';
      }
      break;
    case ExprKind::Binary: {
      char op = '?';
      int left_min = lvl, right_min = lvl + 1;
      switch (e.binary_op()) {
        case BinaryOp::Add: op = '+'; break;
        case BinaryOp::Sub: op = '-'; break;
        case BinaryOp::Mul: op = '*'; break;
        case BinaryOp::Div: op = '/'; break;
        case BinaryOp::Pow:
          op = '^';
          left_min = 5;   // (x^2)^3 and (-x)^2 keep their shape
          right_min = 4;  // x^2^3 stays right-associative
          break;
      }
      print_expr(e.child0(), left_min, out);
      out += op;
      print_expr(e.child1(), right_min, out);
      break;
    }
  }
  if (parens) out += ')';
}

}  // namespace

std::string to_string(const Expr& e) {
  std::string out;
  print_expr(e, 0, out);
  return out;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

struct Parser {
  std::string_view src;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < src.size() &&
           (src[pos] == ' ' || src[pos] == '\t' || src[pos] == '\n' ||
            src[pos] == '\r')) {
      ++pos;
    }
  }

  bool eat(char c) {
    skip_ws();
    if (pos < src.size() && src[pos] == c) {
      ++pos;
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(std::size_t at, const std::string& msg) const {
    throw ParseError(at, msg);
  }

  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      if (eat('+')) {
        e = make_binary(BinaryOp::Add, std::move(e), parse_term());
      } else if (eat('-')) {
        e = make_binary(BinaryOp::Sub, std::move(e), parse_term());
      } else {
        return e;
      }
    }
  }

  Expr parse_term() {
    Expr e = parse_unary();
    for (;;) {
      if (eat('*')) {
        e = make_binary(BinaryOp::Mul, std::move(e), parse_unary());
      } else if (eat('/')) {
        e = make_binary(BinaryOp::Div, std::move(e), parse_unary());
      } else {
        return e;
      }
    }
  }

  Expr parse_unary() {
    if (eat('-')) return make_unary(UnaryOp::Neg, parse_unary());
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_base();
    if (eat('^')) {
      return make_binary(BinaryOp::Pow, std::move(base), parse_unary());
    }
    return base;
  }

  Expr parse_base() {
    skip_ws();
    if (pos >= src.size()) fail(pos, "expected expression, found end of input");
    char c = src[pos];
    if (c == '(') {
      ++pos;
      Expr e = parse_expr();
      if (!eat(')')) fail(pos, "expected ')'");
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      return parse_ident();
    }
    fail(pos, std::string("unexpected character '") + c + "'");
  }

  Expr parse_number() {
    std::size_t start = pos;
    while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    if (pos < src.size() && src[pos] == '.') {
      ++pos;
      while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    if (pos < src.size() && (src[pos] == 'e' || src[pos] == 'E')) {
      std::size_t mark = pos;
      ++pos;
      if (pos < src.size() && (src[pos] == '+' || src[pos] == '-')) ++pos;
      if (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) {
        while (pos < src.size() && std::isdigit(static_cast<unsigned char>(src[pos]))) ++pos;
      } else {
        pos = mark;  // 'e' starts an identifier, not an exponent
      }
    }
    double v = 0;
    auto res = std::from_chars(src.data() + start, src.data() + pos, v);
    if (res.ec != std::errc() || res.ptr != src.data() + pos) {
      fail(start, "malformed number literal");
    }
    return Expr::constant(v);
  }

  Expr parse_ident() {
    std::size_t start = pos;
    while (pos < src.size() &&
           (std::isalnum(static_cast<unsigned char>(src[pos])) || src[pos] == '_')) {
      ++pos;
    }
    std::string name(src.substr(start, pos - start));
    skip_ws();
    if (pos < src.size() && src[pos] == '(') {
      ++pos;
      UnaryOp op;
      if (name == "exp") op = UnaryOp::Exp;
      else if (name == "log") op = UnaryOp::Log;
      else if (name == "sin") op = UnaryOp::Sin;
      else if (name == "cos") op = UnaryOp::Cos;
      else if (name == "sqrt") op = UnaryOp::Sqrt;
      else if (name == "abs") op = UnaryOp::Abs;
      else if (name == "sign") op = UnaryOp::Sign;
      else fail(start, "unknown function '" + name + "'");
      Expr arg = parse_expr();
      if (!eat(')')) fail(pos, "expected ')' closing call of '" + name + "'");
      return make_unary(op, std::move(arg));
    }
    return Expr::variable(std::move(name));
  }
};

}  // namespace

Expr parse(std::string_view src) {
  Parser p{src};
  Expr e = p.parse_expr();
  p.skip_ws();
  if (p.pos != src.size()) p.fail(p.pos, "unexpected trailing input");
  return e;
}

}  // namespace pdemorph
