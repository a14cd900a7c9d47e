#include "vman/expr.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>

namespace vman {

struct Expression::Node {
  Op op;
  double value = 0.0;
  int index = 0;
  std::vector<Expression> children;
};

namespace {

struct FunctionInfo {
  const char* name;
  Op op;
  int arity;
};

constexpr std::array<FunctionInfo, 13> kFunctions{{
    {"sin", Op::Sin, 1},
    {"cos", Op::Cos, 1},
    {"exp", Op::Exp, 1},
    {"log", Op::Log, 1},
    {"sqrt", Op::Sqrt, 1},
    {"tanh", Op::Tanh, 1},
    {"abs", Op::Abs, 1},
    {"sign", Op::Sign, 1},
    {"bump", Op::Bump, 1},
    {"bumpq", Op::BumpQ, 1},
    {"atan2", Op::Atan2, 2},
    {"min", Op::Min, 2},
    {"max", Op::Max, 2},
}};

const char* function_name(Op op) {
  for (const auto& f : kFunctions)
    if (f.op == op) return f.name;
  return "?";
}


inline double bump_value(double t) {
  const double s = 1.0 - t * t;
  if (!(s > 0.0)) return 0.0;
  return std::exp(1.0 - 1.0 / s);
}

inline double bumpq_value(double t) {
  const double s = 1.0 - t * t;
  if (!(s > 0.0)) return 0.0;
  return 1.0 / s;
}

inline double apply_unary(Op op, double a) {
  switch (op) {
    case Op::Neg:
      return -a;
    case Op::Sin:
      return std::sin(a);
    case Op::Cos:
      return std::cos(a);
    case Op::Exp:
      return std::exp(a);
    case Op::Log:
      if (!(a > 0.0)) throw DomainError("log of non-positive value");
      return std::log(a);
    case Op::Sqrt:
      if (a < 0.0) throw DomainError("sqrt of negative value");
      return std::sqrt(a);
    case Op::Tanh:
      return std::tanh(a);
    case Op::Abs:
      return std::fabs(a);
    case Op::Sign:
      return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
    case Op::Bump:
      return bump_value(a);
    case Op::BumpQ:
      return bumpq_value(a);
    default:
      return 0.0;
  }
}

inline double apply_binary(Op op, double a, double b) {
  switch (op) {
    case Op::Add:
      return a + b;
    case Op::Sub:
      return a - b;
    case Op::Mul:
      return a * b;
    case Op::Div:
      if (b == 0.0) throw DomainError("division by zero");
      return a / b;
    case Op::Pow: {
      if (a < 0.0 && b != std::nearbyint(b)) throw DomainError("non-integer power of negative value");
      if (a == 0.0 && b < 0.0) throw DomainError("division by zero");
      if (b == 2.0) return a * a;
      return std::pow(a, b);
    }
    case Op::Atan2:
      return std::atan2(a, b);
    case Op::Min:
      return a < b ? a : b;
    case Op::Max:
      return a > b ? a : b;
    default:
      return 0.0;
  }
}

// Printing precedence levels.
int precedence(const Expression& e) {
  switch (e.op()) {
    case Op::Add:
    case Op::Sub:
      return 1;
    case Op::Mul:
    case Op::Div:
      return 2;
    case Op::Neg:
      return 3;
    case Op::Pow:
      return 4;
    default:
      return 5;
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest representation that round-trips.
  for (int p = 1; p <= 17; ++p) {
    char probe[40];
    std::snprintf(probe, sizeof probe, "%.*g", p, v);
    double back = 0.0;
    std::from_chars(probe, probe + std::strlen(probe), back);
    if (back == v) {
      std::memcpy(buf, probe, sizeof probe);
      break;
    }
  }
  std::string s(buf);
  if (std::signbit(v)) return "(" + s + ")";
  return s;
}

void print(const Expression& e, std::string& out) {
  auto wrap = [&out](const Expression& c, bool parens) {
    if (parens) out += '(';
    print(c, out);
    if (parens) out += ')';
  };
  switch (e.op()) {
    case Op::Const:
      out += format_number(e.constant_value());
      return;
    case Op::Var:
      if (e.variable_index() == kUVariable)
        out += 'u';
      else
        out += "x" + std::to_string(e.variable_index());
      return;
    case Op::Neg:
      out += '-';
      wrap(e.child(0), precedence(e.child(0)) < 3);
      return;
    case Op::Add:
    case Op::Sub:
      wrap(e.child(0), false);
      out += e.op() == Op::Add ? " + " : " - ";
      wrap(e.child(1), precedence(e.child(1)) <= 1);
      return;
    case Op::Mul:
    case Op::Div:
      wrap(e.child(0), precedence(e.child(0)) < 2);
      out += e.op() == Op::Mul ? "*" : "/";
      wrap(e.child(1), precedence(e.child(1)) <= 2);
      return;
    case Op::Pow:
      wrap(e.child(0), precedence(e.child(0)) < 5);
      out += '^';
      wrap(e.child(1), precedence(e.child(1)) < 3);
      return;
    default:
      out += function_name(e.op());
      out += '(';
      for (std::size_t i = 0; i < e.arity(); ++i) {
        if (i) out += ", ";
        print(e.child(i), out);
      }
      out += ')';
      return;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Parser

class ExpressionParser {
 public:
  ExpressionParser(std::string_view text, bool allow_u) : text_(text), allow_u_(allow_u) {}

  Expression parse() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("empty expression", pos_);
    Expression e = parse_sum();
    skip_ws();
    if (pos_ != text_.size()) throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_);
    return e;
  }

 private:
  static Expression raw(Op op, std::vector<Expression> children) {
    return Expression::make(op, 0.0, 0, std::move(children));
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expression parse_sum() {
    Expression lhs = parse_product();
    for (;;) {
      if (accept('+'))
        lhs = raw(Op::Add, {lhs, parse_product()});
      else if (accept('-'))
        lhs = raw(Op::Sub, {lhs, parse_product()});
      else
        return lhs;
    }
  }

  Expression parse_product() {
    Expression lhs = parse_unary();
    for (;;) {
      if (accept('*'))
        lhs = raw(Op::Mul, {lhs, parse_unary()});
      else if (accept('/'))
        lhs = raw(Op::Div, {lhs, parse_unary()});
      else
        return lhs;
    }
  }

  Expression parse_unary() {
    if (accept('-')) {
      Expression arg = parse_unary();
      // A negated literal is a negative literal; the printer emits "(-c)".
      if (arg.op() == Op::Const) return Expression::constant(-arg.constant_value());
      return raw(Op::Neg, {arg});
    }
    return parse_power();
  }

  Expression parse_power() {
    Expression base = parse_primary();
    if (accept('^')) return raw(Op::Pow, {base, parse_unary()});
    return base;
  }

  Expression parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expression e = parse_sum();
      if (!accept(')')) throw ParseError("expected ')'", pos_);
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    throw ParseError(std::string("unexpected '") + c + "'", pos_);
  }

  Expression parse_number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    };
    digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      digits();
    }
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
        digits();
      else
        pos_ = save;
    }
    double value = 0.0;
    auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (res.ec != std::errc() || res.ptr != text_.data() + pos_) throw ParseError("malformed number", start);
    return Expression::constant(value);
  }

  Expression parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string name(text_.substr(start, pos_ - start));
    for (const auto& f : kFunctions) {
      if (name != f.name) continue;
      if (!accept('(')) throw ParseError("expected '(' after " + name, pos_);
      std::vector<Expression> args;
      args.push_back(parse_sum());
      while (accept(',')) args.push_back(parse_sum());
      if (!accept(')')) throw ParseError("expected ')'", pos_);
      if (static_cast<int>(args.size()) != f.arity)
        throw ParseError(name + " expects " + std::to_string(f.arity) + " argument(s)", start);
      return raw(f.op, std::move(args));
    }
    if (name == "pi") return Expression::constant(std::numbers::pi);
    if (name == "u") {
      if (!allow_u_) throw UnknownIdentifierError(name, start);
      return Expression::u();
    }
    if (name.size() >= 2 && name[0] == 'x' &&
        name.find_first_not_of("0123456789", 1) == std::string::npos) {
      const int idx = std::stoi(name.substr(1));
      if (idx < kMaxVariables && (name.size() == 2 || name[1] != '0')) return Expression::variable(idx);
    }
    throw UnknownIdentifierError(name, start);
  }

  std::string_view text_;
  bool allow_u_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Expression

Expression::Expression() : Expression(constant(0.0)) {}

Expression Expression::make(Op op, double value, int index, std::vector<Expression> children) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = value;
  n->index = index;
  n->children = std::move(children);
  return Expression(std::move(n));
}

Expression Expression::constant(double value) { return make(Op::Const, value, 0, {}); }

Expression Expression::variable(int index) {
  if (index < 0 || index > kUVariable) throw std::out_of_range("variable index out of range");
  return make(Op::Var, 0.0, index, {});
}

Expression Expression::u() { return make(Op::Var, 0.0, kUVariable, {}); }

Expression Expression::parse(std::string_view text, bool allow_u) {
  return ExpressionParser(text, allow_u).parse();
}

Op Expression::op() const { return node_->op; }
double Expression::constant_value() const { return node_->value; }
int Expression::variable_index() const { return node_->index; }
std::size_t Expression::arity() const { return node_->children.size(); }
Expression Expression::child(std::size_t i) const { return node_->children.at(i); }

Expression Expression::unary(Op op, const Expression& a) {
  if (a.is_constant()) {
    const double v = apply_unary(op, a.constant_value());
    if (std::isfinite(v)) return constant(v);
  }
  if (op == Op::Neg && a.op() == Op::Neg) return a.child(0);
  return make(op, 0.0, 0, {a});
}

Expression Expression::binary(Op op, const Expression& a, const Expression& b) {
  if (a.is_constant() && b.is_constant()) {
    try {
      const double v = apply_binary(op, a.constant_value(), b.constant_value());
      if (std::isfinite(v)) return constant(v);
    } catch (const DomainError&) {
    }
  }
  switch (op) {
    case Op::Add:
      if (a.is_zero()) return b;
      if (b.is_zero()) return a;
      if (b.op() == Op::Neg) return binary(Op::Sub, a, b.child(0));
      break;
    case Op::Sub:
      if (b.is_zero()) return a;
      if (a.is_zero()) return unary(Op::Neg, b);
      break;
    case Op::Mul:
      if (a.is_zero() || b.is_zero()) return constant(0.0);
      if (a.is_one()) return b;
      if (b.is_one()) return a;
      if (a.is_constant() && a.constant_value() == -1.0) return unary(Op::Neg, b);
      if (b.is_constant() && b.constant_value() == -1.0) return unary(Op::Neg, a);
      break;
    case Op::Div:
      if (a.is_zero() && !b.is_zero()) return constant(0.0);
      if (b.is_one()) return a;
      break;
    case Op::Pow:
      if (b.is_zero()) return constant(1.0);
      if (b.is_one()) return a;
      break;
    default:
      break;
  }
  return make(op, 0.0, 0, {a, b});
}

double Expression::evaluate(std::span<const double> point, std::optional<double> u_value) const {
  const Node& n = *node_;
  switch (n.op) {
    case Op::Const:
      return n.value;
    case Op::Var:
      if (n.index == kUVariable) {
        if (!u_value) throw DomainError("expression uses u but no value was supplied");
        return *u_value;
      }
      if (static_cast<std::size_t>(n.index) >= point.size())
        throw DomainError("point does not supply x" + std::to_string(n.index));
      return point[n.index];
    default:
      break;
  }
  if (n.children.size() == 1) return apply_unary(n.op, n.children[0].evaluate(point, u_value));
  return apply_binary(n.op, n.children[0].evaluate(point, u_value), n.children[1].evaluate(point, u_value));
}

Expression Expression::derivative(int var) const {
  const Node& n = *node_;
  auto d = [var](const Expression& e) { return e.derivative(var); };
  switch (n.op) {
    case Op::Const:
      return constant(0.0);
    case Op::Var:
      return constant(n.index == var ? 1.0 : 0.0);
    default:
      break;
  }
  const Expression& a = n.children[0];
  const Expression da = d(a);
  switch (n.op) {
    case Op::Neg:
      return -da;
    case Op::Add:
      return da + d(n.children[1]);
    case Op::Sub:
      return da - d(n.children[1]);
    case Op::Mul: {
      const Expression& b = n.children[1];
      return da * b + a * d(b);
    }
    case Op::Div: {
      const Expression& b = n.children[1];
      const Expression db = d(b);
      if (db.is_zero()) return da / b;
      return (da * b - a * db) / (b * b);
    }
    case Op::Pow: {
      const Expression& b = n.children[1];
      if (b.is_constant()) {
        const double c = b.constant_value();
        return constant(c) * pow(a, constant(c - 1.0)) * da;
      }
      const Expression db = d(b);
      return *this * (db * unary(Op::Log, a) + b * da / a);
    }
    case Op::Sin:
      return cos(a) * da;
    case Op::Cos:
      return -(sin(a) * da);
    case Op::Exp:
      return *this * da;
    case Op::Log:
      return da / a;
    case Op::Sqrt:
      return da / (constant(2.0) * *this);
    case Op::Tanh:
      return (constant(1.0) - *this * *this) * da;
    case Op::Abs:
      return unary(Op::Sign, a) * da;
    case Op::Sign:
      return constant(0.0);
    case Op::Bump: {
      // bump'(t) = bump(t) * (-2t) * bumpq(t)^2, all factors finite everywhere.
      const Expression q = unary(Op::BumpQ, a);
      return *this * constant(-2.0) * a * q * q * da;
    }
    case Op::BumpQ:
      return constant(2.0) * a * *this * *this * da;
    case Op::Atan2: {
      const Expression& b = n.children[1];
      return (b * da - a * d(b)) / (a * a + b * b);
    }
    case Op::Min:
    case Op::Max: {
      const Expression& b = n.children[1];
      const Expression db = d(b);
      const Expression s = unary(Op::Sign, a - b);
      const Expression half = constant(0.5);
      if (n.op == Op::Max) return half * (da + db) + half * s * (da - db);
      return half * (da + db) - half * s * (da - db);
    }
    default:
      return constant(0.0);
  }
}

Expression Expression::substitute(std::span<const Expression> replacements) const {
  const Node& n = *node_;
  if (n.op == Op::Const) return *this;
  if (n.op == Op::Var) {
    if (n.index != kUVariable && static_cast<std::size_t>(n.index) < replacements.size())
      return replacements[n.index];
    return *this;
  }
  if (n.children.size() == 1) return unary(n.op, n.children[0].substitute(replacements));
  return binary(n.op, n.children[0].substitute(replacements), n.children[1].substitute(replacements));
}

Expression Expression::substitute_u(const Expression& replacement) const {
  const Node& n = *node_;
  if (n.op == Op::Const) return *this;
  if (n.op == Op::Var) return n.index == kUVariable ? replacement : *this;
  if (n.children.size() == 1) return unary(n.op, n.children[0].substitute_u(replacement));
  return binary(n.op, n.children[0].substitute_u(replacement), n.children[1].substitute_u(replacement));
}

std::string Expression::str() const {
  std::string out;
  print(*this, out);
  return out;
}

bool Expression::uses_u() const {
  if (node_->op == Op::Var) return node_->index == kUVariable;
  for (const auto& c : node_->children)
    if (c.uses_u()) return true;
  return false;
}

std::uint32_t Expression::variable_mask() const {
  if (node_->op == Op::Var) return node_->index == kUVariable ? 0u : (1u << node_->index);
  std::uint32_t m = 0;
  for (const auto& c : node_->children) m |= c.variable_mask();
  return m;
}

std::size_t Expression::node_count() const {
  std::size_t k = 1;
  for (const auto& c : node_->children) k += c.node_count();
  return k;
}

bool Expression::structurally_equal(const Expression& other) const {
  if (node_ == other.node_) return true;
  const Node& a = *node_;
  const Node& b = *other.node_;
  if (a.op != b.op || a.children.size() != b.children.size()) return false;
  if (a.op == Op::Const) return std::bit_cast<std::uint64_t>(a.value) == std::bit_cast<std::uint64_t>(b.value);
  if (a.op == Op::Var) return a.index == b.index;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!a.children[i].structurally_equal(b.children[i])) return false;
  return true;
}

Expression operator+(const Expression& a, const Expression& b) { return Expression::binary(Op::Add, a, b); }
Expression operator-(const Expression& a, const Expression& b) { return Expression::binary(Op::Sub, a, b); }
Expression operator*(const Expression& a, const Expression& b) { return Expression::binary(Op::Mul, a, b); }
Expression operator/(const Expression& a, const Expression& b) { return Expression::binary(Op::Div, a, b); }
Expression operator-(const Expression& a) { return Expression::unary(Op::Neg, a); }
Expression pow(const Expression& a, const Expression& b) { return Expression::binary(Op::Pow, a, b); }
Expression sin(const Expression& a) { return Expression::unary(Op::Sin, a); }
Expression cos(const Expression& a) { return Expression::unary(Op::Cos, a); }
Expression exp(const Expression& a) { return Expression::unary(Op::Exp, a); }
Expression sqrt(const Expression& a) { return Expression::unary(Op::Sqrt, a); }
Expression bump(const Expression& a) { return Expression::unary(Op::Bump, a); }
Expression max(const Expression& a, const Expression& b) { return Expression::binary(Op::Max, a, b); }
Expression min(const Expression& a, const Expression& b) { return Expression::binary(Op::Min, a, b); }

Expression smooth_step_down(const Expression& t) {
  // A = bump(max(t,0)) vanishes for t >= 1, B = bump(max(1-t,0)) vanishes for
  // t <= 0; A/(A+B) is smooth because each kink sits where the other term is
  // flat to all orders.
  const Expression zero = Expression::constant(0.0);
  const Expression a = bump(max(t, zero));
  const Expression b = bump(max(Expression::constant(1.0) - t, zero));
  return a / (a + b);
}

// ---------------------------------------------------------------------------
// CompiledExpression

CompiledExpression::CompiledExpression(const Expression& e) {
  int depth = 0;
  auto emit = [&](auto&& self, const Expression& x) -> void {
    switch (x.op()) {
      case Op::Const:
        code_.push_back({Op::Const, 0, x.constant_value()});
        max_depth_ = std::max(max_depth_, ++depth);
        return;
      case Op::Var:
        code_.push_back({Op::Var, x.variable_index(), 0.0});
        max_depth_ = std::max(max_depth_, ++depth);
        return;
      default:
        for (std::size_t i = 0; i < x.arity(); ++i) self(self, x.child(i));
        code_.push_back({x.op(), static_cast<int>(x.arity()), 0.0});
        if (x.arity() == 2) --depth;
        return;
    }
  };
  emit(emit, e);
  constant_ = e.is_constant();
  value_ = constant_ ? e.constant_value() : 0.0;
}

double CompiledExpression::operator()(const double* point, double u_value) const {
  if (constant_) return value_;
  constexpr int kInline = 64;
  std::array<double, kInline> small{};
  std::vector<double> big;
  double* stack = small.data();
  if (max_depth_ > kInline) {
    big.resize(max_depth_);
    stack = big.data();
  }
  int sp = 0;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::Const:
        stack[sp++] = in.value;
        break;
      case Op::Var:
        stack[sp++] = in.index == kUVariable ? u_value : point[in.index];
        break;
      case Op::Add:
        --sp;
        stack[sp - 1] += stack[sp];
        break;
      case Op::Sub:
        --sp;
        stack[sp - 1] -= stack[sp];
        break;
      case Op::Mul:
        --sp;
        stack[sp - 1] *= stack[sp];
        break;
      default:
        if (in.index == 1) {
          stack[sp - 1] = apply_unary(in.op, stack[sp - 1]);
        } else {
          --sp;
          stack[sp - 1] = apply_binary(in.op, stack[sp - 1], stack[sp]);
        }
        break;
    }
  }
  return stack[0];
}

}  // namespace vman
