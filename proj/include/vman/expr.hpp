#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vman {

/// Number of coordinate variables x0..x15 an expression may reference.
inline constexpr int kMaxVariables = 16;
/// Variable slot reserved for the equivariant parameter `u`.
inline constexpr int kUVariable = kMaxVariables;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnknownIdentifierError : public ParseError {
 public:
  UnknownIdentifierError(const std::string& name, std::size_t offset)
      : ParseError("unknown identifier '" + name + "'", offset), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
  Const,
  Var,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Tanh,
  Abs,
  Sign,
  Bump,
  BumpQ,
  Atan2,
  Min,
  Max,
};

/// Immutable scalar expression over x0..x15 (and optionally u).
///
/// Nodes are shared; copying an Expression is cheap. Arithmetic operators
/// fold constants and drop neutral elements, the parser does not, so that
/// parse(print(e)) reproduces e node for node.
class Expression {
 public:
  struct Node;

  Expression();  // the constant 0

  static Expression constant(double value);
  static Expression variable(int index);
  static Expression u();

  /// Parses `text`. `u` is rejected unless `allow_u` is set.
  static Expression parse(std::string_view text, bool allow_u = false);

  /// Unary/binary node builders with constant folding.
  static Expression unary(Op op, const Expression& arg);
  static Expression binary(Op op, const Expression& lhs, const Expression& rhs);

  double evaluate(std::span<const double> point, std::optional<double> u_value = std::nullopt) const;

  /// Exact partial derivative. `var` may be kUVariable for internal use.
  Expression derivative(int var) const;

  /// Replaces x_i by replacements[i]; variables beyond the list are kept.
  Expression substitute(std::span<const Expression> replacements) const;
  /// Replaces u by the given expression.
  Expression substitute_u(const Expression& replacement) const;

  std::string str() const;

  Op op() const;
  double constant_value() const;  // only for Op::Const
  int variable_index() const;     // only for Op::Var
  std::size_t arity() const;
  Expression child(std::size_t i) const;

  bool is_constant() const { return op() == Op::Const; }
  bool is_zero() const { return is_constant() && constant_value() == 0.0; }
  bool is_one() const { return is_constant() && constant_value() == 1.0; }
  bool uses_u() const;
  /// Bit i set iff x_i appears.
  std::uint32_t variable_mask() const;
  /// Number of nodes; a rough size measure.
  std::size_t node_count() const;

  /// Node-for-node equality (constants compared bitwise).
  bool structurally_equal(const Expression& other) const;

  const Node* node() const { return node_.get(); }

 private:
  explicit Expression(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  static Expression make(Op op, double value, int index, std::vector<Expression> children);

  std::shared_ptr<const Node> node_;

  friend class ExpressionParser;
};

Expression operator+(const Expression& a, const Expression& b);
Expression operator-(const Expression& a, const Expression& b);
Expression operator*(const Expression& a, const Expression& b);
Expression operator/(const Expression& a, const Expression& b);
Expression operator-(const Expression& a);
Expression pow(const Expression& a, const Expression& b);
Expression sin(const Expression& a);
Expression cos(const Expression& a);
Expression exp(const Expression& a);
Expression sqrt(const Expression& a);
Expression bump(const Expression& a);
Expression max(const Expression& a, const Expression& b);
Expression min(const Expression& a, const Expression& b);

/// Parses without allowing u; convenience for tests and fixtures.
inline Expression expr(std::string_view text) { return Expression::parse(text); }

/// Smooth plateau: 1 for t <= 0, 0 for t >= 1, built from bump.
Expression smooth_step_down(const Expression& t);

/// Flat postfix program for fast repeated evaluation. Thread-safe.
class CompiledExpression {
 public:
  CompiledExpression() = default;
  explicit CompiledExpression(const Expression& e);

  double operator()(const double* point, double u_value = 0.0) const;
  double operator()(std::span<const double> point, double u_value = 0.0) const {
    return (*this)(point.data(), u_value);
  }
  bool is_constant() const { return constant_; }
  double constant_value() const { return value_; }

 private:
  struct Instr {
    Op op;
    int index;
    double value;
  };
  std::vector<Instr> code_;
  int max_depth_ = 0;
  bool constant_ = true;
  double value_ = 0.0;
};

}  // namespace vman
