#pragma once

// Scalar expression language used to describe vector fields, Lyapunov
// functions and feedback laws.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' ['-'] integer)?
//   primary := number | 'pi' | x<i> | u<j> | 't' | func '(' expr ')' | '(' expr ')'
//
// `^` takes integer literal exponents only, so every expression has a
// closed-form symbolic derivative.

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmpstab {

class ExprSyntaxError : public std::runtime_error {
 public:
  ExprSyntaxError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Raised on log of a non-positive value, division by zero, sqrt of a
/// negative value and similar.
class ExprDomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class VarKind { State, Control, Time };

struct Variable {
  VarKind kind = VarKind::State;
  std::size_t index = 0;  // zero-based; unused for Time

  static Variable state(std::size_t i) { return {VarKind::State, i}; }
  static Variable control(std::size_t j) { return {VarKind::Control, j}; }
  static Variable time() { return {VarKind::Time, 0}; }
  bool operator==(const Variable&) const = default;
};

enum class Func { Sin, Cos, Tan, Exp, Log, Sqrt, Abs, Tanh, Sign };

enum class NodeKind { Literal, Var, Add, Sub, Mul, Div, Neg, Pow, Call };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind;
  double value = 0.0;  // Literal
  Variable var{};      // Var
  int exponent = 0;    // Pow
  Func func{};         // Call
  NodePtr lhs;         // unary operand / left operand / call argument
  NodePtr rhs;
};

/// Evaluation point. Spans must cover the dimensions the expression was
/// parsed against.
struct EvalPoint {
  std::span<const double> x;
  std::span<const double> u{};
  double t = 0.0;
};

/// Immutable expression handle. Cheap to copy.
class Expr {
 public:
  Expr() = default;
  explicit Expr(NodePtr root, bool kink = false) : root_(std::move(root)), kink_(kink) {}

  static Expr parse(const std::string& source, std::size_t n, std::size_t m);
  static Expr constant(double v);
  static Expr variable(Variable v);

  double eval(const EvalPoint& p) const;
  double eval(std::span<const double> x, std::span<const double> u = {}, double t = 0.0) const {
    return eval(EvalPoint{x, u, t});
  }

  /// Symbolic partial derivative. Differentiating through abs/sign yields a
  /// result valid away from the kink; such results report `kink() == true`.
  Expr diff(Variable v) const;

  std::string str() const;

  /// True if abs or sign occurs anywhere in the tree.
  bool has_nonsmooth() const;
  bool kink() const { return kink_; }
  bool depends_on(Variable v) const;
  bool depends_on_kind(VarKind k) const;
  bool is_literal(double v) const;
  bool empty() const { return root_ == nullptr; }
  const NodePtr& root() const { return root_; }

  /// Structural equality (literals compared exactly).
  friend bool operator==(const Expr& a, const Expr& b);

 private:
  NodePtr root_;
  bool kink_ = false;
};

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);

const char* func_name(Func f);

/// Parse a list of expressions; convenience for vector fields.
std::vector<Expr> parse_all(const std::vector<std::string>& sources, std::size_t n, std::size_t m);

}  // namespace pmpstab
