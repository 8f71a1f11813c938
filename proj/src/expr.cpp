#include "pmpstab/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

namespace pmpstab {

namespace {

NodePtr make_literal(double v) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Literal;
  n->value = v;
  return n;
}

NodePtr make_var(Variable v) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Var;
  n->var = v;
  return n;
}

NodePtr make_binary(NodeKind k, NodePtr a, NodePtr b) {
  auto n = std::make_shared<Node>();
  n->kind = k;
  n->lhs = std::move(a);
  n->rhs = std::move(b);
  return n;
}

NodePtr make_neg(NodePtr a) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Neg;
  n->lhs = std::move(a);
  return n;
}

NodePtr make_pow(NodePtr base, int exponent) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Pow;
  n->lhs = std::move(base);
  n->exponent = exponent;
  return n;
}

NodePtr make_call(Func f, NodePtr arg) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::Call;
  n->func = f;
  n->lhs = std::move(arg);
  return n;
}

bool is_lit(const NodePtr& n, double v) { return n->kind == NodeKind::Literal && n->value == v; }
bool is_lit(const NodePtr& n) { return n->kind == NodeKind::Literal; }

// Light simplification: literal folding and 0/1 identities only.
NodePtr s_add(NodePtr a, NodePtr b) {
  if (is_lit(a, 0.0)) return b;
  if (is_lit(b, 0.0)) return a;
  if (is_lit(a) && is_lit(b)) return make_literal(a->value + b->value);
  return make_binary(NodeKind::Add, std::move(a), std::move(b));
}

NodePtr s_neg(NodePtr a) {
  if (is_lit(a, 0.0)) return a;
  if (a->kind == NodeKind::Neg) return a->lhs;
  return make_neg(std::move(a));
}

NodePtr s_sub(NodePtr a, NodePtr b) {
  if (is_lit(b, 0.0)) return a;
  if (is_lit(a, 0.0)) return s_neg(std::move(b));
  if (is_lit(a) && is_lit(b)) return make_literal(a->value - b->value);
  return make_binary(NodeKind::Sub, std::move(a), std::move(b));
}

NodePtr s_mul(NodePtr a, NodePtr b) {
  if (is_lit(a, 0.0) || is_lit(b, 0.0)) return make_literal(0.0);
  if (is_lit(a, 1.0)) return b;
  if (is_lit(b, 1.0)) return a;
  if (is_lit(b) && !is_lit(a)) std::swap(a, b);
  if (is_lit(a) && is_lit(b)) return make_literal(a->value * b->value);
  // c1 * (c2 * e) -> (c1 c2) * e
  if (is_lit(a) && b->kind == NodeKind::Mul && is_lit(b->lhs))
    return s_mul(make_literal(a->value * b->lhs->value), b->rhs);
  return make_binary(NodeKind::Mul, std::move(a), std::move(b));
}

NodePtr s_div(NodePtr a, NodePtr b) {
  if (is_lit(a, 0.0)) return a;
  if (is_lit(b, 1.0)) return a;
  return make_binary(NodeKind::Div, std::move(a), std::move(b));
}

NodePtr s_pow(NodePtr base, int e) {
  if (e == 0) return make_literal(1.0);
  if (e == 1) return base;
  return make_pow(std::move(base), e);
}

// ---------------------------------------------------------------- parsing

struct FuncEntry {
  const char* name;
  Func func;
};

constexpr FuncEntry kFuncs[] = {
    {"sin", Func::Sin},   {"cos", Func::Cos},   {"tan", Func::Tan},
    {"exp", Func::Exp},   {"log", Func::Log},   {"sqrt", Func::Sqrt},
    {"abs", Func::Abs},   {"tanh", Func::Tanh}, {"sign", Func::Sign},
};

class Parser {
 public:
  Parser(const std::string& src, std::size_t n, std::size_t m) : src_(src), n_(n), m_(m) {}

  NodePtr parse() {
    skip_ws();
    if (pos_ >= src_.size()) throw ExprSyntaxError("empty expression", pos_);
    NodePtr e = parse_expr();
    skip_ws();
    if (pos_ != src_.size())
      throw ExprSyntaxError(std::string("unexpected character '") + src_[pos_] + "'", pos_);
    return e;
  }

 private:
  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      if (pos_ >= src_.size())
        throw ExprSyntaxError(std::string("expected '") + c + "' but reached end of input", pos_);
      throw ExprSyntaxError(std::string("expected '") + c + "'", pos_);
    }
  }

  NodePtr parse_expr() {
    NodePtr lhs = parse_term();
    for (;;) {
      if (accept('+')) {
        lhs = make_binary(NodeKind::Add, lhs, parse_term());
      } else if (accept('-')) {
        lhs = make_binary(NodeKind::Sub, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_term() {
    NodePtr lhs = parse_unary();
    for (;;) {
      if (accept('*')) {
        lhs = make_binary(NodeKind::Mul, lhs, parse_unary());
      } else if (accept('/')) {
        lhs = make_binary(NodeKind::Div, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  NodePtr parse_unary() {
    if (accept('-')) return make_neg(parse_unary());
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_primary();
    if (accept('^')) {
      skip_ws();
      const std::size_t at = pos_;
      bool negative = accept('-');
      skip_ws();
      if (pos_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[pos_])))
        throw ExprSyntaxError("exponent must be an integer literal", at);
      long value = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        value = value * 10 + (src_[pos_] - '0');
        if (value > 1000000) throw ExprSyntaxError("exponent too large", at);
        ++pos_;
      }
      if (pos_ < src_.size() && (src_[pos_] == '.' || src_[pos_] == 'e' || src_[pos_] == 'E'))
        throw ExprSyntaxError("exponent must be an integer literal", at);
      skip_ws();
      if (pos_ < src_.size() && src_[pos_] == '^')
        throw ExprSyntaxError("exponent must be an integer literal", pos_);
      base = make_pow(base, static_cast<int>(negative ? -value : value));
    }
    return base;
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    const char* begin = src_.c_str() + pos_;
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin) throw ExprSyntaxError("malformed number", start);
    pos_ += static_cast<std::size_t>(end - begin);
    if (!std::isfinite(v)) throw ExprSyntaxError("number out of range", start);
    return make_literal(v);
  }

  NodePtr parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ExprSyntaxError("unexpected end of input", pos_);
    const char c = src_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (c == '(') {
      ++pos_;
      NodePtr e = parse_expr();
      expect(')');
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        ++pos_;
      const std::string ident = src_.substr(start, pos_ - start);
      return resolve_identifier(ident, start);
    }
    throw ExprSyntaxError(std::string("unexpected character '") + c + "'", pos_);
  }

  NodePtr resolve_identifier(const std::string& ident, std::size_t at) {
    if (ident == "pi") return make_literal(std::numbers::pi);
    if (ident == "t") return make_var(Variable::time());
    for (const auto& f : kFuncs) {
      if (ident == f.name) {
        if (!accept('(')) throw ExprSyntaxError("expected '(' after function " + ident, pos_);
        NodePtr arg = parse_expr();
        expect(')');
        return make_call(f.func, arg);
      }
    }
    if ((ident[0] == 'x' || ident[0] == 'u') && ident.size() > 1) {
      bool digits = true;
      for (std::size_t i = 1; i < ident.size(); ++i)
        digits = digits && std::isdigit(static_cast<unsigned char>(ident[i]));
      if (digits && ident.size() < 8) {
        const long idx = std::stol(ident.substr(1));
        const std::size_t limit = ident[0] == 'x' ? n_ : m_;
        if (idx < 1 || static_cast<std::size_t>(idx) > limit)
          throw ExprSyntaxError("variable index out of range: " + ident, at);
        const auto zero_based = static_cast<std::size_t>(idx - 1);
        return make_var(ident[0] == 'x' ? Variable::state(zero_based)
                                        : Variable::control(zero_based));
      }
    }
    throw ExprSyntaxError("unknown identifier '" + ident + "'", at);
  }

  const std::string& src_;
  std::size_t n_, m_;
  std::size_t pos_ = 0;
};

// ------------------------------------------------------------- evaluation

double eval_node(const Node& n, const EvalPoint& p) {
  switch (n.kind) {
    case NodeKind::Literal:
      return n.value;
    case NodeKind::Var:
      switch (n.var.kind) {
        case VarKind::State:
          if (n.var.index >= p.x.size()) throw ExprDomainError("state vector too short");
          return p.x[n.var.index];
        case VarKind::Control:
          if (n.var.index >= p.u.size()) throw ExprDomainError("control vector too short");
          return p.u[n.var.index];
        case VarKind::Time:
          return p.t;
      }
      break;
    case NodeKind::Add:
      return eval_node(*n.lhs, p) + eval_node(*n.rhs, p);
    case NodeKind::Sub:
      return eval_node(*n.lhs, p) - eval_node(*n.rhs, p);
    case NodeKind::Mul:
      return eval_node(*n.lhs, p) * eval_node(*n.rhs, p);
    case NodeKind::Div: {
      const double den = eval_node(*n.rhs, p);
      if (den == 0.0) throw ExprDomainError("division by zero");
      return eval_node(*n.lhs, p) / den;
    }
    case NodeKind::Neg:
      return -eval_node(*n.lhs, p);
    case NodeKind::Pow: {
      const double b = eval_node(*n.lhs, p);
      if (n.exponent < 0 && b == 0.0) throw ExprDomainError("zero raised to a negative power");
      switch (n.exponent) {
        case 2:
          return b * b;
        case 3:
          return b * b * b;
        default:
          return std::pow(b, n.exponent);
      }
    }
    case NodeKind::Call: {
      const double a = eval_node(*n.lhs, p);
      switch (n.func) {
        case Func::Sin:
          return std::sin(a);
        case Func::Cos:
          return std::cos(a);
        case Func::Tan:
          return std::tan(a);
        case Func::Exp:
          return std::exp(a);
        case Func::Log:
          if (!(a > 0.0)) throw ExprDomainError("log of non-positive value");
          return std::log(a);
        case Func::Sqrt:
          if (a < 0.0) throw ExprDomainError("sqrt of negative value");
          return std::sqrt(a);
        case Func::Abs:
          return std::fabs(a);
        case Func::Tanh:
          return std::tanh(a);
        case Func::Sign:
          return a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
      }
    }
  }
  throw ExprDomainError("corrupt expression node");
}

// -------------------------------------------------------- differentiation

NodePtr diff_node(const NodePtr& n, Variable v, bool& kink) {
  switch (n->kind) {
    case NodeKind::Literal:
      return make_literal(0.0);
    case NodeKind::Var:
      return make_literal(n->var == v ? 1.0 : 0.0);
    case NodeKind::Add:
      return s_add(diff_node(n->lhs, v, kink), diff_node(n->rhs, v, kink));
    case NodeKind::Sub:
      return s_sub(diff_node(n->lhs, v, kink), diff_node(n->rhs, v, kink));
    case NodeKind::Mul:
      return s_add(s_mul(diff_node(n->lhs, v, kink), n->rhs),
                   s_mul(n->lhs, diff_node(n->rhs, v, kink)));
    case NodeKind::Div: {
      NodePtr da = diff_node(n->lhs, v, kink);
      NodePtr db = diff_node(n->rhs, v, kink);
      if (is_lit(db, 0.0)) return s_div(da, n->rhs);
      return s_div(s_sub(s_mul(da, n->rhs), s_mul(n->lhs, db)), s_pow(n->rhs, 2));
    }
    case NodeKind::Neg:
      return s_neg(diff_node(n->lhs, v, kink));
    case NodeKind::Pow: {
      NodePtr da = diff_node(n->lhs, v, kink);
      if (is_lit(da, 0.0)) return da;
      return s_mul(s_mul(make_literal(n->exponent), s_pow(n->lhs, n->exponent - 1)), da);
    }
    case NodeKind::Call: {
      const NodePtr& a = n->lhs;
      NodePtr da = diff_node(a, v, kink);
      if (is_lit(da, 0.0) && n->func != Func::Abs && n->func != Func::Sign) return da;
      NodePtr outer;
      switch (n->func) {
        case Func::Sin:
          outer = make_call(Func::Cos, a);
          break;
        case Func::Cos:
          outer = s_neg(make_call(Func::Sin, a));
          break;
        case Func::Tan:
          outer = s_pow(make_call(Func::Cos, a), -2);
          break;
        case Func::Exp:
          outer = n;
          break;
        case Func::Log:
          return s_div(da, a);
        case Func::Sqrt:
          return s_div(da, s_mul(make_literal(2.0), n));
        case Func::Abs:
          if (is_lit(da, 0.0)) return da;
          kink = true;
          outer = make_call(Func::Sign, a);
          break;
        case Func::Tanh:
          outer = s_sub(make_literal(1.0), s_pow(n, 2));
          break;
        case Func::Sign:
          if (!is_lit(da, 0.0)) kink = true;
          return make_literal(0.0);
      }
      return s_mul(outer, da);
    }
  }
  throw std::logic_error("corrupt expression node");
}

// ---------------------------------------------------------------- printing

int precedence(const Node& n) {
  switch (n.kind) {
    case NodeKind::Add:
    case NodeKind::Sub:
      return 1;
    case NodeKind::Mul:
    case NodeKind::Div:
      return 2;
    case NodeKind::Neg:
      return 3;
    case NodeKind::Pow:
      return 4;
    case NodeKind::Literal:
      return n.value < 0.0 ? 3 : 5;
    default:
      return 5;
  }
}

std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void print_node(const Node& n, std::string& out);

void print_child(const Node& child, int min_prec, std::string& out) {
  if (precedence(child) < min_prec) {
    out += '(';
    print_node(child, out);
    out += ')';
  } else {
    print_node(child, out);
  }
}

void print_node(const Node& n, std::string& out) {
  switch (n.kind) {
    case NodeKind::Literal:
      out += format_double(n.value);
      return;
    case NodeKind::Var:
      switch (n.var.kind) {
        case VarKind::State:
          out += 'x' + std::to_string(n.var.index + 1);
          return;
        case VarKind::Control:
          out += 'u' + std::to_string(n.var.index + 1);
          return;
        case VarKind::Time:
          out += 't';
          return;
      }
      return;
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Mul:
    case NodeKind::Div: {
      const int p = precedence(n);
      print_child(*n.lhs, p, out);
      out += n.kind == NodeKind::Add ? "+" : n.kind == NodeKind::Sub ? "-"
                                         : n.kind == NodeKind::Mul   ? "*"
                                                                     : "/";
      print_child(*n.rhs, p + 1, out);
      return;
    }
    case NodeKind::Neg:
      out += '-';
      print_child(*n.lhs, 3, out);
      return;
    case NodeKind::Pow:
      print_child(*n.lhs, 5, out);
      out += '^';
      out += std::to_string(n.exponent);
      return;
    case NodeKind::Call:
      out += func_name(n.func);
      out += '(';
      print_node(*n.lhs, out);
      out += ')';
      return;
  }
}

bool equal_nodes(const Node& a, const Node& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case NodeKind::Literal:
      return a.value == b.value;
    case NodeKind::Var:
      return a.var == b.var;
    case NodeKind::Neg:
      return equal_nodes(*a.lhs, *b.lhs);
    case NodeKind::Pow:
      return a.exponent == b.exponent && equal_nodes(*a.lhs, *b.lhs);
    case NodeKind::Call:
      return a.func == b.func && equal_nodes(*a.lhs, *b.lhs);
    default:
      return equal_nodes(*a.lhs, *b.lhs) && equal_nodes(*a.rhs, *b.rhs);
  }
}

template <typename Pred>
bool any_node(const Node& n, Pred&& pred) {
  if (pred(n)) return true;
  if (n.lhs && any_node(*n.lhs, pred)) return true;
  if (n.rhs && any_node(*n.rhs, pred)) return true;
  return false;
}

}  // namespace

const char* func_name(Func f) {
  for (const auto& e : kFuncs)
    if (e.func == f) return e.name;
  return "?";
}

Expr Expr::parse(const std::string& source, std::size_t n, std::size_t m) {
  return Expr(Parser(source, n, m).parse());
}

Expr Expr::constant(double v) { return Expr(make_literal(v)); }
Expr Expr::variable(Variable v) { return Expr(make_var(v)); }

double Expr::eval(const EvalPoint& p) const {
  if (!root_) throw ExprDomainError("evaluating an empty expression");
  return eval_node(*root_, p);
}

Expr Expr::diff(Variable v) const {
  bool kink = false;
  NodePtr d = diff_node(root_, v, kink);
  return Expr(std::move(d), kink || kink_);
}

std::string Expr::str() const {
  std::string out;
  if (root_) print_node(*root_, out);
  return out;
}

bool Expr::has_nonsmooth() const {
  return root_ && any_node(*root_, [](const Node& n) {
           return n.kind == NodeKind::Call && (n.func == Func::Abs || n.func == Func::Sign);
         });
}

bool Expr::depends_on(Variable v) const {
  return root_ &&
         any_node(*root_, [&](const Node& n) { return n.kind == NodeKind::Var && n.var == v; });
}

bool Expr::depends_on_kind(VarKind k) const {
  return root_ && any_node(*root_, [&](const Node& n) {
           return n.kind == NodeKind::Var && n.var.kind == k;
         });
}

bool Expr::is_literal(double v) const { return root_ && is_lit(root_, v); }

bool operator==(const Expr& a, const Expr& b) {
  if (!a.root_ || !b.root_) return a.root_ == b.root_;
  return equal_nodes(*a.root_, *b.root_);
}

Expr operator+(const Expr& a, const Expr& b) {
  return Expr(s_add(a.root(), b.root()), a.kink() || b.kink());
}
Expr operator-(const Expr& a, const Expr& b) {
  return Expr(s_sub(a.root(), b.root()), a.kink() || b.kink());
}
Expr operator*(const Expr& a, const Expr& b) {
  return Expr(s_mul(a.root(), b.root()), a.kink() || b.kink());
}
Expr operator-(const Expr& a) { return Expr(s_neg(a.root()), a.kink()); }

std::vector<Expr> parse_all(const std::vector<std::string>& sources, std::size_t n,
                            std::size_t m) {
  std::vector<Expr> out;
  out.reserve(sources.size());
  for (const auto& s : sources) out.push_back(Expr::parse(s, n, m));
  return out;
}

}  // namespace pmpstab
