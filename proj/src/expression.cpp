#include "anholo/expression.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <numbers>

#include "anholo/errors.hpp"

namespace anholo {

namespace {

const char* const kFn1[] = {"exp", "log", "sin", "cos", "tan", "sqrt", "abs", "tanh", "sinh", "cosh"};
const char* const kFn2[] = {"pow", "min", "max"};

double apply1(unsigned char f, double x) {
  switch (f) {
    case 0: return std::exp(x);
    case 1: return std::log(x);
    case 2: return std::sin(x);
    case 3: return std::cos(x);
    case 4: return std::tan(x);
    case 5: return std::sqrt(x);
    case 6: return std::abs(x);
    case 7: return std::tanh(x);
    case 8: return std::sinh(x);
    default: return std::cosh(x);
  }
}

double apply2(unsigned char f, double a, double b) {
  switch (f) {
    case 0: return std::pow(a, b);
    case 1: return std::min(a, b);
    default: return std::max(a, b);
  }
}

}  // namespace

class ExpressionParser {
 public:
  explicit ExpressionParser(const std::string& s) : s_(s) {}

  Expression run() {
    Expression e;
    e.text_ = s_;
    out_ = &e.code_;
    expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected character");
    if (e.code_.empty()) fail("empty expression");
    int depth = 0, worst = 0;
    for (const auto& i : e.code_) {
      if (i.op == Op::num || i.op == Op::var) ++depth;
      else if (i.op != Op::neg && i.op != Op::fn1) --depth;
      worst = std::max(worst, depth);
    }
    if (worst > 60) fail("expression too deeply nested");
    return e;
  }

 private:
  using Op = Expression::Op;

  [[noreturn]] void fail(const std::string& what) const {
    throw InvalidArgument("expression '" + s_ + "': " + what + " at position " + std::to_string(pos_));
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void emit(Op op, unsigned char arg = 0, double v = 0.0) { out_->push_back({op, arg, v}); }

  void expr() {
    term();
    for (;;) {
      if (eat('+')) {
        term();
        emit(Op::add);
      } else if (eat('-')) {
        term();
        emit(Op::sub);
      } else {
        return;
      }
    }
  }
  void term() {
    unary();
    for (;;) {
      if (eat('*')) {
        unary();
        emit(Op::mul);
      } else if (eat('/')) {
        unary();
        emit(Op::div);
      } else {
        return;
      }
    }
  }
  void unary() {
    if (eat('-')) {
      unary();
      emit(Op::neg);
    } else if (eat('+')) {
      unary();
    } else {
      power();
    }
  }
  void power() {
    primary();
    if (eat('^')) {
      unary();
      emit(Op::pow);
    }
  }
  void primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    const char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = s_.c_str() + pos_;
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      if (end == begin) fail("bad number");
      pos_ += static_cast<std::size_t>(end - begin);
      emit(Op::num, 0, v);
      return;
    }
    if (eat('(')) {
      expr();
      if (!eat(')')) fail("expected ')'");
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t b = pos_;
      while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
      const std::string id = s_.substr(b, pos_ - b);
      if (eat('(')) {
        call(id);
        return;
      }
      if (id == "x1") emit(Op::var, 0);
      else if (id == "x2") emit(Op::var, 1);
      else if (id == "t" || id == "y3" || id == "x3") emit(Op::var, 2);
      else if (id == "y4") emit(Op::var, 3);
      else if (id == "pi") emit(Op::num, 0, std::numbers::pi);
      else if (id == "e") emit(Op::num, 0, std::numbers::e);
      else fail("unknown identifier '" + id + "'");
      return;
    }
    fail("unexpected character");
  }
  void call(const std::string& id) {
    for (unsigned char k = 0; k < std::size(kFn1); ++k)
      if (id == kFn1[k]) {
        expr();
        if (!eat(')')) fail("expected ')'");
        emit(Op::fn1, k);
        return;
      }
    for (unsigned char k = 0; k < std::size(kFn2); ++k)
      if (id == kFn2[k]) {
        expr();
        if (!eat(',')) fail("expected ','");
        expr();
        if (!eat(')')) fail("expected ')'");
        emit(Op::fn2, k);
        return;
      }
    fail("unknown function '" + id + "'");
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  std::vector<Expression::Instr>* out_ = nullptr;
};

Expression Expression::parse(const std::string& text) { return ExpressionParser(text).run(); }

Expression Expression::constant(double v) {
  Expression e;
  e.text_ = std::to_string(v);
  e.code_.push_back({Op::num, 0, v});
  return e;
}

bool Expression::uses_variable(int slot) const {
  for (const auto& i : code_)
    if (i.op == Op::var && i.arg == slot) return true;
  return false;
}

double Expression::eval(const std::array<double, 4>& u) const {
  double st[64];
  int sp = 0;
  for (const auto& i : code_) {
    switch (i.op) {
      case Op::num: st[sp++] = i.value; break;
      case Op::var: st[sp++] = u[i.arg]; break;
      case Op::add: --sp; st[sp - 1] += st[sp]; break;
      case Op::sub: --sp; st[sp - 1] -= st[sp]; break;
      case Op::mul: --sp; st[sp - 1] *= st[sp]; break;
      case Op::div: --sp; st[sp - 1] /= st[sp]; break;
      case Op::pow: --sp; st[sp - 1] = std::pow(st[sp - 1], st[sp]); break;
      case Op::neg: st[sp - 1] = -st[sp - 1]; break;
      case Op::fn1: st[sp - 1] = apply1(i.arg, st[sp - 1]); break;
      case Op::fn2: --sp; st[sp - 1] = apply2(i.arg, st[sp - 1], st[sp]); break;
    }
  }
  return st[0];
}

}  // namespace anholo
