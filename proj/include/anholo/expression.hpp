#pragma once

#include <array>
#include <string>
#include <vector>

namespace anholo {

// Small arithmetic expression language for user-supplied fields.
// Variables: x1, x2, t (aliases y3, x3), y4; constants pi, e.
// Functions: exp log sin cos tan sqrt abs tanh sinh cosh pow min max.
// Operators: + - * / ^ with the usual precedence; ^ is right-associative.
class Expression {
 public:
  Expression() = default;
  static Expression parse(const std::string& text);
  static Expression constant(double v);

  double eval(const std::array<double, 4>& u) const;
  const std::string& text() const { return text_; }
  bool uses_variable(int slot) const;

 private:
  enum class Op : unsigned char { num, var, add, sub, mul, div, pow, neg, fn1, fn2 };
  struct Instr {
    Op op;
    unsigned char arg = 0;
    double value = 0.0;
  };
  friend class ExpressionParser;
  std::string text_;
  std::vector<Instr> code_;
};

}  // namespace anholo
