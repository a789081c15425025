#include <doctest.h>

#include <cmath>
#include <numbers>

#include "anholo/errors.hpp"
#include "anholo/expression.hpp"

using anholo::Expression;
using anholo::InvalidArgument;

namespace {
double ev(const char* s, std::array<double, 4> u = {0, 0, 0, 0}) { return Expression::parse(s).eval(u); }
}  // namespace

TEST_CASE("expression precedence and associativity") {
  CHECK(ev("1 + 2*3^2") == 19.0);
  CHECK(ev("2^3^2") == 512.0);
  CHECK(ev("-2^2") == -4.0);
  CHECK(ev("(1 + 2)*3") == 9.0);
  CHECK(ev("8/4/2") == 1.0);
  CHECK(ev("1 - 2 - 3") == -4.0);
  CHECK(ev("2*-3") == -6.0);
  CHECK(ev("1.5e2 + .5") == 150.5);
}

TEST_CASE("expression variables, constants and functions") {
  const std::array<double, 4> u{0.5, -1.0, 2.0, 3.0};
  CHECK(ev("x1 + 10*x2 + 100*t + 1000*y4", u) == doctest::Approx(0.5 - 10 + 200 + 3000));
  CHECK(ev("y3 - x3", u) == 0.0);
  CHECK(ev("pi") == doctest::Approx(std::numbers::pi));
  CHECK(ev("log(e)") == doctest::Approx(1.0));
  CHECK(ev("exp(x1)*cos(x2)", u) == doctest::Approx(std::exp(0.5) * std::cos(-1.0)));
  CHECK(ev("pow(t, 3) + min(x1, x2) + max(x1, x2)", u) == doctest::Approx(8.0 - 0.5));
  CHECK(ev("sqrt(abs(x2)) + tanh(0) + sinh(0) + cosh(0) + tan(0) + sin(0)", u) == doctest::Approx(2.0));
  CHECK(Expression::constant(2.5).eval(u) == 2.5);
}

TEST_CASE("expression variable usage") {
  const auto e = Expression::parse("x1*sin(t)");
  CHECK(e.uses_variable(0));
  CHECK_FALSE(e.uses_variable(1));
  CHECK(e.uses_variable(2));
  CHECK_FALSE(e.uses_variable(3));
  CHECK(e.text() == "x1*sin(t)");
}

TEST_CASE("expression syntax errors are rejected") {
  for (const char* bad : {"", "1 +", "(1", "1)", "foo(1)", "x5", "sin(1, 2)", "pow(1)", "2 $ 3", "1 2"})
    CHECK_THROWS_AS(Expression::parse(bad), InvalidArgument);
}
