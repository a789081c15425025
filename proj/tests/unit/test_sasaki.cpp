#include <doctest.h>

#include <cmath>

#include "anholo/errors.hpp"
#include "anholo/sasaki.hpp"
#include "helpers.hpp"

using namespace anholo;
using testutil::box;
using U4 = std::array<double, 4>;

TEST_CASE("sasaki lift of a flat quadratic Lagrangian") {
  const auto c = box({0, 0, 0.5, 0.5}, {1, 1, 1.5, 1.5}, {4, 4, 4, 4});
  const auto m = sasaki_lift([](const U4& u) { return u[2] * u[2] + u[3] * u[3]; }, c);
  for (std::size_t p = 0; p < c.size(); ++p) {
    CHECK(m.h[0][p] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(m.h[1][p]) < 1e-6);
    CHECK(m.h[2][p] == doctest::Approx(1.0).epsilon(1e-6));
    for (int k = 0; k < 3; ++k) CHECK(m.g[k][p] == m.h[k][p]);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(m.n[k][p]) < 1e-6);
  }
}

TEST_CASE("sasaki spray matches the analytic nonlinear connection") {
  // L = e^{x1} |y|^2 gives N^a_j = 1/2 (delta_j1 y^a + y^1 delta_aj - delta_a1 y^j).
  const auto c = box({0, 0, 0.5, -0.7}, {0.8, 0.8, 1.5, 0.3}, {5, 5, 5, 5});
  const auto m = sasaki_lift([](const U4& u) { return std::exp(u[0]) * (u[2] * u[2] + u[3] * u[3]); }, c);
  double worst = 0.0;
  for (std::size_t p = 0; p < c.size(); ++p) {
    const auto u = c.coords(p);
    const double y[2] = {u[2], u[3]};
    for (int a = 0; a < 2; ++a)
      for (int j = 0; j < 2; ++j) {
        const double expect = 0.5 * ((j == 0 ? y[a] : 0.0) + (a == j ? y[0] : 0.0) - (a == 0 ? y[j] : 0.0));
        worst = std::max(worst, std::abs(m.n[static_cast<std::size_t>(2 * a + j)][p] - expect));
      }
    CHECK(m.h[0][p] == doctest::Approx(std::exp(u[0])).epsilon(1e-6));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("sasaki user-supplied N wins over the spray") {
  const auto c = box({0, 0, 0.5, 0.5}, {1, 1, 1.5, 1.5}, {3, 3, 3, 3});
  SasakiOptions opt;
  std::array<Field, 4> n;
  for (int k = 0; k < 4; ++k) n[static_cast<std::size_t>(k)].assign(c.size(), 0.1 * (k + 1));
  opt.user_n = n;
  const auto m = sasaki_lift([](const U4& u) { return std::exp(u[0]) * (u[2] * u[2] + u[3] * u[3]); }, c, opt);
  for (int k = 0; k < 4; ++k) CHECK(m.n[static_cast<std::size_t>(k)] == n[static_cast<std::size_t>(k)]);
}

TEST_CASE("sasaki lift rejects degenerate and indefinite Hessians") {
  const auto c = box({0, 0, 0.5, 0.5}, {1, 1, 1.5, 1.5}, {3, 3, 3, 3});
  CHECK_THROWS_AS(sasaki_lift([](const U4& u) { return u[2] * u[2]; }, c), SingularMetric);
  CHECK_THROWS_AS(sasaki_lift([](const U4& u) { return u[2] * u[2] - u[3] * u[3]; }, c), SingularMetric);
}
