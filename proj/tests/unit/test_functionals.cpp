#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "anholo/errors.hpp"
#include "anholo/functionals.hpp"
#include "helpers.hpp"

using namespace anholo;
using namespace anholo::functionals;
using testutil::box;
using U4 = std::array<double, 4>;
using BK = BoundaryKind;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

GridChart torus(std::size_t n, int order = 4) {
  return box({0, 0, 0, 0}, {kTwoPi, kTwoPi, kTwoPi, kTwoPi}, {n, n, n, n},
             {BK::periodic, BK::periodic, BK::periodic, BK::periodic}, order);
}

DMetric flat(const GridChart& c) {
  return sample_metric(c, [](const U4&) { return MetricSample{}; });
}

// N = 0 block product: g depends on x only, h on y only.
DMetric product_metric(const GridChart& c, double a, double b) {
  return sample_metric(c, [a, b](const U4& u) {
    MetricSample s;
    s.g = {1.0 + a * std::sin(u[0]), 0.1 * a * std::cos(u[1]), 1.2 + a * std::cos(u[0] + u[1])};
    s.h = {1.1 + b * std::cos(u[2]), 0.1 * b * std::sin(u[3]), 0.9 + b * std::sin(u[2] - u[3])};
    return s;
  });
}

Field potential(const GridChart& c) {
  return c.sample([](const U4& u) {
    return 0.3 * std::sin(u[0]) + 0.2 * std::cos(u[1] + u[2]) + 0.25 * std::sin(u[3]) * std::cos(u[0]);
  });
}

// Sphere patch of radius r on (theta, phi), flat v-block.
DMetric sphere(std::size_t n, double r = 1.0) {
  const auto c = box({0.6, 0, 0, 0}, {2.5, kTwoPi, kTwoPi, 1.0}, {n, 5, 5, 5},
                     {BK::dirichlet, BK::periodic, BK::periodic, BK::periodic}, 4);
  return sample_metric(c, [r](const U4& u) {
    MetricSample s;
    s.g = {r * r, 0.0, r * r * std::pow(std::sin(u[0]), 2)};
    return s;
  });
}

}  // namespace

TEST_CASE("F and W of a flat metric with constant potential") {
  const auto c = box({0, 0, 0, 0}, {1, 2, 1, 1.5}, {5, 5, 5, 5});
  const DMetric m = flat(c);
  const double cst = 0.7, tau = 0.8;
  const Field f(c.size(), cst);
  CHECK(F_functional(m, f) == doctest::Approx(0.0).epsilon(1e-14));
  const double vol = 3.0;
  const double mu = std::pow(4.0 * std::numbers::pi * tau, -2.0) * std::exp(-cst);
  CHECK(W_functional(m, f, tau) == doctest::Approx((cst - 4.0) * mu * vol).epsilon(1e-12));
}

TEST_CASE("F of a linear potential on a flat box matches the analytic integral") {
  const auto c = box({0, 0, 0, 0}, {1, 1, 1, 1}, {41, 5, 5, 5});
  const Field f = c.sample([](const U4& u) { return u[0]; });
  // int |df|^2 e^{-x1} = 1 - e^{-1}; trapezoid error h^2 / 12 * (1 - e^{-1}).
  const double exact = 1.0 - std::exp(-1.0);
  CHECK(std::abs(F_functional(flat(c), f) - exact) < 1e-4);
}

TEST_CASE("F on the unit sphere patch with constant potential is 2 e^{-c} vol") {
  const double cst = 0.4;
  double prev = 0.0;
  for (std::size_t n : {17, 33}) {
    const DMetric m = sphere(n);
    const Field f(m.chart.size(), cst);
    const double vol = (std::cos(0.6) - std::cos(2.5)) * kTwoPi * kTwoPi * 1.0;
    const double err = std::abs(F_functional(m, f) - 2.0 * std::exp(-cst) * vol) / (2.0 * std::exp(-cst) * vol);
    CHECK(err < 5e-3);
    if (prev > 0.0) CHECK(err < 0.3 * prev);
    prev = err;
  }
}

TEST_CASE("normalize_f gives unit mu-mass and is idempotent") {
  const auto c = torus(8);
  const DMetric m = product_metric(c, 0.2, 0.1);
  const double tau = 0.6;
  Field f = potential(c);
  for (double& v : f) v += 40.0;  // e^{-f} far below 1, still normalizable
  const Field g = normalize_f(f, tau, m);
  CHECK(std::abs(log_mu_mass(m, g, tau)) < 1e-12);
  const Field g2 = normalize_f(g, tau, m);
  for (std::size_t p = 0; p < g.size(); ++p) CHECK(std::abs(g2[p] - g[p]) < 1e-12);
}

TEST_CASE("W of a flat Gaussian matches an analytic-gradient quadrature") {
  const auto c = box({-2, -2, -2, -2}, {2, 2, 2, 2}, {33, 33, 9, 9},
                     {BK::dirichlet, BK::dirichlet, BK::periodic, BK::periodic}, 4);
  const double tau = 0.5;
  auto fn = [](const U4& u) { return 0.5 * (u[0] * u[0] + 0.5 * u[1] * u[1]); };
  const Field f = c.sample(fn);
  double oracle = 0.0;
  for (std::size_t p = 0; p < c.size(); ++p) {
    const auto u = c.coords(p);
    const double grad = u[0] * u[0] + 0.25 * u[1] * u[1];
    oracle += (tau * grad + f[p] - 4.0) * std::pow(4.0 * std::numbers::pi * tau, -2.0) * std::exp(-f[p]) *
              c.quadrature_weight(p);
  }
  CHECK(W_functional(flat(c), f, tau) == doctest::Approx(oracle).epsilon(1e-10));
}

TEST_CASE("W is invariant under joint scaling of metric and tau") {
  const auto c = torus(8);
  const DMetric m = product_metric(c, 0.2, 0.15);
  const Field f = potential(c);
  const double tau = 0.7, lam = 2.5;
  std::array<Field, 3> g = m.g, h = m.h;
  for (auto* blk : {&g, &h})
    for (auto& fld : *blk)
      for (double& v : fld) v *= lam;
  const DMetric ms = m.with_values(g, h);
  const double w0 = W_functional(m, f, tau), w1 = W_functional(ms, f, lam * tau);
  CHECK(std::abs(w1 - w0) < 1e-12 * std::max(1.0, std::abs(w0)));
}

TEST_CASE("first variation vanishes for a zero variation") {
  const auto c = torus(8);
  const DMetric m = product_metric(c, 0.2, 0.1);
  Variation var;
  for (auto* blk : {&var.v_h, &var.v_v})
    for (auto& fld : *blk) fld.assign(c.size(), 0.0);
  var.f_h.assign(c.size(), 0.0);
  var.f_v.assign(c.size(), 0.0);
  CHECK(first_variation(m, potential(c), var) == 0.0);
}

TEST_CASE("first variation matches a central difference of F on an N = 0 product") {
  const auto c = torus(16);
  const DMetric m = product_metric(c, 0.15, 0.1);
  const Field f = potential(c);
  Variation var;
  var.v_h = {c.sample([](const U4& u) { return 0.3 * std::cos(u[0]); }),
             c.sample([](const U4& u) { return 0.1 * std::sin(u[0] + u[1]); }),
             c.sample([](const U4& u) { return 0.2 * std::sin(u[1]); })};
  var.v_v = {c.sample([](const U4& u) { return 0.2 * std::sin(u[3]); }),
             c.sample([](const U4& u) { return 0.05 * std::cos(u[2]); }),
             c.sample([](const U4& u) { return 0.25 * std::cos(u[2] + u[3]); })};
  var.f_h = c.sample([](const U4& u) { return 0.2 * std::cos(u[1]); });
  var.f_v = c.sample([](const U4& u) { return 0.3 * std::sin(u[2]); });
  const double eps = std::cbrt(std::numeric_limits<double>::epsilon());
  auto shifted = [&](double s) {
    std::array<Field, 3> g = m.g, h = m.h;
    Field fs = f;
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t p = 0; p < c.size(); ++p) {
        g[k][p] += s * var.v_h[k][p];
        h[k][p] += s * var.v_v[k][p];
      }
    for (std::size_t p = 0; p < c.size(); ++p) fs[p] += s * (var.f_h[p] + var.f_v[p]);
    return F_functional(m.with_values(g, h), fs);
  };
  const double fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
  const double an = first_variation(m, f, var);
  CHECK(std::abs(an - fd) <= 1e-3 * std::abs(fd));
}

TEST_CASE("a pure h-variation has no v-part") {
  const auto c = torus(8);
  const DMetric m = product_metric(c, 0.2, 0.1);
  const Field f = potential(c);
  Variation var;
  var.v_h = {c.sample([](const U4& u) { return std::cos(u[0]); }), Field(c.size(), 0.0),
             c.sample([](const U4& u) { return std::sin(u[1]); })};
  for (auto& fld : var.v_v) fld.assign(c.size(), 0.0);
  var.f_h = c.sample([](const U4& u) { return std::sin(u[0]); });
  var.f_v.assign(c.size(), 0.0);
  const VariationSplit s = first_variation_split(ingredients(m, f), var);
  CHECK(s.v == 0.0);
  CHECK(s.h != 0.0);
}

TEST_CASE("thermodynamic triple: S = -W, sigma >= 0, consistent log Z") {
  const auto c = torus(8);
  const DMetric m = product_metric(c, 0.2, 0.15);
  const double tau = 0.9;
  const Field f = normalize_f(potential(c), tau, m);
  const FunctionalReport r = thermodynamics(m, f, tau);
  CHECK(std::abs(r.S_entropy + r.W) <= 1e-12 * std::max(1.0, std::abs(r.W)));
  CHECK(r.sigma >= 0.0);
  CHECK(std::isfinite(r.E));
  double z = 0.0;
  for (std::size_t p = 0; p < c.size(); ++p) {
    const double dv = c.quadrature_weight(p) *
                      std::sqrt(m.g[0][p] * m.g[2][p] - m.g[1][p] * m.g[1][p]) *
                      std::sqrt(m.h[0][p] * m.h[2][p] - m.h[1][p] * m.h[1][p]);
    z += (kHalfDim - f[p]) * std::pow(4.0 * std::numbers::pi * tau, -2.0) * std::exp(-f[p]) * dv;
  }
  CHECK(r.Z_log == doctest::Approx(z).epsilon(1e-12));
}

TEST_CASE("sigma vanishes on a flat metric with the Gaussian soliton potential") {
  // f = |x|^2 / (4 tau) gives Hess f = g / (2 tau); only the boundary-free h-block is varied.
  const auto c = box({-1, -1, 0, 0}, {1, 1, kTwoPi, kTwoPi}, {21, 21, 5, 5},
                     {BK::dirichlet, BK::dirichlet, BK::periodic, BK::periodic}, 4);
  const double tau = 0.5;
  const Field f = c.sample([tau](const U4& u) { return (u[0] * u[0] + u[1] * u[1]) / (4.0 * tau); });
  const Ingredients in = ingredients(flat(c), f);
  // h-part of the shifted square is zero; the v-part is |-h/(2 tau)|^2 = 2 / (4 tau^2) per node.
  double vpart = 0.0;
  for (std::size_t p = 0; p < c.size(); ++p)
    vpart += 2.0 / (4.0 * tau * tau) * std::pow(4.0 * std::numbers::pi * tau, -2.0) * std::exp(-f[p]) * in.dv[p];
  const FunctionalReport r = thermodynamics(in, tau);
  CHECK(r.sigma == doctest::Approx(2.0 * std::pow(tau, 4) * vpart).epsilon(1e-10));
}

TEST_CASE("F rate integrand is nonnegative and zero on a flat constant configuration") {
  const auto c = torus(8);
  CHECK(F_rate_integrand(ingredients(flat(c), Field(c.size(), 0.3))) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(F_rate_integrand(ingredients(product_metric(c, 0.2, 0.1), potential(c))) > 0.0);
  CHECK(W_rate_integrand(ingredients(product_metric(c, 0.2, 0.1), potential(c)), 0.7) > 0.0);
}

TEST_CASE("compare_connections is equivalent on N = 0 block products") {
  const auto c = torus(8);
  for (auto [a, b] : {std::pair{0.1, 0.1}, std::pair{0.2, 0.0}, std::pair{0.05, 0.25}}) {
    const ConnectionComparison cc = compare_connections(product_metric(c, a, b), potential(c), 0.8);
    CHECK(cc.verdict == Verdict::equivalent);
    CHECK(std::abs(cc.S_canonical - cc.S_levi_civita) <= 1e-8);
  }
  CHECK(std::string(to_string(Verdict::more)) == "more");
}

TEST_CASE("functionals reject bad input") {
  const auto c = torus(8);
  const DMetric m = flat(c);
  CHECK_THROWS_AS(W_functional(m, Field(c.size(), 0.0), 0.0), InvalidArgument);
  CHECK_THROWS_AS(F_functional(m, Field(3, 0.0)), InvalidArgument);
  Field bad(c.size(), 0.0);
  bad[5] = std::nan("");
  CHECK_THROWS_AS(F_functional(m, bad), InvalidArgument);
}
