#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "anholo/errors.hpp"
#include "anholo/spde.hpp"
#include "helpers.hpp"

using namespace anholo;
using namespace anholo::spde;
using std::numbers::pi;

namespace {

std::vector<MonotoneGraph> all_graphs() {
  return {MonotoneGraph::stefan(0.3, 0.5, 1.0, 2.0), MonotoneGraph::sign_power(1.5, 0.5), MonotoneGraph::sign_power(1.0, 0.0),
          MonotoneGraph::sign_power(0.7, 1.0), MonotoneGraph::heaviside_soc(0.2, 0.5), MonotoneGraph::linear(1.3)};
}

Discretization unit_square(std::size_t n) { return discretize(SpdeDomain::flat(2, {0, 0, 0}, {1, 1, 0}, {n, n, 1})); }

}  // namespace

TEST_CASE("graphs are monotone and centered graphs contain 0 at 0") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-3.0, 3.0), T(0.0, 1.0);
  for (const auto& raw : all_graphs()) {
    for (const auto& g : {raw, raw.centered()}) {
      bool ok = true;
      for (int k = 0; k < 100000 && ok; ++k) {
        double r1 = U(rng), r2 = U(rng);
        // Hit the vertical segments with positive probability.
        if (k % 10 == 0) r1 = g.critical_level();
        if (r1 > r2) std::swap(r1, r2);
        if (r1 == r2) continue;
        const Interval a = g.values(r1), b = g.values(r2);
        const double s1 = a.lo + T(rng) * (a.hi - a.lo), s2 = b.lo + T(rng) * (b.hi - b.lo);
        ok = s1 <= s2;
      }
      CHECK_MESSAGE(ok, g.describe());
    }
    const Interval z = raw.centered().values(0.0);
    CHECK(z.lo <= 0.0);
    CHECK(z.hi >= 0.0);
  }
}

TEST_CASE("polynomial growth bound holds") {
  for (const auto& raw : all_graphs()) {
    const auto g = raw.centered();
    const auto gr = g.growth();
    for (double r = -50; r <= 50; r += 0.37) {
      const Interval v = g.values(r);
      CHECK(std::max(std::abs(v.lo), std::abs(v.hi)) <= gr.C * (1 + std::pow(std::abs(r), gr.a)) + 1e-12);
    }
  }
}

TEST_CASE("resolvent satisfies its defining inclusion") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  for (const auto& raw : all_graphs())
    for (const auto& g : {raw, raw.centered()})
      for (double eps : {1e-1, 1e-2, 1e-3}) {
        double worst = 0.0, lip = 0.0;
        for (int k = 0; k < 2000; ++k) {
          const double r = U(rng);
          const double s = g.resolvent(eps, r);
          const Interval v = g.values(s);
          const double theta = (r - s) / eps;
          // (r - s)/eps must lie in Psi(s); allow rounding relative to 1/eps.
          worst = std::max(worst, std::max(v.lo - theta, theta - v.hi));
          const double r2 = r + 1e-3;
          lip = std::max(lip, (g.yosida(eps, r2) - g.yosida(eps, r)) / 1e-3);
          CHECK(g.yosida(eps, r2) >= g.yosida(eps, r) - 1e-9);
        }
        CHECK_MESSAGE(worst < 1e-9 / eps, g.describe());
        CHECK(lip <= 1.0 / eps * (1 + 1e-6));
        CHECK(lip <= g.lipschitz(eps) * (1 + 1e-6) + 1e-9);
      }
}

TEST_CASE("resolvent closed forms") {
  const double eps = 0.01;
  const auto lin = MonotoneGraph::linear(1.0);
  CHECK(lin.resolvent(eps, 2.0) == doctest::Approx(2.0 / 1.01));
  CHECK(lin.yosida(eps, 2.0) == doctest::Approx(2.0 / 1.01));
  const auto st = MonotoneGraph::stefan(0.3, 0.5, 1.0, 2.0);
  CHECK(st.resolvent(eps, 0.3 + eps * 0.25) == doctest::Approx(0.3));
  CHECK(st.yosida(eps, 0.3 + eps * 0.25) == doctest::Approx(0.25));
  const auto soc = MonotoneGraph::heaviside_soc(0.2, 0.5);
  CHECK(soc.yosida(eps, 0.5) == doctest::Approx(0.0));
  const auto sg = MonotoneGraph::sign_power(1.0, 0.0);
  CHECK(sg.resolvent(eps, 0.005) == 0.0);
  CHECK(sg.resolvent(eps, 0.5) == doctest::Approx(0.49));
}

TEST_CASE("Yosida approximation converges to a selection as eps -> 0") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (const auto& raw : all_graphs()) {
    const auto g = raw.centered();
    for (int k = 0; k < 100; ++k) {
      const double r = U(rng);
      const Interval v = g.values(r);
      if (v.lo != v.hi) continue;
      double prev = INFINITY;
      for (double eps : {1e-2, 1e-3, 1e-4}) {
        const double err = std::abs(g.yosida(eps, r) - v.lo);
        CHECK(err <= prev + 1e-12);
        prev = err;
      }
      CHECK(prev < 0.02 + 1e-2 * std::abs(v.lo));
    }
  }
}

TEST_CASE("invalid graph parameters are rejected") {
  CHECK_THROWS_AS(MonotoneGraph::stefan(0.0, 1, 1, 1), InvalidArgument);
  CHECK_THROWS_AS(MonotoneGraph::sign_power(1.0, 1.5), InvalidArgument);
  CHECK_THROWS_AS(MonotoneGraph::heaviside_soc(-0.1, 0.5), InvalidArgument);
  CHECK_THROWS_AS(MonotoneGraph::linear(-1.0), InvalidArgument);
  CHECK_THROWS_AS(MonotoneGraph::linear(1.0).resolvent(0.0, 1.0), InvalidArgument);
}

TEST_CASE("Dirichlet spectrum of the unit interval") {
  auto rel_err = [](std::size_t n) {
    const auto d = discretize(SpdeDomain::flat(1, {0, 0, 0}, {1, 0, 0}, {n, 1, 1}));
    const auto ep = eigensolve_laplacian(d, 4);
    CHECK(ep.max_residual < 1e-8);
    CHECK(ep.orthonormality_error < 1e-8);
    double w = 0.0;
    for (int k = 0; k < 4; ++k) w = std::max(w, std::abs(ep.lambda[k] / std::pow((k + 1) * pi, 2) - 1));
    // e_1 is proportional to sin(pi x).
    const Eigen::VectorXd e = ep.vectors.col(0);
    for (std::size_t i = 0; i < d.unknowns(); ++i) {
      const double x = d.domain.coords(d.interior[i])[0];
      CHECK(e[static_cast<Eigen::Index>(i)] == doctest::Approx(std::sqrt(2.0) * std::sin(pi * x)).epsilon(0.02));
    }
    return w;
  };
  const double a = rel_err(33), b = rel_err(65);
  CHECK(a < 2e-2);
  CHECK(a / b == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("Dirichlet spectrum of the unit square, dense and iterative") {
  const auto d = unit_square(21);
  const auto ep = eigensolve_laplacian(d, 6);
  const double expect[6] = {2, 5, 5, 8, 10, 10};
  for (int k = 0; k < 6; ++k) CHECK(ep.lambda[k] / (pi * pi * expect[k]) == doctest::Approx(1.0).epsilon(0.02));
  const auto it = eigensolve_laplacian(d, 6, 10);
  for (int k = 0; k < 6; ++k) CHECK(it.lambda[k] == doctest::Approx(ep.lambda[k]).epsilon(1e-9));
  CHECK(it.max_residual < 1e-8);
  CHECK(it.orthonormality_error < 1e-8);
}

TEST_CASE("conformal perturbation shifts eigenvalues continuously") {
  const auto base = eigensolve_laplacian(unit_square(17), 4);
  for (double amp : {1e-3, 1e-2}) {
    const auto d = discretize(SpdeDomain::conformal(2, {0, 0, 0}, {1, 1, 0}, {17, 17, 1},
                                                    [amp](const std::array<double, 3>& u) { return amp * std::sin(3 * u[0] + u[1]); }));
    const auto ep = eigensolve_laplacian(d, 4);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(ep.lambda[k] / base.lambda[k] - 1) <= 2 * amp);
  }
}

TEST_CASE("mixed metric operator is symmetric and matches a polynomial oracle") {
  // g = [[1, 0.3], [0.3, 1]] constant: -Delta u = -g^{ij} d_i d_j u, exact on quadratics.
  const auto dom = SpdeDomain::from_metric(2, {0, 0, 0}, {1, 1, 0}, {9, 9, 1},
                                           [](const std::array<double, 3>&) { return std::array<double, 6>{1, 0.3, 0, 1, 0, 1}; });
  const auto d = discretize(dom);
  CHECK((Eigen::MatrixXd(d.K) - Eigen::MatrixXd(d.K).transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Field u(dom.size());
  for (std::size_t p = 0; p < dom.size(); ++p) {
    const auto x = dom.coords(p);
    u[p] = x[0] * x[1];
  }
  // K acts on interior unknowns with zero boundary values, so test at nodes two away from the edge
  // using the full-field stencil: add the boundary contribution by hand via a field with u = 0 on the edge.
  const double inv = 1.0 / (1 - 0.09);
  const double expect = -2 * (-0.3 * inv);  // -(g^{12} + g^{21}) d_1 d_2 (x y)
  Field v(dom.size(), 0.0);
  for (std::size_t p = 0; p < dom.size(); ++p) {
    const auto x = dom.coords(p);
    v[p] = x[0] * (1 - x[0]) * x[1] * (1 - x[1]);
  }
  const Eigen::VectorXd Kv = (d.K * d.restrict_field(v)).cwiseQuotient(d.M);
  for (std::size_t i = 0; i < d.unknowns(); ++i) {
    const auto x = dom.coords(d.interior[i]);
    const double X = x[0], Y = x[1];
    // -g^{ij} d_i d_j v for v = x(1-x)y(1-y).
    const double vxx = -2 * Y * (1 - Y), vyy = -2 * X * (1 - X), vxy = (1 - 2 * X) * (1 - 2 * Y);
    const double lap = inv * (vxx + vyy) - 2 * 0.3 * inv * vxy;
    CHECK(Kv[static_cast<Eigen::Index>(i)] == doctest::Approx(-lap).epsilon(1e-9));
  }
  (void)expect;
}

TEST_CASE("eigensolve rejects Lorentz-flagged metrics") {
  auto c = testutil::box({0, 0, 0, 0}, {1, 1, 1, 1}, {5, 5, 3, 3});
  DMetric m = DMetric::zeros(c);
  m = sample_metric(c, [](const std::array<double, 4>&) { return MetricSample{}; });
  m.signature = Signature::lorentz;
  CHECK_THROWS_AS(eigensolve_laplacian(m, 2), InvalidArgument);
}

TEST_CASE("noise increments") {
  const auto d = unit_square(13);
  auto ns = make_noise(d, eigensolve_laplacian(d, 8));
  CHECK(ns.trace_sum > 0);
  CHECK(ns.l_e[0] == doctest::Approx(1.0));
  std::mt19937_64 rng(5);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.unknowns()));
  CHECK(sample_noise(ns, zero, 0.01, rng).cwiseAbs().maxCoeff() == 0.0);
  auto quiet = make_noise(d, eigensolve_laplacian(d, 8), std::vector<double>(8, 0.0));
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d.unknowns()));
  CHECK(sample_noise(quiet, one, 0.01, rng).cwiseAbs().maxCoeff() == 0.0);

  // Var <increment, e_1> = nu_1^2 <l, e_1>^2 <U e_1, e_1>^2 dchi.
  Eigen::VectorXd U(static_cast<Eigen::Index>(d.unknowns()));
  for (std::size_t i = 0; i < d.unknowns(); ++i) U[static_cast<Eigen::Index>(i)] = 1.0 + d.domain.coords(d.interior[i])[0];
  const Eigen::VectorXd e1 = ns.basis.vectors.col(0);
  const double dchi = 0.01, ue = d.inner(U.cwiseProduct(e1), e1);
  const double expect = ns.nu[0] * ns.nu[0] * ns.l_e[0] * ns.l_e[0] * ue * ue * dchi;
  double s = 0, s2 = 0;
  const int N = 10000;
  for (int k = 0; k < N; ++k) {
    const double v = d.inner(sample_noise(ns, U, dchi, rng), e1);
    s += v;
    s2 += v * v;
  }
  const double var = s2 / N - (s / N) * (s / N);
  CHECK(var / expect == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("noise admissibility") {
  const auto d = unit_square(9);
  auto ep = eigensolve_laplacian(d, 4);
  std::vector<double> bad{0.001, 0.01, 0.01, 0.01};
  CHECK_THROWS_AS(make_noise(d, ep, bad), InvalidArgument);
  CHECK_THROWS_AS(make_noise(d, ep, std::vector<double>{-1, 0, 0, 0}), InvalidArgument);
}

TEST_CASE("linear drift without noise is the exact implicit Euler heat step") {
  const auto d = unit_square(15);
  const auto ep = eigensolve_laplacian(d, 5);
  const auto lin = MonotoneGraph::linear(1.0);
  for (InnerSolver solver : {InnerSolver::newton, InnerSolver::fixed_point}) {
    StepOptions opt;
    opt.solver = solver;
    opt.eps_min = 0.01;
    for (int k = 0; k < 5; ++k) {
      SPDEState s{ep.vectors.col(k), 0.0, 0, 0.0};
      const double dchi = 0.002;
      step(s, dchi, lin, d, nullptr, nullptr, opt);
      const double factor = 1.0 / (1.0 + dchi * ep.lambda[k] / (1.0 + 0.01));
      CHECK((s.U - factor * ep.vectors.col(k)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(s.eps == 0.01);
    }
  }
}

TEST_CASE("identity and zero dynamics") {
  const auto d = unit_square(9);
  Eigen::VectorXd U = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(d.unknowns()), 0.1, 2.0);
  SPDEState s{U, 0.0, 0, 0.0};
  step(s, 0.01, MonotoneGraph::linear(0.0), d, nullptr, nullptr, {});
  CHECK((s.U - U).cwiseAbs().maxCoeff() == 0.0);
  for (const auto& g : all_graphs()) {
    SPDEState z{Eigen::VectorXd::Zero(U.size()), 0.0, 0, 0.0};
    step(z, 0.01, g.centered(), d, nullptr, nullptr, {});
    CHECK(z.U.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("Brownian bridge refinement preserves the coarse increments") {
  std::mt19937_64 rng(9), br(10);
  const auto w = WienerPath::sample(3, 50, 0.02, rng);
  const auto f = w.refine(br);
  CHECK(f.steps() == 100);
  CHECK(f.dchi() == 0.01);
  double s2 = 0;
  for (std::size_t k = 0; k < 50; ++k)
    for (int m = 0; m < 3; ++m) {
      const double a = f.increment(2 * k)[static_cast<std::size_t>(m)], b = f.increment(2 * k + 1)[static_cast<std::size_t>(m)];
      CHECK(a + b == doctest::Approx(w.increment(k)[static_cast<std::size_t>(m)]).epsilon(1e-12));
      s2 += a * a + b * b;
    }
  CHECK(s2 / 300 == doctest::Approx(0.01).epsilon(0.3));
}

TEST_CASE("deterministic SOC run absorbs the supercritical region") {
  const auto d = unit_square(17);
  SpdeProblem pb{d, MonotoneGraph::heaviside_soc(0.1, 0.5), make_noise(d, eigensolve_laplacian(d, 4), std::vector<double>(4, 0.0)),
                 {}, 0.005, 60, 0.5, 1e-8, {}};
  Field init(d.domain.size());
  for (std::size_t p = 0; p < init.size(); ++p) {
    const auto x = d.domain.coords(p);
    init[p] = 1.2 * std::sin(pi * x[0]) * std::sin(pi * x[1]);
  }
  pb.initial = d.restrict_field(init);
  const auto tr = run(pb, 1, 0);
  REQUIRE(tr.converged);
  CHECK(tr.m.front() > 0);
  for (std::size_t k = 1; k < tr.m.size(); ++k) CHECK(tr.m[k] <= tr.m[k - 1]);
  CHECK(tr.m.back() == 0.0);
  CHECK(tr.positivity_ok);
}

TEST_CASE("Spearman trend test") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  auto [r1, p1] = spearman_decreasing(x, {5, 4, 3, 2, 1});
  CHECK(r1 == -1.0);
  CHECK(p1 == 0.0);
  auto [r2, p2] = spearman_decreasing(x, {2, 1, 4, 3, 5});
  CHECK(r2 == doctest::Approx(0.8));
  CHECK(p2 > 0.9);
  // Ties use average ranks: y = {3, 1, 1, 0, 0} has ranks {5, 3.5, 3.5, 1.5, 1.5}.
  auto [r3, p3] = spearman_decreasing(x, {3, 1, 1, 0, 0});
  CHECK(r3 == doctest::Approx(-0.9486832980505138));
  CHECK(p3 < 0.05);
}

TEST_CASE("Moreau envelope derivative is the Yosida approximation") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (const auto& raw : all_graphs())
    for (const auto& g : {raw, raw.centered()})
      for (double eps : {1e-1, 1e-2}) {
        double worst = 0.0;
        for (int k = 0; k < 500; ++k) {
          const double r = U(rng), h = 1e-6;
          const double fd = (g.yosida_potential(eps, r + h) - g.yosida_potential(eps, r - h)) / (2 * h);
          worst = std::max(worst, std::abs(fd - g.yosida(eps, r)));
        }
        CHECK_MESSAGE(worst < 1e-5 / eps, g.describe());
      }
}

TEST_CASE("Newton and fixed point agree on a stiff SOC step") {
  const auto d = unit_square(17);
  const auto g = MonotoneGraph::heaviside_soc(0.1, 0.5).centered();
  Field init(d.domain.size());
  for (std::size_t p = 0; p < init.size(); ++p) {
    const auto x = d.domain.coords(p);
    init[p] = 1.2 * std::sin(pi * x[0]) * std::sin(pi * x[1]);
  }
  StepOptions a, b;
  a.eps_min = b.eps_min = 0.01;
  b.solver = InnerSolver::fixed_point;
  SPDEState sa{d.restrict_field(init), 0, 0, 0}, sb = sa;
  for (int k = 0; k < 5; ++k) {
    step(sa, 0.005, g, d, nullptr, nullptr, a);
    step(sb, 0.005, g, d, nullptr, nullptr, b);
  }
  CHECK((sa.U - sb.U).lpNorm<Eigen::Infinity>() < 1e-8);
}
