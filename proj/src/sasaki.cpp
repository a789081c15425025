#include "anholo/sasaki.hpp"

#include <cmath>
#include <string>

#include "anholo/errors.hpp"

namespace anholo {

namespace {

using U4 = std::array<double, 4>;

struct Differ {
  const Lagrangian& L;
  double base;

  double step(const U4& u, int k) const { return base * (1.0 + std::abs(u[static_cast<std::size_t>(k)])); }

  double d1(const U4& u, int k) const {
    const double s = step(u, k);
    U4 a = u, b = u;
    a[static_cast<std::size_t>(k)] += s;
    b[static_cast<std::size_t>(k)] -= s;
    return (L(a) - L(b)) / (2 * s);
  }

  double d2(const U4& u, int k, int l) const {
    const auto uk = static_cast<std::size_t>(k), ul = static_cast<std::size_t>(l);
    const double sk = step(u, k);
    if (k == l) {
      U4 a = u, b = u;
      a[uk] += sk;
      b[uk] -= sk;
      return (L(a) - 2 * L(u) + L(b)) / (sk * sk);
    }
    const double sl = step(u, l);
    U4 pp = u, pm = u, mp = u, mm = u;
    pp[uk] += sk, pp[ul] += sl;
    pm[uk] += sk, pm[ul] -= sl;
    mp[uk] -= sk, mp[ul] += sl;
    mm[uk] -= sk, mm[ul] -= sl;
    return (L(pp) - L(pm) - L(mp) + L(mm)) / (4 * sk * sl);
  }

  Mat2 hessian(const U4& u) const {
    const double a = 0.5 * d2(u, 2, 2), b = 0.5 * d2(u, 2, 3), c = 0.5 * d2(u, 3, 3);
    return {{{a, b}, {b, c}}};
  }

  std::array<double, 2> spray(const U4& u) const {
    const Mat2 hi = inverse2(hessian(u));
    std::array<double, 2> rhs{};
    for (int b = 0; b < 2; ++b) {
      double v = -d1(u, b);
      for (int k = 0; k < 2; ++k) v += d2(u, 2 + b, k) * u[static_cast<std::size_t>(2 + k)];
      rhs[static_cast<std::size_t>(b)] = v;
    }
    return {0.25 * (hi[0][0] * rhs[0] + hi[0][1] * rhs[1]), 0.25 * (hi[1][0] * rhs[0] + hi[1][1] * rhs[1])};
  }
};

}  // namespace

DMetric sasaki_lift(const Lagrangian& L, const GridChart& chart, const SasakiOptions& opt) {
  DMetric m = DMetric::zeros(chart);
  m.nondegeneracy = opt.nondegeneracy;
  const Differ D{L, opt.step};
  if (opt.user_n) {
    for (const auto& f : *opt.user_n)
      if (f.size() != chart.size()) throw InvalidArgument("sasaki_lift: user N has wrong size");
    m.n = *opt.user_n;
  }
  for (std::size_t p = 0; p < chart.size(); ++p) {
    const U4 u = chart.coords(p);
    const Mat2 h = D.hessian(u);
    if (!(std::abs(det2(h)) >= opt.nondegeneracy))
      throw SingularMetric("sasaki_lift: degenerate Hessian (non-regular Lagrangian) at node " + std::to_string(p));
    m.h[0][p] = m.g[0][p] = h[0][0];
    m.h[1][p] = m.g[1][p] = h[0][1];
    m.h[2][p] = m.g[2][p] = h[1][1];
    if (opt.user_n) continue;
    for (int j = 0; j < 2; ++j) {
      const double s = D.step(u, 2 + j);
      U4 a = u, b = u;
      a[static_cast<std::size_t>(2 + j)] += s;
      b[static_cast<std::size_t>(2 + j)] -= s;
      const auto ga = D.spray(a), gb = D.spray(b);
      for (int c = 0; c < 2; ++c)
        m.n[static_cast<std::size_t>(2 * c + j)][p] = (ga[static_cast<std::size_t>(c)] - gb[static_cast<std::size_t>(c)]) / (2 * s);
    }
  }
  const bool definite = [&] {
    for (std::size_t p = 0; p < chart.size(); ++p)
      if (!(m.h[0][p] > 0 && det2({{{m.h[0][p], m.h[1][p]}, {m.h[1][p], m.h[2][p]}}}) > 0)) return false;
    return true;
  }();
  if (!definite) throw SingularMetric("sasaki_lift: Hessian is not positive definite; h-block would be indefinite");
  return m;
}

}  // namespace anholo
