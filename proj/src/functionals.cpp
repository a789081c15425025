#include "anholo/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "anholo/errors.hpp"

namespace anholo::functionals {

namespace {

constexpr double kN = kHalfDim;

std::array<double, 3> inverse_packed(double a, double b, double c) {
  const double d = a * c - b * b;
  return {c / d, -b / d, a / d};
}

void check_field(const GridChart& chart, const Field& f, const char* what) {
  if (f.size() != chart.size()) throw InvalidArgument(std::string(what) + ": field size does not match chart");
  for (double v : f)
    if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite field value");
}

}  // namespace

double sym_norm2(const std::array<Field, 3>& T, const std::array<Field, 3>& G, std::size_t p) {
  // tr((G T)^2) for 2x2 symmetric G, T.
  const double g00 = G[0][p], g01 = G[1][p], g11 = G[2][p];
  const double t00 = T[0][p], t01 = T[1][p], t11 = T[2][p];
  const double a00 = g00 * t00 + g01 * t01, a01 = g00 * t01 + g01 * t11;
  const double a10 = g01 * t00 + g11 * t01, a11 = g01 * t01 + g11 * t11;
  return a00 * a00 + 2.0 * a01 * a10 + a11 * a11;
}

Ingredients ingredients(const DMetric& m, const Field& f, ConnectionKind kind) {
  m.validate();
  const GridChart& c = m.chart;
  check_field(c, f, "functionals");
  const std::size_t N = c.size();
  Ingredients in;
  in.chart = c;
  in.kind = kind;
  in.f = f;
  in.g = m.g;
  in.h = m.h;

  const CurvatureBundle cb = curvature(m, kind);
  in.R = cb.scalar_h;
  in.S = cb.scalar_v;
  in.ric_h = cb.ricci_h;
  in.ric_v = cb.ricci_v;

  std::array<Field, 4> e;
  for (int d = 0; d < 4; ++d) e[static_cast<std::size_t>(d)] = n_elongated_derivative(f, d, c, m.n);
  // ee[c][b] = e_c(e_b f) on the pure h and pure v pairs.
  std::array<std::array<Field, 4>, 4> ee;
  for (int blk = 0; blk < 2; ++blk)
    for (int b = 2 * blk; b < 2 * blk + 2; ++b)
      for (int cc = 2 * blk; cc < 2 * blk + 2; ++cc)
        ee[static_cast<std::size_t>(cc)][static_cast<std::size_t>(b)] =
            n_elongated_derivative(e[static_cast<std::size_t>(b)], cc, c, m.n);

  for (auto* blk : {&in.hess_h, &in.hess_v, &in.g_inv, &in.h_inv})
    for (auto& fld : *blk) fld.assign(N, 0.0);
  in.dv.resize(N);
  in.grad_h.resize(N);
  in.grad_v.resize(N);
  in.lap_h.resize(N);
  in.lap_v.resize(N);

  CurvatureEngine eng(m, kind);
  for (std::size_t p = 0; p < N; ++p) {
    const auto gi = inverse_packed(m.g[0][p], m.g[1][p], m.g[2][p]);
    const auto hi = inverse_packed(m.h[0][p], m.h[1][p], m.h[2][p]);
    const double dg = m.g[0][p] * m.g[2][p] - m.g[1][p] * m.g[1][p];
    const double dh = m.h[0][p] * m.h[2][p] - m.h[1][p] * m.h[1][p];
    in.dv[p] = c.quadrature_weight(p) * std::sqrt(std::abs(dg)) * std::sqrt(std::abs(dh));
    for (std::size_t k = 0; k < 3; ++k) {
      in.g_inv[k][p] = gi[k];
      in.h_inv[k][p] = hi[k];
    }
    const FrameCoeffs& G = eng.coeffs(p);
    for (int blk = 0; blk < 2; ++blk) {
      const int o = 2 * blk;
      const auto& inv = blk == 0 ? gi : hi;
      auto& hess = blk == 0 ? in.hess_h : in.hess_v;
      double H[2][2];
      for (int b = 0; b < 2; ++b)
        for (int cc = 0; cc < 2; ++cc) {
          double v = ee[static_cast<std::size_t>(o + cc)][static_cast<std::size_t>(o + b)][p];
          for (int a = 0; a < 4; ++a) v -= G[gidx(a, o + b, o + cc)] * e[static_cast<std::size_t>(a)][p];
          H[b][cc] = v;
        }
      hess[0][p] = H[0][0];
      hess[1][p] = 0.5 * (H[0][1] + H[1][0]);
      hess[2][p] = H[1][1];
      const double d0 = e[static_cast<std::size_t>(o)][p], d1 = e[static_cast<std::size_t>(o + 1)][p];
      const double grad = inv[0] * d0 * d0 + 2.0 * inv[1] * d0 * d1 + inv[2] * d1 * d1;
      const double lap = inv[0] * hess[0][p] + 2.0 * inv[1] * hess[1][p] + inv[2] * hess[2][p];
      (blk == 0 ? in.grad_h : in.grad_v)[p] = grad;
      (blk == 0 ? in.lap_h : in.lap_v)[p] = lap;
    }
  }
  return in;
}

double F_functional(const Ingredients& in) {
  double s = 0.0;
  for (std::size_t p = 0; p < in.dv.size(); ++p)
    s += (in.R[p] + in.S[p] + in.grad_h[p] + in.grad_v[p]) * std::exp(-in.f[p]) * in.dv[p];
  return s;
}

double F_functional(const DMetric& m, const Field& f) { return F_functional(ingredients(m, f)); }

namespace {

double mu_factor(double tau) { return std::pow(4.0 * std::numbers::pi * tau, -kN); }

void check_tau(double tau) {
  if (!(std::isfinite(tau) && tau > 0.0)) throw InvalidArgument("functionals: tau must be positive");
}

double check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": non-finite integral");
  return v;
}

}  // namespace

double W_functional(const Ingredients& in, double tau) {
  check_tau(tau);
  const double c = mu_factor(tau);
  double s = 0.0;
  for (std::size_t p = 0; p < in.dv.size(); ++p) {
    const double q = in.R[p] + in.S[p] + in.grad_h[p] + in.grad_v[p];
    s += (tau * q + in.f[p] - 2.0 * kN) * c * std::exp(-in.f[p]) * in.dv[p];
  }
  return check_finite(s, "W");
}

double W_functional(const DMetric& m, const Field& f, double tau) { return W_functional(ingredients(m, f), tau); }

namespace {

Field volume_weights(const DMetric& m) {
  m.validate();
  Field w(m.chart.size());
  for (std::size_t p = 0; p < w.size(); ++p) {
    const double dg = m.g[0][p] * m.g[2][p] - m.g[1][p] * m.g[1][p];
    const double dh = m.h[0][p] * m.h[2][p] - m.h[1][p] * m.h[1][p];
    w[p] = m.chart.quadrature_weight(p) * std::sqrt(std::abs(dg)) * std::sqrt(std::abs(dh));
  }
  return w;
}

// log int e^{-f} dV with the minimum of f factored out.
double log_weighted_volume(const DMetric& m, const Field& f) {
  check_field(m.chart, f, "functionals");
  const Field w = volume_weights(m);
  const double fmin = *std::min_element(f.begin(), f.end());
  double s = 0.0;
  for (std::size_t p = 0; p < f.size(); ++p) s += std::exp(-(f[p] - fmin)) * w[p];
  if (!(s > 0.0) || !std::isfinite(s)) throw NumericalError("functionals: non-finite or empty weighted volume");
  return std::log(s) - fmin;
}

}  // namespace

double log_mu_mass(const DMetric& m, const Field& f, double tau) {
  check_tau(tau);
  return log_weighted_volume(m, f) + std::log(mu_factor(tau));
}

Field normalize_f(const Field& f, double tau, const DMetric& m) {
  const double shift = log_mu_mass(m, f, tau);
  Field out = f;
  for (double& v : out) v += shift;
  return out;
}

double weighted_volume(const DMetric& m, const Field& f) { return std::exp(log_weighted_volume(m, f)); }

double F_rate_integrand(const Ingredients& in) {
  std::array<Field, 3> th, tv;
  for (std::size_t k = 0; k < 3; ++k) {
    th[k].resize(in.dv.size());
    tv[k].resize(in.dv.size());
  }
  double s = 0.0;
  for (std::size_t p = 0; p < in.dv.size(); ++p) {
    for (std::size_t k = 0; k < 3; ++k) {
      th[k][p] = in.ric_h[k][p] + in.hess_h[k][p];
      tv[k][p] = in.ric_v[k][p] + in.hess_v[k][p];
    }
    s += (sym_norm2(th, in.g_inv, p) + sym_norm2(tv, in.h_inv, p)) * std::exp(-in.f[p]) * in.dv[p];
  }
  return 2.0 * s;
}

namespace {

// int [|R_ij + D_i D_j f - g_ij/(2 tau)|^2 + (v-block)] mu dV.
double shifted_square_integral(const Ingredients& in, double tau) {
  check_tau(tau);
  const double c = mu_factor(tau);
  std::array<Field, 3> th, tv;
  for (std::size_t k = 0; k < 3; ++k) {
    th[k].resize(in.dv.size());
    tv[k].resize(in.dv.size());
  }
  double s = 0.0;
  for (std::size_t p = 0; p < in.dv.size(); ++p) {
    for (std::size_t k = 0; k < 3; ++k) {
      th[k][p] = in.ric_h[k][p] + in.hess_h[k][p] - in.g[k][p] / (2.0 * tau);
      tv[k][p] = in.ric_v[k][p] + in.hess_v[k][p] - in.h[k][p] / (2.0 * tau);
    }
    s += (sym_norm2(th, in.g_inv, p) + sym_norm2(tv, in.h_inv, p)) * c * std::exp(-in.f[p]) * in.dv[p];
  }
  return check_finite(s, "shifted square integral");
}

}  // namespace

double W_rate_integrand(const Ingredients& in, double tau) { return 2.0 * tau * shifted_square_integral(in, tau); }

VariationSplit first_variation_split(const Ingredients& in, const Variation& var) {
  const std::size_t N = in.dv.size();
  for (const auto* blk : {&var.v_h, &var.v_v})
    for (const auto& fld : *blk) check_field(in.chart, fld, "first_variation");
  check_field(in.chart, var.f_h, "first_variation");
  check_field(in.chart, var.f_v, "first_variation");
  VariationSplit out;
  for (std::size_t p = 0; p < N; ++p) {
    const double wt = std::exp(-in.f[p]) * in.dv[p];
    const double RS = in.R[p] + in.S[p];
    const double lap = in.lap_h[p] + in.lap_v[p], grad = in.grad_h[p] + in.grad_v[p];
    const double f_coeff = 2.0 * lap - grad + RS;
    // -v^ij T_ij with T = Ric + Hess, indices raised by the block inverse.
    auto contract = [p](const std::array<Field, 3>& v, const std::array<Field, 3>& inv, const std::array<Field, 3>& a,
                        const std::array<Field, 3>& b) {
      const double g00 = inv[0][p], g01 = inv[1][p], g11 = inv[2][p];
      const double V00 = g00 * g00 * v[0][p] + 2 * g00 * g01 * v[1][p] + g01 * g01 * v[2][p];
      const double V01 = g00 * g01 * v[0][p] + (g00 * g11 + g01 * g01) * v[1][p] + g01 * g11 * v[2][p];
      const double V11 = g01 * g01 * v[0][p] + 2 * g01 * g11 * v[1][p] + g11 * g11 * v[2][p];
      return V00 * (a[0][p] + b[0][p]) + 2 * V01 * (a[1][p] + b[1][p]) + V11 * (a[2][p] + b[2][p]);
    };
    auto trace = [p](const std::array<Field, 3>& v, const std::array<Field, 3>& inv) {
      return inv[0][p] * v[0][p] + 2 * inv[1][p] * v[1][p] + inv[2][p] * v[2][p];
    };
    const double hv = trace(var.v_h, in.g_inv), vv = trace(var.v_v, in.h_inv);
    const double h_part = -contract(var.v_h, in.g_inv, in.ric_h, in.hess_h) +
                          0.5 * hv * (2.0 * in.lap_h[p] - in.grad_h[p] + RS + in.grad_v[p]) - var.f_h[p] * f_coeff;
    const double v_part = -contract(var.v_v, in.h_inv, in.ric_v, in.hess_v) +
                          0.5 * vv * (2.0 * in.lap_v[p] - in.grad_v[p] + RS + in.grad_h[p]) - var.f_v[p] * f_coeff;
    out.h += h_part * wt;
    out.v += v_part * wt;
  }
  return out;
}

double first_variation(const DMetric& m, const Field& f, const Variation& var) {
  return first_variation_split(ingredients(m, f), var).total();
}

FunctionalReport thermodynamics(const Ingredients& in, double tau) {
  check_tau(tau);
  const double c = mu_factor(tau);
  FunctionalReport r;
  r.connection = in.kind;
  r.F = F_functional(in);
  r.W = W_functional(in, tau);
  double e = 0.0, z = 0.0, s = 0.0;
  for (std::size_t p = 0; p < in.dv.size(); ++p) {
    const double mu = c * std::exp(-in.f[p]) * in.dv[p];
    const double q = in.R[p] + in.S[p] + in.grad_h[p] + in.grad_v[p];
    e += (q - kN / tau) * mu;
    s -= (tau * q + in.f[p] - 2.0 * kN) * mu;
    z += (kN - in.f[p]) * mu;
  }
  r.E = check_finite(-tau * tau * e, "energy");
  r.S_entropy = check_finite(s, "entropy");
  r.sigma = 2.0 * std::pow(tau, 4) * shifted_square_integral(in, tau);
  r.Z_log = check_finite(z, "partition function");
  return r;
}

FunctionalReport thermodynamics(const DMetric& m, const Field& f, double tau, ConnectionKind kind) {
  check_tau(tau);
  return thermodynamics(ingredients(m, f, kind), tau);
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::more: return "more";
    case Verdict::less: return "less";
    default: return "equivalent";
  }
}

ConnectionComparison compare_connections(const DMetric& m, const Field& f, double tau, double tol_S) {
  ConnectionComparison c;
  c.S_canonical = -W_functional(ingredients(m, f, ConnectionKind::canonical), tau);
  c.S_levi_civita = -W_functional(ingredients(m, f, ConnectionKind::levi_civita), tau);
  const double d = c.S_canonical - c.S_levi_civita;
  c.verdict = std::abs(d) <= tol_S ? Verdict::equivalent : (d < 0 ? Verdict::more : Verdict::less);
  return c;
}

}  // namespace anholo::functionals
