#include "anholo/dmetric.hpp"

#include <cmath>
#include <string>

#include "anholo/errors.hpp"

namespace anholo {

double det2(const Mat2& m) { return m[0][0] * m[1][1] - m[0][1] * m[1][0]; }

Mat2 inverse2(const Mat2& m) {
  const double d = det2(m);
  return {{{m[1][1] / d, -m[0][1] / d}, {-m[1][0] / d, m[0][0] / d}}};
}

DMetric DMetric::zeros(const GridChart& chart) {
  DMetric m;
  m.chart = chart;
  for (auto& f : m.g) f.assign(chart.size(), 0.0);
  for (auto& f : m.h) f.assign(chart.size(), 0.0);
  for (auto& f : m.n) f.assign(chart.size(), 0.0);
  return m;
}

DMetric DMetric::with_values(const std::array<Field, 3>& g_new, const std::array<Field, 3>& h_new) const {
  DMetric m = *this;
  m.g = g_new;
  m.h = h_new;
  return m;
}

DMetric sample_metric(const GridChart& chart,
                      const std::function<MetricSample(const std::array<double, 4>&)>& fn, Signature sig) {
  DMetric m = DMetric::zeros(chart);
  m.signature = sig;
  for (std::size_t p = 0; p < chart.size(); ++p) {
    const MetricSample s = fn(chart.coords(p));
    for (std::size_t k = 0; k < 3; ++k) {
      m.g[k][p] = s.g[k];
      m.h[k][p] = s.h[k];
    }
    for (std::size_t k = 0; k < 4; ++k) m.n[k][p] = s.n[k];
  }
  m.validate();
  return m;
}

void DMetric::validate() const {
  const std::size_t n_pts = chart.size();
  auto check = [&](const Field& f, const char* name) {
    if (f.size() != n_pts) throw InvalidArgument(std::string("field size mismatch: ") + name);
    for (double v : f)
      if (!std::isfinite(v)) throw InvalidArgument(std::string("non-finite value in ") + name);
  };
  for (const auto& f : g) check(f, "g");
  for (const auto& f : h) check(f, "h");
  for (const auto& f : n) check(f, "N");
  for (std::size_t p = 0; p < n_pts; ++p) {
    const double dg = g[0][p] * g[2][p] - g[1][p] * g[1][p];
    if (!(g[0][p] > 0.0) || !(dg > nondegeneracy))
      throw SingularMetric("h-block not positive definite at node " + std::to_string(p));
    const double dh = h[0][p] * h[2][p] - h[1][p] * h[1][p];
    if (signature == Signature::riemannian) {
      if (!(h[0][p] > 0.0) || !(dh > nondegeneracy))
        throw SingularMetric("v-block not positive definite at node " + std::to_string(p));
    } else if (!(std::abs(dh) > nondegeneracy)) {
      throw SingularMetric("v-block degenerate at node " + std::to_string(p));
    }
  }
}

MetricJet metric_jet(const DMetric& m, std::size_t p) {
  MetricJet j;
  const GridChart& c = m.chart;
  auto sym = [&](const std::array<Field, 3>& f, Mat2& v, std::array<Mat2, 4>& d) {
    v = {{{f[0][p], f[1][p]}, {f[1][p], f[2][p]}}};
    for (int mu = 0; mu < 4; ++mu) {
      const double a = c.derivative(f[0], mu, p);
      const double b = c.derivative(f[1], mu, p);
      const double e = c.derivative(f[2], mu, p);
      d[static_cast<std::size_t>(mu)] = {{{a, b}, {b, e}}};
    }
  };
  sym(m.g, j.g, j.dg);
  sym(m.h, j.h, j.dh);
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < 2; ++i) {
      const Field& f = m.n[static_cast<std::size_t>(2 * a + i)];
      j.N[a][i] = f[p];
      for (int mu = 0; mu < 4; ++mu) j.dN[static_cast<std::size_t>(mu)][a][i] = c.derivative(f, mu, p);
    }
  const double dg = det2(j.g), dh = det2(j.h);
  if (std::abs(dg) <= m.nondegeneracy || std::abs(dh) <= m.nondegeneracy)
    throw SingularMetric("degenerate metric block at node " + std::to_string(p));
  j.gi = inverse2(j.g);
  j.hi = inverse2(j.h);
  return j;
}

std::array<double, 4> elongate(const std::array<double, 4>& d, const Mat2& N) {
  return {d[0] - N[0][0] * d[2] - N[1][0] * d[3], d[1] - N[0][1] * d[2] - N[1][1] * d[3], d[2], d[3]};
}

namespace {

// Frame derivatives of the three metric families, e_mu X for mu = 0..3.
struct FrameDerivs {
  std::array<Mat2, 4> eg{}, eh{}, eN{};
};

FrameDerivs frame_derivs(const MetricJet& j) {
  FrameDerivs f;
  auto apply = [&](const std::array<Mat2, 4>& d, std::array<Mat2, 4>& out) {
    for (int r = 0; r < 2; ++r)
      for (int s = 0; s < 2; ++s) {
        const auto e = elongate({d[0][r][s], d[1][r][s], d[2][r][s], d[3][r][s]}, j.N);
        for (int mu = 0; mu < 4; ++mu) out[static_cast<std::size_t>(mu)][r][s] = e[static_cast<std::size_t>(mu)];
      }
  };
  apply(j.dg, f.eg);
  apply(j.dh, f.eh);
  apply(j.dN, f.eN);
  return f;
}

}  // namespace

FrameCoeffs frame_commutators(const MetricJet& j) {
  FrameCoeffs w{};
  const FrameDerivs f = frame_derivs(j);
  for (int a = 0; a < 2; ++a) {
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k)
        w[gidx(2 + a, i, k)] = f.eN[static_cast<std::size_t>(k)][a][i] - f.eN[static_cast<std::size_t>(i)][a][k];
    for (int i = 0; i < 2; ++i)
      for (int b = 0; b < 2; ++b) {
        const double d = j.dN[static_cast<std::size_t>(2 + b)][a][i];
        w[gidx(2 + a, i, 2 + b)] = d;
        w[gidx(2 + a, 2 + b, i)] = -d;
      }
  }
  return w;
}

FrameCoeffs canonical_coeffs(const MetricJet& j) {
  FrameCoeffs G{};
  const FrameDerivs f = frame_derivs(j);
  const auto& eg = f.eg;
  // dN[c][d][k] = d_{y_c} N^d_k
  auto dN = [&](int c, int d, int k) { return j.dN[static_cast<std::size_t>(2 + c)][d][k]; };
  for (int i = 0; i < 2; ++i)
    for (int jj = 0; jj < 2; ++jj)
      for (int k = 0; k < 2; ++k) {
        double s = 0.0;
        for (int r = 0; r < 2; ++r)
          s += j.gi[i][r] * (eg[static_cast<std::size_t>(k)][jj][r] + eg[static_cast<std::size_t>(jj)][k][r] -
                             eg[static_cast<std::size_t>(r)][jj][k]);
        G[gidx(i, jj, k)] = 0.5 * s;
      }
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int k = 0; k < 2; ++k) {
        double s = 0.0;
        for (int c = 0; c < 2; ++c) {
          double t = f.eh[static_cast<std::size_t>(k)][b][c];
          for (int d = 0; d < 2; ++d) t -= j.h[d][c] * dN(b, d, k) + j.h[d][b] * dN(c, d, k);
          s += j.hi[a][c] * t;
        }
        G[gidx(2 + a, 2 + b, k)] = dN(b, a, k) + 0.5 * s;
      }
  for (int i = 0; i < 2; ++i)
    for (int jj = 0; jj < 2; ++jj)
      for (int c = 0; c < 2; ++c) {
        double s = 0.0;
        for (int k = 0; k < 2; ++k) s += j.gi[i][k] * j.dg[static_cast<std::size_t>(2 + c)][jj][k];
        G[gidx(i, jj, 2 + c)] = 0.5 * s;
      }
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        double s = 0.0;
        for (int d = 0; d < 2; ++d)
          s += j.hi[a][d] * (j.dh[static_cast<std::size_t>(2 + c)][b][d] + j.dh[static_cast<std::size_t>(2 + b)][c][d] -
                             j.dh[static_cast<std::size_t>(2 + d)][b][c]);
        G[gidx(2 + a, 2 + b, 2 + c)] = 0.5 * s;
      }
  return G;
}

FrameCoeffs levi_civita_coeffs(const MetricJet& j) {
  const FrameDerivs f = frame_derivs(j);
  const FrameCoeffs W = frame_commutators(j);
  // Block-diagonal frame metric and its frame derivatives.
  double Gm[4][4] = {}, Gi[4][4] = {}, eG[4][4][4] = {};
  for (int r = 0; r < 2; ++r)
    for (int s = 0; s < 2; ++s) {
      Gm[r][s] = j.g[r][s];
      Gm[2 + r][2 + s] = j.h[r][s];
      Gi[r][s] = j.gi[r][s];
      Gi[2 + r][2 + s] = j.hi[r][s];
      for (int mu = 0; mu < 4; ++mu) {
        eG[mu][r][s] = f.eg[static_cast<std::size_t>(mu)][r][s];
        eG[mu][2 + r][2 + s] = f.eh[static_cast<std::size_t>(mu)][r][s];
      }
    }
  // Lowered commutators W_{s m n} = G_{s r} W^r_{m n}.
  double Wl[4][4][4] = {};
  for (int s = 0; s < 4; ++s)
    for (int m = 0; m < 4; ++m)
      for (int n = 0; n < 4; ++n) {
        double v = 0.0;
        for (int r = 0; r < 4; ++r) v += Gm[s][r] * W[gidx(r, m, n)];
        Wl[s][m][n] = v;
      }
  double low[4][4][4];
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c)
        low[a][b][c] = 0.5 * (eG[c][b][a] + eG[b][c][a] - eG[a][c][b] + Wl[a][c][b] - Wl[b][c][a] -
                              Wl[c][b][a]);
  FrameCoeffs G{};
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < 4; ++c) {
        double v = 0.0;
        for (int s = 0; s < 4; ++s) v += Gi[a][s] * low[s][b][c];
        G[gidx(a, b, c)] = v;
      }
  return G;
}

}  // namespace anholo
