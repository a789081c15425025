#include "anholo/connection.hpp"

#include <algorithm>
#include <cmath>

#include "anholo/errors.hpp"

namespace anholo {

const char* to_string(ConnectionKind k) {
  return k == ConnectionKind::canonical ? "canonical_d" : "levi_civita";
}

FrameCoeffs connection_coeffs(const DMetric& m, ConnectionKind kind, std::size_t p) {
  const MetricJet j = metric_jet(m, p);
  return kind == ConnectionKind::canonical ? canonical_coeffs(j) : levi_civita_coeffs(j);
}

namespace {

DConnection build(const DMetric& m, ConnectionKind kind) {
  DConnection c;
  c.chart = m.chart;
  c.kind = kind;
  c.coeffs.resize(m.chart.size());
  for (std::size_t p = 0; p < m.chart.size(); ++p) c.coeffs[p] = connection_coeffs(m, kind, p);
  return c;
}

}  // namespace

DConnection canonical_dconnection(const DMetric& m) { return build(m, ConnectionKind::canonical); }
DConnection levi_civita(const DMetric& m) { return build(m, ConnectionKind::levi_civita); }

double metric_compat_residual(const DMetric& m, const DConnection& c) {
  require_same_chart(m.chart, c.chart, "metric_compat_residual");
  double worst = 0.0;
  for (std::size_t p = 0; p < m.chart.size(); ++p) {
    const MetricJet j = metric_jet(m, p);
    const FrameCoeffs& G = c.coeffs[p];
    double Gm[4][4] = {};
    for (int r = 0; r < 2; ++r)
      for (int s = 0; s < 2; ++s) {
        Gm[r][s] = j.g[r][s];
        Gm[2 + r][2 + s] = j.h[r][s];
      }
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) {
        const bool hh = a < 2 && b < 2, vv = a >= 2 && b >= 2;
        std::array<double, 4> d{};
        for (int mu = 0; mu < 4; ++mu) {
          const auto um = static_cast<std::size_t>(mu);
          if (hh) d[um] = j.dg[um][a][b];
          else if (vv) d[um] = j.dh[um][a - 2][b - 2];
        }
        const auto e = elongate(d, j.N);
        for (int gam = 0; gam < 4; ++gam) {
          double v = e[static_cast<std::size_t>(gam)];
          for (int s = 0; s < 4; ++s) v -= G[gidx(s, a, gam)] * Gm[s][b] + G[gidx(s, b, gam)] * Gm[a][s];
          worst = std::max(worst, std::abs(v));
        }
      }
  }
  return worst;
}

double torsion_residual(const DMetric& m, const DConnection& c) {
  require_same_chart(m.chart, c.chart, "torsion_residual");
  double worst = 0.0;
  for (std::size_t p = 0; p < m.chart.size(); ++p) {
    const FrameCoeffs W = frame_commutators(metric_jet(m, p));
    const FrameCoeffs& G = c.coeffs[p];
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int g = 0; g < 4; ++g) {
          if (c.kind == ConnectionKind::canonical) {
            const bool pure_h = a < 2 && b < 2 && g < 2;
            const bool pure_v = a >= 2 && b >= 2 && g >= 2;
            if (!pure_h && !pure_v) continue;
          }
          // T(e_g, e_b) = D_g e_b - D_b e_g - [e_g, e_b]
          const double t = G[gidx(a, b, g)] - G[gidx(a, g, b)] - W[gidx(a, g, b)];
          worst = std::max(worst, std::abs(t));
        }
  }
  return worst;
}

namespace {

FrameCoeffs to_coordinate(const FrameCoeffs& z, const Mat2& N) {
  // e_a = E_a^mu d_mu, e^a = theta^a_mu du^mu.
  double E[4][4] = {}, th[4][4] = {};
  for (int i = 0; i < 4; ++i) {
    E[i][i] = 1.0;
    th[i][i] = 1.0;
  }
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < 2; ++i) {
      E[i][2 + a] = -N[a][i];
      th[2 + a][i] = N[a][i];
    }
  FrameCoeffs out{};
  for (int mu = 0; mu < 4; ++mu)
    for (int nu = 0; nu < 4; ++nu)
      for (int rho = 0; rho < 4; ++rho) {
        double v = 0.0;
        for (int a = 0; a < 4; ++a) {
          if (E[a][mu] == 0.0) continue;
          for (int b = 0; b < 4; ++b) {
            if (th[b][nu] == 0.0) continue;
            for (int c = 0; c < 4; ++c) {
              if (th[c][rho] == 0.0) continue;
              v += E[a][mu] * z[gidx(a, b, c)] * th[b][nu] * th[c][rho];
            }
          }
        }
        out[gidx(mu, nu, rho)] = v;
      }
  return out;
}

FrameCoeffs distortion_at(const DMetric& m, std::size_t p, FrameKind frame) {
  const MetricJet j = metric_jet(m, p);
  const FrameCoeffs a = canonical_coeffs(j);
  const FrameCoeffs b = levi_civita_coeffs(j);
  FrameCoeffs z{};
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = a[k] - b[k];
  return frame == FrameKind::coordinate ? to_coordinate(z, j.N) : z;
}

}  // namespace

std::vector<FrameCoeffs> distortion(const DMetric& m, FrameKind frame) {
  std::vector<FrameCoeffs> out(m.chart.size());
  for (std::size_t p = 0; p < m.chart.size(); ++p) out[p] = distortion_at(m, p, frame);
  return out;
}

double distortion_norm(const DMetric& m) {
  double worst = 0.0;
  for (std::size_t p = 0; p < m.chart.size(); ++p) {
    const FrameCoeffs z = distortion_at(m, p, FrameKind::coordinate);
    for (double v : z) worst = std::max(worst, std::abs(v));
  }
  return worst;
}

Field n_elongated_derivative(const Field& f, int dir, const GridChart& chart, const std::array<Field, 4>& n) {
  if (dir < 0 || dir > 3) throw std::out_of_range("direction index out of range");
  if (f.size() != chart.size()) throw InvalidArgument("field size does not match chart");
  Field out = chart.derivative(f, dir);
  if (dir >= 2) return out;
  for (std::size_t p = 0; p < chart.size(); ++p)
    out[p] -= n[static_cast<std::size_t>(dir)][p] * chart.derivative(f, 2, p) +
              n[static_cast<std::size_t>(2 + dir)][p] * chart.derivative(f, 3, p);
  return out;
}

std::array<double, 4> lc_constraint_residual(const DMetric& m, const Field& h4,
                                             const std::array<Field, 2>& w,
                                             const std::array<Field, 2>& n) {
  const GridChart& c = m.chart;
  const std::size_t N = c.size();
  if (h4.size() != N || w[0].size() != N || w[1].size() != N || n[0].size() != N || n[1].size() != N)
    throw InvalidArgument("lc_constraint_residual: field size mismatch");
  Field lnh4(N);
  for (std::size_t p = 0; p < N; ++p) {
    if (h4[p] == 0.0) throw NumericalError("lc_constraint_residual: h4 vanishes");
    lnh4[p] = std::log(std::abs(h4[p]));
  }
  std::array<double, 4> r{};
  std::array<Field, 2> eln, ew0, ew1;
  for (int i = 0; i < 2; ++i) eln[static_cast<std::size_t>(i)] = n_elongated_derivative(lnh4, i, c, m.n);
  for (int k = 0; k < 2; ++k) {
    ew0[static_cast<std::size_t>(k)] = n_elongated_derivative(w[0], k, c, m.n);
    ew1[static_cast<std::size_t>(k)] = n_elongated_derivative(w[1], k, c, m.n);
  }
  for (std::size_t p = 0; p < N; ++p) {
    for (int i = 0; i < 2; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      r[0] = std::max(r[0], std::abs(c.derivative(w[ui], 2, p) - eln[ui][p]));
      r[2] = std::max(r[2], std::abs(c.derivative(n[ui], 2, p)));
    }
    r[1] = std::max(r[1], std::abs(ew0[1][p] - ew1[0][p]));
    r[3] = std::max(r[3], std::abs(c.derivative(n[1], 0, p) - c.derivative(n[0], 1, p)));
  }
  return r;
}

}  // namespace anholo
