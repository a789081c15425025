#include "anholo/curvature.hpp"

#include <algorithm>
#include <cmath>

namespace anholo {

CurvatureEngine::CurvatureEngine(const DMetric& m, ConnectionKind kind) : m_(m), kind_(kind) {
  cache_.resize(m.chart.fd_order() == 4 ? 8 : 6);
}

const std::vector<FrameCoeffs>& CurvatureEngine::slab(std::size_t s) {
  ++clock_;
  for (auto& e : cache_)
    if (e.index == static_cast<long>(s)) {
      e.stamp = clock_;
      return e.data;
    }
  auto victim = std::min_element(cache_.begin(), cache_.end(),
                                 [](const Slab& a, const Slab& b) { return a.stamp < b.stamp; });
  const std::size_t st = m_.chart.stride(0);
  victim->index = static_cast<long>(s);
  victim->stamp = clock_;
  victim->data.resize(st);
  for (std::size_t q = 0; q < st; ++q) victim->data[q] = connection_coeffs(m_, kind_, s * st + q);
  return victim->data;
}

const FrameCoeffs& CurvatureEngine::coeffs(std::size_t p) {
  const std::size_t st = m_.chart.stride(0);
  return slab(p / st)[p % st];
}

Ricci4 CurvatureEngine::ricci(std::size_t p) {
  const GridChart& c = m_.chart;
  const std::size_t st0 = c.stride(0);
  const std::size_t s = p / st0;
  const std::size_t q = p % st0;

  // Partial derivatives of every coefficient along each axis.
  std::array<FrameCoeffs, 4> d{};
  {
    const StencilRow& r = c.stencil(0, s);
    for (int k = 0; k < r.n; ++k) {
      const FrameCoeffs& G = slab(r.idx[static_cast<std::size_t>(k)])[q];
      const double w = r.w[static_cast<std::size_t>(k)];
      for (std::size_t e = 0; e < 64; ++e) d[0][e] += w * G[e];
    }
  }
  const std::vector<FrameCoeffs>& cur = slab(s);
  for (int mu = 1; mu < 4; ++mu) {
    const std::size_t st = c.stride(mu);
    const long i = static_cast<long>(c.index_along(p, mu));
    const StencilRow& r = c.stencil(mu, static_cast<std::size_t>(i));
    for (int k = 0; k < r.n; ++k) {
      const long off = (static_cast<long>(r.idx[static_cast<std::size_t>(k)]) - i) * static_cast<long>(st);
      const FrameCoeffs& G = cur[static_cast<std::size_t>(static_cast<long>(q) + off)];
      const double w = r.w[static_cast<std::size_t>(k)];
      for (std::size_t e = 0; e < 64; ++e) d[static_cast<std::size_t>(mu)][e] += w * G[e];
    }
  }
  const FrameCoeffs& G = cur[q];
  const MetricJet j = metric_jet(m_, p);
  const FrameCoeffs W = frame_commutators(j);

  // Elongate: e_i = d_i - N^a_i d_a.
  std::array<FrameCoeffs, 4> e = d;
  for (int i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 64; ++k)
      e[static_cast<std::size_t>(i)][k] -= j.N[0][i] * d[2][k] + j.N[1][i] * d[3][k];

  Ricci4 R{};
  for (int b = 0; b < 4; ++b)
    for (int dd = 0; dd < 4; ++dd) {
      double v = 0.0;
      for (int a = 0; a < 4; ++a) {
        v += e[static_cast<std::size_t>(a)][gidx(a, b, dd)] - e[static_cast<std::size_t>(dd)][gidx(a, b, a)];
        for (int sg = 0; sg < 4; ++sg)
          v += G[gidx(sg, b, dd)] * G[gidx(a, sg, a)] - G[gidx(sg, b, a)] * G[gidx(a, sg, dd)];
        for (int mu = 0; mu < 4; ++mu) v -= W[gidx(mu, a, dd)] * G[gidx(a, b, mu)];
      }
      R[static_cast<std::size_t>(b * 4 + dd)] = v;
    }
  return R;
}

CurvatureBundle curvature(const DMetric& m, ConnectionKind kind) {
  const std::size_t n = m.chart.size();
  CurvatureBundle out;
  out.chart = m.chart;
  out.kind = kind;
  for (auto& f : out.ricci_h) f.assign(n, 0.0);
  for (auto& f : out.ricci_v) f.assign(n, 0.0);
  for (auto& f : out.ricci_hv) f.assign(n, 0.0);
  for (auto& f : out.ricci_vh) f.assign(n, 0.0);
  out.scalar_h.assign(n, 0.0);
  out.scalar_v.assign(n, 0.0);
  CurvatureEngine eng(m, kind);
  for (std::size_t p = 0; p < n; ++p) {
    const Ricci4 R = eng.ricci(p);
    const double r12 = 0.5 * (R[1] + R[4]);
    const double s34 = 0.5 * (R[11] + R[14]);
    out.ricci_h[0][p] = R[0];
    out.ricci_h[1][p] = r12;
    out.ricci_h[2][p] = R[5];
    out.ricci_v[0][p] = R[10];
    out.ricci_v[1][p] = s34;
    out.ricci_v[2][p] = R[15];
    out.antisym_h = std::max(out.antisym_h, std::abs(R[1] - R[4]));
    out.antisym_v = std::max(out.antisym_v, std::abs(R[11] - R[14]));
    for (int i = 0; i < 2; ++i)
      for (int a = 0; a < 2; ++a) {
        out.ricci_hv[static_cast<std::size_t>(2 * i + a)][p] = R[static_cast<std::size_t>(i * 4 + 2 + a)];
        out.ricci_vh[static_cast<std::size_t>(2 * a + i)][p] = R[static_cast<std::size_t>((2 + a) * 4 + i)];
      }
    const double g11 = m.g[0][p], g12 = m.g[1][p], g22 = m.g[2][p];
    const double h33 = m.h[0][p], h34 = m.h[1][p], h44 = m.h[2][p];
    const double dg = g11 * g22 - g12 * g12, dh = h33 * h44 - h34 * h34;
    out.scalar_h[p] = (g22 * R[0] - 2.0 * g12 * r12 + g11 * R[5]) / dg;
    out.scalar_v[p] = (h44 * R[10] - 2.0 * h34 * s34 + h33 * R[15]) / dh;
  }
  return out;
}

EinsteinResidual einstein_residual(const DMetric& m, const std::array<double, 4>& source, ConnectionKind kind) {
  const std::size_t n = m.chart.size();
  EinsteinResidual out;
  out.pointwise.assign(n, 0.0);
  CurvatureEngine eng(m, kind);
  for (std::size_t p = 0; p < n; ++p) {
    const Ricci4 R = eng.ricci(p);
    const Mat2 gi = inverse2({{{m.g[0][p], m.g[1][p]}, {m.g[1][p], m.g[2][p]}}});
    const Mat2 hi = inverse2({{{m.h[0][p], m.h[1][p]}, {m.h[1][p], m.h[2][p]}}});
    double Gi[4][4] = {};
    for (int r = 0; r < 2; ++r)
      for (int s = 0; s < 2; ++s) {
        Gi[r][s] = gi[r][s];
        Gi[2 + r][2 + s] = hi[r][s];
      }
    double mixed[4][4];
    double sR = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        double v = 0.0;
        for (int s = 0; s < 4; ++s) v += Gi[a][s] * R[static_cast<std::size_t>(s * 4 + b)];
        mixed[a][b] = v;
      }
    for (int a = 0; a < 4; ++a) sR += mixed[a][a];
    double worst = 0.0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) {
        double v = mixed[a][b];
        if (a == b) v -= 0.5 * sR + source[static_cast<std::size_t>(a)];
        worst = std::max(worst, std::abs(v));
      }
    out.pointwise[p] = worst;
    out.max_norm = std::max(out.max_norm, worst);
  }
  return out;
}

}  // namespace anholo
