#include "anholo/ricci_flow.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>

#include "anholo/connection.hpp"
#include "anholo/curvature.hpp"
#include "anholo/errors.hpp"
#include "anholo/functionals.hpp"

namespace anholo::flow {

using ansatz::AnsatzMetric;
using ansatz::GeneratingData;

// ---- ansatz flow --------------------------------------------------------

PhiFamily phi_family(const GeneratingData& gd) {
  gd.validate();
  return [chi = gd.chi, phi = gd.phi](double x) -> Field {
    if (chi.size() == 1 || x <= chi.front()) return phi.front();
    if (x >= chi.back()) return phi.back();
    const auto it = std::upper_bound(chi.begin(), chi.end(), x);
    const std::size_t k = static_cast<std::size_t>(it - chi.begin()) - 1;
    const double s = (x - chi[k]) / (chi[k + 1] - chi[k]);
    Field out(phi[k].size());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = (1.0 - s) * phi[k][p] + s * phi[k + 1][p];
    return out;
  };
}

AnsatzMetric flow_step_ansatz(const AnsatzMetric& am, const GeneratingData& gd, double chi, double dchi) {
  if (!(dchi > 0.0 && std::isfinite(dchi))) throw InvalidArgument("flow_step_ansatz: dchi must be positive");
  require_same_chart(am.chart, gd.chart, "flow_step_ansatz");
  const GridChart& c = am.chart;
  const std::size_t N = c.size();
  const PhiFamily fam = phi_family(gd);
  std::array<Field, 3> ps;
  const double stage_chi[3] = {chi, chi + 0.5 * dchi, chi + dchi};
  for (std::size_t s = 0; s < 3; ++s) {
    ps[s] = ansatz::phi_star(c, fam(stage_chi[s]));
    for (double v : ps[s])
      if (!(std::abs(v) >= gd.eps_phi)) throw InvalidArgument("flow_step_ansatz: |phi*| below eps_phi");
  }
  AnsatzMetric out = am;
  for (std::size_t p = 0; p < N; ++p) {
    const double h3 = am.h3[p], h4 = am.h4[p];
    if (h3 == 0.0 || h4 == 0.0) throw InvalidArgument("flow_step_ansatz: h3 or h4 vanishes");
    auto rhs = [&](std::size_t s, double a, double b, double& da, double& db) {
      if (a * h3 <= 0.0 || b * h4 <= 0.0) throw NumericalError("flow_step_ansatz: h3 or h4 changes sign within the step");
      da = -a * ps[s][p] / b;
      db = -b * ps[s][p] / a;
    };
    double k1a, k1b, k2a, k2b, k3a, k3b, k4a, k4b;
    rhs(0, h3, h4, k1a, k1b);
    rhs(1, h3 + 0.5 * dchi * k1a, h4 + 0.5 * dchi * k1b, k2a, k2b);
    rhs(1, h3 + 0.5 * dchi * k2a, h4 + 0.5 * dchi * k2b, k3a, k3b);
    rhs(2, h3 + dchi * k3a, h4 + dchi * k3b, k4a, k4b);
    out.h3[p] = h3 + dchi / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a);
    out.h4[p] = h4 + dchi / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b);
    if (out.h3[p] * h3 <= 0.0 || out.h4[p] * h4 <= 0.0)
      throw NumericalError("flow_step_ansatz: h3 or h4 changes sign within the step");
  }
  // Auxiliary potential of the updated v-block.
  const Field dh4 = c.derivative(out.h4, 2);
  Field phi_t(N);
  for (std::size_t p = 0; p < N; ++p) {
    const double q = std::abs(dh4[p]) / std::sqrt(std::abs(out.h3[p] * out.h4[p]));
    if (!(q > 0.0) || !std::isfinite(q)) throw NumericalError("flow_step_ansatz: h4* vanishes, auxiliary potential undefined");
    phi_t[p] = std::log(q);
  }
  try {
    out.w = ansatz::build_w(c, phi_t, gd.eps_phi);
  } catch (const InvalidArgument&) {
    throw NumericalError("flow_step_ansatz: auxiliary potential has |phi*| below eps_phi");
  }
  out.n = ansatz::build_n(c, out.h3, out.h4, gd.n1, gd.n2);
  return out;
}

namespace {

double mixed_norm(const CurvatureBundle& cb) {
  double r = 0.0;
  for (const auto& f : cb.ricci_hv)
    for (double v : f) r = std::max(r, std::abs(v));
  for (const auto& f : cb.ricci_vh)
    for (double v : f) r = std::max(r, std::abs(v));
  return r;
}

}  // namespace

AnsatzFlowRecord run_ansatz_flow(const GeneratingData& gd, double dchi, std::size_t steps, bool with_mixed) {
  gd.validate();
  AnsatzFlowRecord rec;
  double chi = gd.chi.front();
  AnsatzMetric am = ansatz::generate(gd, 0);
  auto store = [&](const AnsatzMetric& m) {
    rec.chi.push_back(chi);
    rec.metrics.push_back(m);
    rec.mixed.push_back(with_mixed ? mixed_norm(curvature(m.to_dmetric())) : -1.0);
  };
  store(am);
  for (std::size_t k = 0; k < steps; ++k) {
    am = flow_step_ansatz(am, gd, chi, dchi);
    chi += dchi;
    store(am);
  }
  return rec;
}

// ---- general flow -------------------------------------------------------

Field kreiss_oliger(const GridChart& c, const Field& u, double eps) {
  if (u.size() != c.size()) throw InvalidArgument("kreiss_oliger: field does not match chart");
  Field out(u.size(), 0.0);
  if (eps == 0.0) return out;
  static constexpr double w4[] = {1, -4, 6, -4, 1};
  static constexpr double w6[] = {1, -6, 15, -20, 15, -6, 1};
  const int r = c.fd_order() / 2 + 1;
  const double* w = r == 2 ? w4 : w6;
  const double sign = r % 2 == 1 ? 1.0 : -1.0;
  for (int a = 0; a < 4; ++a) {
    const long n = static_cast<long>(c.count(a));
    if (n < 2 * r + 1) continue;
    const bool periodic = c.axis(a).boundary == BoundaryKind::periodic;
    const double h = c.spacing(a);
    const double scale = sign * eps / (std::pow(4.0, r) * h * h);
    const long st = static_cast<long>(c.stride(a));
    for (std::size_t p = 0; p < u.size(); ++p) {
      const long i = static_cast<long>(c.index_along(p, a));
      if (!periodic && (i < r || i + r >= n)) continue;
      double v = 0.0;
      for (long k = -r; k <= r; ++k) {
        const long j = periodic ? ((i + k) % n + n) % n : i + k;
        v += w[k + r] * u[static_cast<std::size_t>(static_cast<long>(p) + (j - i) * st)];
      }
      out[p] += scale * v;
    }
  }
  return out;
}

namespace {

using Packed = std::array<Field, 3>;

// Packed index of the symmetric pair (i, j) of a 2x2 block.
constexpr std::size_t pk(int i, int j) { return static_cast<std::size_t>(i + j); }

// Christoffel symbols G^k_ij of one 2x2 block, indexed [k][pk(i, j)], derivatives along frame
// directions o and o + 1.
std::array<Packed, 2> block_christoffel(const DMetric& m, const Packed& G, int o) {
  const GridChart& c = m.chart;
  const std::size_t N = c.size();
  std::array<Packed, 2> dG;  // dG[l][pk(i, j)] = e_{o+l} G_ij
  for (int l = 0; l < 2; ++l)
    for (std::size_t k = 0; k < 3; ++k) dG[static_cast<std::size_t>(l)][k] = n_elongated_derivative(G[k], o + l, c, m.n);
  std::array<Packed, 2> out;
  for (auto& a : out)
    for (auto& f : a) f.resize(N);
  for (std::size_t p = 0; p < N; ++p) {
    const double det = G[0][p] * G[2][p] - G[1][p] * G[1][p];
    const double inv[2][2] = {{G[2][p] / det, -G[1][p] / det}, {-G[1][p] / det, G[0][p] / det}};
    auto d = [&](int l, int i, int j) { return dG[static_cast<std::size_t>(l)][pk(i, j)][p]; };
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) {
        double low[2];
        for (int l = 0; l < 2; ++l) low[l] = 0.5 * (d(i, j, l) + d(j, i, l) - d(l, i, j));
        for (int k = 0; k < 2; ++k)
          out[static_cast<std::size_t>(k)][pk(i, j)][p] = inv[k][0] * low[0] + inv[k][1] * low[1];
      }
  }
  return out;
}

// D_i W_j + D_j W_i for one block.
Packed block_deturck(const DMetric& m, const Packed& G, const Packed& Gref, int o) {
  const GridChart& c = m.chart;
  const std::size_t N = c.size();
  const auto C = block_christoffel(m, G, o);
  const auto Cr = block_christoffel(m, Gref, o);
  std::array<Field, 2> W;  // lowered
  for (auto& f : W) f.resize(N);
  for (std::size_t p = 0; p < N; ++p) {
    const double det = G[0][p] * G[2][p] - G[1][p] * G[1][p];
    const double i00 = G[2][p] / det, i01 = -G[1][p] / det, i11 = G[0][p] / det;
    double up[2];
    for (std::size_t k = 0; k < 2; ++k) {
      auto dc = [&](std::size_t q) { return C[k][q][p] - Cr[k][q][p]; };
      up[k] = i00 * dc(0) + 2.0 * i01 * dc(1) + i11 * dc(2);
    }
    W[0][p] = G[0][p] * up[0] + G[1][p] * up[1];
    W[1][p] = G[1][p] * up[0] + G[2][p] * up[1];
  }
  std::array<std::array<Field, 2>, 2> dW;  // dW[i][j] = e_{o+i} W_j
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      dW[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = n_elongated_derivative(W[static_cast<std::size_t>(j)], o + i, c, m.n);
  Packed out;
  for (auto& f : out) f.resize(N);
  for (std::size_t p = 0; p < N; ++p)
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) {
        const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
        double v = dW[ui][uj][p] + dW[uj][ui][p];
        for (std::size_t k = 0; k < 2; ++k) v -= 2.0 * C[k][pk(i, j)][p] * W[k][p];
        out[pk(i, j)][p] = v;
      }
  return out;
}

}  // namespace

BlockRates deturck_term(const DMetric& m, const DMetric& reference) {
  require_same_chart(m.chart, reference.chart, "deturck_term");
  return {block_deturck(m, m.g, reference.g, 0), block_deturck(m, m.h, reference.h, 2)};
}

std::vector<std::size_t> dirichlet_edge_nodes(const GridChart& c) {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < c.size(); ++p)
    for (int a = 0; a < 4; ++a) {
      if (c.axis(a).boundary != BoundaryKind::dirichlet) continue;
      const std::size_t i = c.index_along(p, a);
      if (i == 0 || i + 1 == c.count(a)) {
        out.push_back(p);
        break;
      }
    }
  return out;
}

FlowState flow_step_general(const FlowState& fs, double dchi, const GeneralFlowOptions& opt, StepDiagnostics* diag) {
  if (!(dchi > 0.0 && std::isfinite(dchi))) throw InvalidArgument("flow_step_general: dchi must be positive");
  const DMetric& m0 = fs.metric;
  const std::size_t N = m0.chart.size();
  using Blocks = std::array<Field, 3>;
  const std::vector<std::size_t> edge = opt.boundary ? dirichlet_edge_nodes(m0.chart) : std::vector<std::size_t>{};
  // Boundary rates by a centred difference of the data in chi.
  auto boundary_rate = [&](double chi, Blocks& kg, Blocks& kh) {
    const double d = 1e-4 * dchi;
    for (std::size_t p : edge) {
      const auto u = m0.chart.coords(p);
      const MetricSample a = opt.boundary(chi + d, u), b = opt.boundary(chi - d, u);
      for (std::size_t k = 0; k < 3; ++k) {
        kg[k][p] = (a.g[k] - b.g[k]) / (2.0 * d);
        kh[k][p] = (a.h[k] - b.h[k]) / (2.0 * d);
      }
    }
  };
  auto rate = [&](const DMetric& m, double chi, Blocks& kg, Blocks& kh, bool first) {
    m.validate();
    const CurvatureBundle cb = curvature(m);
    std::optional<BlockRates> dt_rates;
    if (opt.deturck) {
      if (!opt.deturck_reference) throw InvalidArgument("flow_step_general: DeTurck term needs a reference metric");
      dt_rates = deturck_term(m, *opt.deturck_reference);
    }
    if (first && diag) {
      diag->mixed = mixed_norm(cb);
      if (diag->mixed > opt.tol_mixed) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "chi=%.6g: mixed Ricci %.3e exceeds tol_mixed %.3e", fs.chi, diag->mixed, opt.tol_mixed);
        diag->warning = buf;
      }
    }
    for (std::size_t k = 0; k < 3; ++k) {
      kg[k].resize(N);
      kh[k].resize(N);
      for (std::size_t p = 0; p < N; ++p) {
        kg[k][p] = -2.0 * (cb.ricci_h[k][p] - opt.lambda * m.g[k][p]);
        kh[k][p] = -2.0 * (cb.ricci_v[k][p] - opt.lambda * m.h[k][p]);
      }
      if (dt_rates) {
        for (std::size_t p = 0; p < N; ++p) {
          kg[k][p] += dt_rates->g[k][p];
          kh[k][p] += dt_rates->h[k][p];
        }
      }
      if (opt.dissipation != 0.0) {
        const Field dg = kreiss_oliger(m.chart, m.g[k], opt.dissipation);
        const Field dh = kreiss_oliger(m.chart, m.h[k], opt.dissipation);
        for (std::size_t p = 0; p < N; ++p) {
          kg[k][p] += dg[p];
          kh[k][p] += dh[p];
        }
      }
    }
    boundary_rate(chi, kg, kh);
  };
  auto shifted = [&](const Blocks& kg, const Blocks& kh, double a) {
    Blocks g = m0.g, h = m0.h;
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t p = 0; p < N; ++p) {
        g[k][p] += a * kg[k][p];
        h[k][p] += a * kh[k][p];
      }
    return m0.with_values(g, h);
  };
  Blocks g1, h1, g2, h2, g3, h3, g4, h4;
  const double c0 = fs.chi;
  rate(m0, c0, g1, h1, true);
  rate(shifted(g1, h1, 0.5 * dchi), c0 + 0.5 * dchi, g2, h2, false);
  rate(shifted(g2, h2, 0.5 * dchi), c0 + 0.5 * dchi, g3, h3, false);
  rate(shifted(g3, h3, dchi), c0 + dchi, g4, h4, false);
  Blocks g = m0.g, h = m0.h;
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t p = 0; p < N; ++p) {
      g[k][p] += dchi / 6.0 * (g1[k][p] + 2 * g2[k][p] + 2 * g3[k][p] + g4[k][p]);
      h[k][p] += dchi / 6.0 * (h1[k][p] + 2 * h2[k][p] + 2 * h3[k][p] + h4[k][p]);
    }
  for (std::size_t p : edge) {
    const MetricSample b = opt.boundary(c0 + dchi, m0.chart.coords(p));
    for (std::size_t k = 0; k < 3; ++k) {
      g[k][p] = b.g[k];
      h[k][p] = b.h[k];
    }
  }
  FlowState out = fs;
  out.metric = m0.with_values(g, h);
  out.metric.validate();
  out.chi = fs.chi + dchi;
  out.tau_hat = fs.tau_hat - dchi;
  return out;
}

FlowHistory run_general_flow(const DMetric& m0, double tau0, double dchi, std::size_t steps,
                             const GeneralFlowOptions& opt, double chi0) {
  if (!(tau0 > 0.0)) throw InvalidArgument("run_general_flow: tau0 must be positive");
  FlowHistory h;
  FlowState s{m0, {}, tau0, chi0};
  s.metric.validate();
  GeneralFlowOptions o = opt;
  if (o.deturck && !o.deturck_reference) o.deturck_reference = std::make_shared<const DMetric>(m0);
  h.chi.push_back(chi0);
  h.tau.push_back(tau0);
  h.metrics.push_back(m0);
  for (std::size_t k = 0; k < steps; ++k) {
    StepDiagnostics d;
    s = flow_step_general(s, dchi, o, &d);
    if (k == 0) h.mixed.push_back(d.mixed);
    if (!d.warning.empty()) h.warnings.push_back(d.warning);
    h.chi.push_back(chi0 + static_cast<double>(k + 1) * dchi);
    h.tau.push_back(tau0 - static_cast<double>(k + 1) * dchi);
    h.metrics.push_back(s.metric);
    h.mixed.push_back(mixed_norm(curvature(s.metric)));
  }
  return h;
}

// ---- f evolution --------------------------------------------------------

namespace {

using SpMat = Eigen::SparseMatrix<double>;

// With zero_edges the rows at the end points of a Dirichlet axis vanish (zero normal derivative).
SpMat axis_derivative(const GridChart& c, int a, bool zero_edges) {
  const std::size_t N = c.size();
  const bool dir = c.axis(a).boundary == BoundaryKind::dirichlet;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(N * 5);
  const std::size_t st = c.stride(a);
  for (std::size_t p = 0; p < N; ++p) {
    const std::size_t i = c.index_along(p, a);
    if (zero_edges && dir && (i == 0 || i + 1 == c.count(a))) continue;
    const StencilRow& r = c.stencil(a, i);
    for (int k = 0; k < r.n; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      const std::size_t q = p - i * st + r.idx[uk] * st;
      t.emplace_back(static_cast<int>(p), static_cast<int>(q), r.w[uk]);
    }
  }
  SpMat D(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

Eigen::VectorXd to_vec(const Field& f) { return Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size())); }

}  // namespace

namespace {

// Chart-only operators: axis derivatives and the correction S_a - D_a D_a that swaps the composed
// same-axis second derivative for the direct central stencil. The composed stencil has a zero symbol
// at the grid frequency, which leaves odd-even modes undamped. Rows whose composition touches a
// Dirichlet end point keep the composed form.
struct ChartOps {
  std::array<SpMat, 4> D, C;
};

ChartOps chart_ops(const GridChart& c, bool zero_normal_flux) {
  static constexpr double s2[] = {1, -2, 1};
  static constexpr double s4[] = {-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12};
  ChartOps ops;
  const long r = c.fd_order() / 2;
  const double* w = r == 1 ? s2 : s4;
  for (int a = 0; a < 4; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    ops.D[ua] = axis_derivative(c, a, zero_normal_flux);
    const SpMat DD = ops.D[ua] * ops.D[ua];
    const long n = static_cast<long>(c.count(a));
    const bool periodic = c.axis(a).boundary == BoundaryKind::periodic;
    const double h = c.spacing(a);
    const long st = static_cast<long>(c.stride(a));
    std::vector<Eigen::Triplet<double>> t;
    Eigen::VectorXd keep = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.size()));
    for (std::size_t p = 0; p < c.size(); ++p) {
      const long i = static_cast<long>(c.index_along(p, a));
      if (n < 2 * r + 1) continue;
      if (!periodic && (i < r + 1 || i > n - r - 2)) continue;
      keep[static_cast<Eigen::Index>(p)] = 1.0;
      for (long k = -r; k <= r; ++k) {
        const long j = periodic ? ((i + k) % n + n) % n : i + k;
        t.emplace_back(static_cast<int>(p), static_cast<int>(static_cast<long>(p) + (j - i) * st), w[k + r] / (h * h));
      }
    }
    SpMat S(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(c.size()));
    S.setFromTriplets(t.begin(), t.end());
    ops.C[ua] = S - SpMat(keep.asDiagonal() * DD);
  }
  return ops;
}

// Operator products for a fixed chart and N. Each snapshot only rescales rows: L = sum_t diag(c_t) M_t
// with c_t = g^{bc} for the second-order terms and v_a = -g^{bc} G^a_{bc} for the first-order ones.
struct LaplacianPlan {
  struct Entry {
    int row, pos;
    double val;
  };
  std::array<Field, 4> n;
  SpMat pattern;
  std::vector<std::vector<Entry>> terms;  // 8 second-order (b, c) pairs, then 4 first-order
  std::vector<std::array<int, 2>> pairs;
};

LaplacianPlan make_plan(const DMetric& m, const ChartOps& ops) {
  const auto N = static_cast<Eigen::Index>(m.chart.size());
  const auto& D = ops.D;
  std::array<SpMat, 4> E;
  E[2] = D[2];
  E[3] = D[3];
  for (std::size_t i = 0; i < 2; ++i)
    E[i] = D[i] - SpMat(to_vec(m.n[i]).asDiagonal() * D[2]) - SpMat(to_vec(m.n[2 + i]).asDiagonal() * D[3]);
  LaplacianPlan plan;
  plan.n = m.n;
  std::vector<SpMat> mats;
  for (int blk = 0; blk < 2; ++blk)
    for (int b = 2 * blk; b < 2 * blk + 2; ++b)
      for (int cc = 2 * blk; cc < 2 * blk + 2; ++cc) {
        const auto ub = static_cast<std::size_t>(b), uc = static_cast<std::size_t>(cc);
        SpMat M = E[uc] * E[ub];
        if (b == cc) M += ops.C[ub];
        mats.push_back(std::move(M));
        plan.pairs.push_back({b, cc});
      }
  for (std::size_t a = 0; a < 4; ++a) mats.push_back(E[a]);
  SpMat U(N, N);
  for (const auto& M : mats) U += M.cwiseAbs();
  U.makeCompressed();
  for (const auto& M : mats) {
    std::vector<LaplacianPlan::Entry> e;
    e.reserve(static_cast<std::size_t>(M.nonZeros()));
    for (Eigen::Index col = 0; col < M.outerSize(); ++col)
      for (SpMat::InnerIterator it(M, col); it; ++it) {
        const int* b = U.innerIndexPtr() + U.outerIndexPtr()[col];
        const int* en = U.innerIndexPtr() + U.outerIndexPtr()[col + 1];
        const int* f = std::lower_bound(b, en, static_cast<int>(it.row()));
        e.push_back({static_cast<int>(it.row()), static_cast<int>(f - U.innerIndexPtr()), it.value()});
      }
    plan.terms.push_back(std::move(e));
  }
  plan.pattern = std::move(U);
  return plan;
}

SpMat assemble_laplacian(const DMetric& m, const LaplacianPlan& plan) {
  m.validate();
  const std::size_t N = m.chart.size();
  // ginv[b][c] per node and the first-order coefficients v_a = -g^{bc} G^a_{bc}.
  std::array<std::array<Field, 4>, 4> ginv;
  std::array<Field, 4> v;
  for (auto& row : ginv)
    for (auto& x : row) x.assign(N, 0.0);
  for (auto& x : v) x.assign(N, 0.0);
  CurvatureEngine eng(m, ConnectionKind::canonical);
  for (std::size_t p = 0; p < N; ++p) {
    for (int blk = 0; blk < 2; ++blk) {
      const auto& B = blk == 0 ? m.g : m.h;
      const double d = B[0][p] * B[2][p] - B[1][p] * B[1][p];
      const std::size_t o = static_cast<std::size_t>(2 * blk);
      ginv[o][o][p] = B[2][p] / d;
      ginv[o][o + 1][p] = ginv[o + 1][o][p] = -B[1][p] / d;
      ginv[o + 1][o + 1][p] = B[0][p] / d;
    }
    const FrameCoeffs& G = eng.coeffs(p);
    for (int blk = 0; blk < 2; ++blk)
      for (int b = 2 * blk; b < 2 * blk + 2; ++b)
        for (int cc = 2 * blk; cc < 2 * blk + 2; ++cc)
          for (int a = 0; a < 4; ++a)
            v[static_cast<std::size_t>(a)][p] -=
                ginv[static_cast<std::size_t>(b)][static_cast<std::size_t>(cc)][p] * G[gidx(a, b, cc)];
  }
  SpMat L = plan.pattern;
  double* vals = L.valuePtr();
  std::fill(vals, vals + L.nonZeros(), 0.0);
  for (std::size_t t = 0; t < plan.terms.size(); ++t) {
    const Field& coef = t < plan.pairs.size()
                            ? ginv[static_cast<std::size_t>(plan.pairs[t][0])][static_cast<std::size_t>(plan.pairs[t][1])]
                            : v[t - plan.pairs.size()];
    for (const auto& e : plan.terms[t]) vals[e.pos] += coef[static_cast<std::size_t>(e.row)] * e.val;
  }
  return L;
}

}  // namespace

SpMat d_laplacian_matrix(const DMetric& m, bool zero_normal_flux) {
  m.validate();
  return assemble_laplacian(m, make_plan(m, chart_ops(m.chart, zero_normal_flux)));
}

void f_evolution(FlowHistory& hist, const Field& f_final, const FEvolutionOptions& opt) {
  const std::size_t K = hist.metrics.size();
  if (K == 0 || hist.chi.size() != K || hist.tau.size() != K) throw InvalidArgument("f_evolution: inconsistent history");
  const GridChart& c = hist.metrics.back().chart;
  if (f_final.size() != c.size()) throw InvalidArgument("f_evolution: final potential does not match chart");
  const auto N = static_cast<Eigen::Index>(c.size());
  auto reaction = [&](std::size_t k) {
    const CurvatureBundle cb = curvature(hist.metrics[k]);
    Eigen::VectorXd r(N);
    for (Eigen::Index p = 0; p < N; ++p) {
      const auto up = static_cast<std::size_t>(p);
      r[p] = -(cb.scalar_h[up] + cb.scalar_v[up]);
      if (opt.tau_term) {
        if (!(hist.tau[k] > 0.0)) throw InvalidArgument("f_evolution: tau must stay positive");
        r[p] += functionals::kHalfDim / hist.tau[k];
      }
    }
    return r;
  };
  hist.f.assign(K, Field());
  Eigen::VectorXd w(N);
  for (Eigen::Index p = 0; p < N; ++p) w[p] = std::exp(-f_final[static_cast<std::size_t>(p)]);
  auto store = [&](std::size_t k) {
    Field f(static_cast<std::size_t>(N));
    for (Eigen::Index p = 0; p < N; ++p) {
      if (!(w[p] > 0.0) || !std::isfinite(w[p])) {
        char buf[120];
        std::snprintf(buf, sizeof buf, "f_evolution: omega = %.3e at chi = %.6g, f undefined", w[p], hist.chi[k]);
        throw NumericalError(buf);
      }
      f[static_cast<std::size_t>(p)] = -std::log(w[p]);
    }
    hist.f[k] = std::move(f);
  };
  store(K - 1);
  if (K == 1) return;
  const bool by_volume = opt.reaction == ReactionKind::volume_rate;
  auto log_volume = [&](std::size_t k) {
    const DMetric& m = hist.metrics[k];
    Eigen::VectorXd v(N);
    for (Eigen::Index p = 0; p < N; ++p) {
      const auto up = static_cast<std::size_t>(p);
      const double dg = m.g[0][up] * m.g[2][up] - m.g[1][up] * m.g[1][up];
      const double dh = m.h[0][up] * m.h[2][up] - m.h[1][up] * m.h[1][up];
      v[p] = 0.5 * (std::log(std::abs(dg)) + std::log(std::abs(dh)));
    }
    return v;
  };
  const ChartOps ops = chart_ops(c, opt.zero_normal_flux);
  LaplacianPlan plan = make_plan(hist.metrics[K - 1], ops);
  auto laplacian = [&](std::size_t k) {
    if (hist.metrics[k].n != plan.n) plan = make_plan(hist.metrics[k], ops);
    return assemble_laplacian(hist.metrics[k], plan);
  };
  SpMat L_next = laplacian(K - 1);
  Eigen::VectorXd r_next = by_volume ? log_volume(K - 1) : reaction(K - 1);
  SpMat I(N, N);
  I.setIdentity();
  // I - dt/2 L is a small perturbation of the identity at stable step sizes; composed high-order
  // stencils make direct factorization fill in badly.
  Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> solver;
  solver.setTolerance(1e-12);
  solver.setMaxIterations(2000);
  for (std::size_t k = K - 1; k-- > 0;) {
    const double dt = hist.chi[k + 1] - hist.chi[k];
    if (!(dt > 0.0)) throw InvalidArgument("f_evolution: chi must increase");
    SpMat L = laplacian(k);
    const Eigen::VectorXd r = by_volume ? log_volume(k) : reaction(k);
    // Half of the reaction factor on each side of the diffusion step.
    Eigen::VectorXd before, after;
    if (by_volume) {
      // omega dV is unchanged by the reaction over the interval; the tau term integrates exactly.
      double tau_log = 0.0;
      if (opt.tau_term) {
        if (!(hist.tau[k + 1] > 0.0)) throw InvalidArgument("f_evolution: tau must stay positive");
        tau_log = functionals::kHalfDim * std::log(hist.tau[k] / hist.tau[k + 1]);
      }
      before = (0.5 * (r_next - r).array() + 0.5 * tau_log).exp().matrix();
      after = before;
    } else {
      before = (0.5 * dt * r_next).array().exp().matrix();
      after = (0.5 * dt * r).array().exp().matrix();
    }
    w = w.cwiseProduct(before);
    const Eigen::VectorXd rhs = w + 0.5 * dt * (L_next * w);
    const SpMat A = I - 0.5 * dt * L;
    solver.compute(A);
    if (solver.info() != Eigen::Success) throw NumericalError("f_evolution: diffusion step preconditioner failed");
    const Eigen::VectorXd guess = w;
    w = solver.solveWithGuess(rhs, guess);
    if (solver.info() != Eigen::Success) throw NonConvergence("f_evolution: diffusion step did not converge");
    w = w.cwiseProduct(after);
    store(k);
    L_next = std::move(L);
    r_next = r;
  }
}

// ---- monotonicity -------------------------------------------------------

MonotonicityReport monotonicity_report(const FlowHistory& hist, double tol_mono) {
  const std::size_t K = hist.metrics.size();
  if (K < 3) throw InvalidArgument("monotonicity_report: need at least 3 snapshots");
  if (hist.f.size() != K) throw InvalidArgument("monotonicity_report: potential f missing (run f_evolution)");
  MonotonicityReport r;
  r.chi = hist.chi;
  r.tau = hist.tau;
  for (std::size_t k = 0; k < K; ++k) {
    const auto in = functionals::ingredients(hist.metrics[k], hist.f[k]);
    const auto th = functionals::thermodynamics(in, hist.tau[k]);
    r.F.push_back(th.F);
    r.W.push_back(th.W);
    r.sigma.push_back(th.sigma);
    r.F_rate.push_back(functionals::F_rate_integrand(in));
    r.W_rate.push_back(functionals::W_rate_integrand(in, hist.tau[k]));
    r.max_entropy_identity = std::max(r.max_entropy_identity, std::abs(th.S_entropy + th.W));
    r.mass.push_back(functionals::weighted_volume(hist.metrics[k], hist.f[k]));
    r.mu_mass.push_back(std::exp(functionals::log_mu_mass(hist.metrics[k], hist.f[k], hist.tau[k])));
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.dF_fd.assign(K, nan);
  r.dW_fd.assign(K, nan);
  for (std::size_t k = 1; k + 1 < K; ++k) {
    const double h = hist.chi[k + 1] - hist.chi[k - 1];
    r.dF_fd[k] = (r.F[k + 1] - r.F[k - 1]) / h;
    r.dW_fd[k] = (r.W[k + 1] - r.W[k - 1]) / h;
  }
  r.min_forward_dF = INFINITY;
  for (std::size_t k = 0; k + 1 < K; ++k)
    r.min_forward_dF = std::min(r.min_forward_dF, (r.F[k + 1] - r.F[k]) / (hist.chi[k + 1] - hist.chi[k]));
  r.mid = K / 2;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); };
  r.mid_mismatch_F = rel(r.dF_fd[r.mid], r.F_rate[r.mid]);
  r.mid_mismatch_W = rel(r.dW_fd[r.mid], r.W_rate[r.mid]);
  r.mid_mismatch_sigma = rel(std::pow(hist.tau[r.mid], 3) * r.dW_fd[r.mid], r.sigma[r.mid]);
  r.min_sigma = *std::min_element(r.sigma.begin(), r.sigma.end());
  for (std::size_t k = 0; k < K; ++k) {
    r.mass_drift = std::max(r.mass_drift, rel(r.mass[k], r.mass[0]));
    r.mu_mass_drift = std::max(r.mu_mass_drift, rel(r.mu_mass[k], r.mu_mass[0]));
  }
  r.monotone = r.min_forward_dF >= -tol_mono;
  return r;
}

}  // namespace anholo::flow
