#include "anholo/ansatz.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "anholo/connection.hpp"
#include "anholo/curvature.hpp"
#include "anholo/errors.hpp"
#include "anholo/rng.hpp"

namespace anholo::ansatz {

namespace {

void require_size(const GridChart& c, const Field& f, const char* what) {
  if (f.size() != c.size()) throw InvalidArgument(std::string("field size does not match chart: ") + what);
}

}  // namespace

void GeneratingData::validate() const {
  if (lambda == 0.0 || !std::isfinite(lambda)) throw InvalidArgument("generating data: lambda must be nonzero");
  if (phi.empty()) throw InvalidArgument("generating data: no phi samples");
  if (phi.size() != chi.size()) throw InvalidArgument("generating data: phi and chi sample counts differ");
  if (std::abs(eps3) != 1 || std::abs(eps4) != 1) throw InvalidArgument("generating data: sign flags must be +-1");
  require_size(chart, h4_0, "h4_0");
  require_size(chart, psi_boundary, "psi_boundary");
  for (int i = 0; i < 2; ++i) {
    require_size(chart, n1[static_cast<std::size_t>(i)], "n1");
    require_size(chart, n2[static_cast<std::size_t>(i)], "n2");
  }
  for (const Field& f : phi) {
    require_size(chart, f, "phi");
    for (double v : f)
      if (!std::isfinite(v)) throw InvalidArgument("generating data: non-finite phi");
    const Field ps = chart.derivative(f, 2);
    for (double v : ps)
      if (!(std::abs(v) >= eps_phi))
        throw InvalidArgument("generating data: |phi*| below eps_phi (phi must depend on t everywhere)");
  }
}

GeneratingData make_generating_data(const GridChart& chart, std::vector<Field> phi, double lambda,
                                    std::vector<double> chi) {
  GeneratingData gd;
  gd.chart = chart;
  gd.phi = std::move(phi);
  gd.chi = std::move(chi);
  gd.lambda = lambda;
  gd.h4_0.assign(chart.size(), 0.0);
  gd.psi_boundary.assign(chart.size(), 0.0);
  for (auto& f : gd.n1) f.assign(chart.size(), 0.0);
  for (auto& f : gd.n2) f.assign(chart.size(), 0.0);
  gd.validate();
  return gd;
}

std::array<double, 4> AnsatzMetric::source(double lambda, int eps3) {
  const double l = eps3 * lambda;
  return {l, l, 0.0, 0.0};
}

DMetric AnsatzMetric::to_dmetric() const {
  DMetric m = DMetric::zeros(chart);
  m.signature = (eps3 < 0 || eps4 < 0) ? Signature::lorentz : Signature::riemannian;
  for (std::size_t p = 0; p < chart.size(); ++p) {
    const double e = std::exp(psi[p]);
    m.g[0][p] = e;
    m.g[2][p] = e;
    m.h[0][p] = eps3 * h3[p];
    m.h[2][p] = eps4 * h4[p];
    m.n[0][p] = w[0][p];
    m.n[1][p] = w[1][p];
    m.n[2][p] = n[0][p];
    m.n[3][p] = n[1][p];
  }
  m.validate();
  return m;
}

namespace {

// Copy a (x1, x2) plane into every (t, y4) node.
Field broadcast_plane(const GridChart& c, const std::vector<double>& plane) {
  Field out(c.size());
  const std::size_t n0 = c.count(0), n1 = c.count(1);
  for (std::size_t i = 0; i < n0; ++i)
    for (std::size_t j = 0; j < n1; ++j)
      for (std::size_t k = 0; k < c.count(2); ++k)
        for (std::size_t l = 0; l < c.count(3); ++l) out[c.index(i, j, k, l)] = plane[i * n1 + j];
  return out;
}

}  // namespace

Field solve_psi(const GridChart& c, const Field& boundary, double tol_lap) {
  require_size(c, boundary, "psi boundary");
  if (c.axis(0).boundary != BoundaryKind::dirichlet || c.axis(1).boundary != BoundaryKind::dirichlet)
    throw InvalidArgument("solve_psi: x1 and x2 axes must be dirichlet");
  const std::size_t n0 = c.count(0), n1 = c.count(1);
  const double hx = c.spacing(0), hy = c.spacing(1);
  const double ax = 1.0 / (hx * hx), ay = 1.0 / (hy * hy);
  std::vector<double> plane(n0 * n1, 0.0);
  for (std::size_t i = 0; i < n0; ++i)
    for (std::size_t j = 0; j < n1; ++j)
      if (i == 0 || j == 0 || i + 1 == n0 || j + 1 == n1) {
        const double v = boundary[c.index(i, j, 0, 0)];
        if (!std::isfinite(v)) throw InvalidArgument("solve_psi: non-finite boundary data");
        plane[i * n1 + j] = v;
      }
  const std::size_t mi = n0 - 2, mj = n1 - 2;
  if (mi > 0 && mj > 0) {
    auto id = [&](std::size_t i, std::size_t j) { return static_cast<int>((i - 1) * mj + (j - 1)); };
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mi * mj));
    for (std::size_t i = 1; i + 1 < n0; ++i)
      for (std::size_t j = 1; j + 1 < n1; ++j) {
        const int r = id(i, j);
        trip.emplace_back(r, r, 2 * ax + 2 * ay);
        const std::size_t ni[4] = {i - 1, i + 1, i, i};
        const std::size_t nj[4] = {j, j, j - 1, j + 1};
        const double wt[4] = {ax, ax, ay, ay};
        for (int k = 0; k < 4; ++k) {
          const std::size_t a = ni[k], bb = nj[k];
          if (a == 0 || bb == 0 || a + 1 == n0 || bb + 1 == n1)
            b[r] += wt[k] * plane[a * n1 + bb];
          else
            trip.emplace_back(r, id(a, bb), -wt[k]);
        }
      }
    Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(mi * mj), static_cast<Eigen::Index>(mi * mj));
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-15);
    cg.setMaxIterations(static_cast<Eigen::Index>(20 * (mi + mj) + 200));
    cg.compute(A);
    const Eigen::VectorXd x = cg.solve(b);
    for (std::size_t i = 1; i + 1 < n0; ++i)
      for (std::size_t j = 1; j + 1 < n1; ++j) plane[i * n1 + j] = x[id(i, j)];
  }
  Field psi = broadcast_plane(c, plane);
  // Relative to the operator scale: the roundoff floor of the stencil grows like 1/h^2.
  double mag = 0.0;
  for (double v : plane) mag = std::max(mag, std::abs(v));
  const double scale = std::max(1.0, (2 * ax + 2 * ay) * mag);
  const double res = five_point_residual(c, psi);
  if (!(res <= tol_lap * scale)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "solve_psi: 5-point residual %.3e above tolerance %.3e", res, tol_lap * scale);
    throw NonConvergence(buf);
  }
  return psi;
}

double five_point_residual(const GridChart& c, const Field& psi) {
  const double ax = 1.0 / (c.spacing(0) * c.spacing(0)), ay = 1.0 / (c.spacing(1) * c.spacing(1));
  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < c.count(0); ++i)
    for (std::size_t j = 1; j + 1 < c.count(1); ++j) {
      auto v = [&](std::size_t a, std::size_t b) { return psi[c.index(a, b, 0, 0)]; };
      const double lap = ax * (v(i - 1, j) - 2 * v(i, j) + v(i + 1, j)) + ay * (v(i, j - 1) - 2 * v(i, j) + v(i, j + 1));
      worst = std::max(worst, std::abs(lap));
    }
  return worst;
}

Field phi_star(const GridChart& c, const Field& phi) {
  require_size(c, phi, "phi");
  return c.derivative(phi, 2);
}

Field build_h4(const GridChart& c, const Field& phi, double lambda, const Field& h4_0) {
  require_size(c, phi, "phi");
  require_size(c, h4_0, "h4_0");
  if (lambda == 0.0) throw InvalidArgument("build_h4: lambda must be nonzero");
  Field h4(c.size());
  double lo = INFINITY, hi = -INFINITY, mag = 0.0;
  for (std::size_t p = 0; p < c.size(); ++p) {
    h4[p] = h4_0[p] + std::exp(2 * phi[p]) / (4 * lambda);
    lo = std::min(lo, h4[p]);
    hi = std::max(hi, h4[p]);
    mag = std::max(mag, std::abs(h4[p]));
  }
  if (!std::isfinite(lo) || !std::isfinite(hi) || (lo <= 0.0 && hi >= 0.0) ||
      std::min(std::abs(lo), std::abs(hi)) <= 1e-12 * mag)
    throw SingularMetric("build_h4: h4 vanishes or changes sign on the chart");
  return h4;
}

Field build_h3(const GridChart& c, const Field& phi, double lambda, const Field& h4, double eps_phi) {
  require_size(c, h4, "h4");
  const Field ps = phi_star(c, phi);
  Field h3(c.size());
  for (std::size_t p = 0; p < c.size(); ++p) {
    if (!(std::abs(ps[p]) >= eps_phi)) throw InvalidArgument("build_h3: |phi*| below eps_phi");
    if (h4[p] == 0.0) throw SingularMetric("build_h3: h4 vanishes");
    h3[p] = ps[p] * ps[p] * std::exp(2 * phi[p]) / (4 * lambda * lambda * h4[p]);
    if (!std::isfinite(h3[p])) throw NumericalError("build_h3: non-finite value");
  }
  return h3;
}

std::array<Field, 2> build_w(const GridChart& c, const Field& phi, double eps_phi) {
  const Field ps = phi_star(c, phi);
  std::array<Field, 2> w;
  for (int i = 0; i < 2; ++i) {
    auto& wi = w[static_cast<std::size_t>(i)];
    wi = c.derivative(phi, i);
    for (std::size_t p = 0; p < c.size(); ++p) {
      if (!(std::abs(ps[p]) >= eps_phi)) throw InvalidArgument("build_w: |phi*| below eps_phi");
      wi[p] /= ps[p];
    }
  }
  return w;
}

std::array<Field, 2> build_n(const GridChart& c, const Field& h3, const Field& h4,
                             const std::array<Field, 2>& n1, const std::array<Field, 2>& n2) {
  require_size(c, h3, "h3");
  require_size(c, h4, "h4");
  Field q(c.size(), 0.0);
  const double dt = c.spacing(2);
  const std::size_t st = c.stride(2);
  for (std::size_t p = 0; p < c.size(); ++p) {
    if (h4[p] == 0.0) throw SingularMetric("build_n: h4 vanishes");
    q[p] = std::sqrt(std::abs(h3[p])) / std::pow(std::abs(h4[p]), 1.5);
  }
  Field integral(c.size(), 0.0);
  for (std::size_t p = 0; p < c.size(); ++p) {
    if (c.index_along(p, 2) != 0) continue;
    double acc = 0.0;
    for (std::size_t k = 1; k < c.count(2); ++k) {
      const std::size_t cur = p + k * st;
      acc += 0.5 * dt * (q[cur - st] + q[cur]);
      integral[cur] = acc;
    }
  }
  std::array<Field, 2> n;
  for (std::size_t i = 0; i < 2; ++i) {
    require_size(c, n1[i], "n1");
    require_size(c, n2[i], "n2");
    n[i].resize(c.size());
    for (std::size_t p = 0; p < c.size(); ++p) {
      n[i][p] = n1[i][p] + n2[i][p] * integral[p];
      if (!std::isfinite(n[i][p])) throw NumericalError("build_n: non-finite quadrature");
    }
  }
  return n;
}

AnsatzMetric assemble(const GridChart& c, Field psi, Field h3, Field h4, std::array<Field, 2> w,
                      std::array<Field, 2> n, int eps3, int eps4) {
  for (const Field* f : {&psi, &h3, &h4, &w[0], &w[1], &n[0], &n[1]})
    if (f->size() != c.size()) throw InvalidArgument("assemble: chart mismatch");
  AnsatzMetric am;
  am.chart = c;
  am.psi = std::move(psi);
  am.h3 = std::move(h3);
  am.h4 = std::move(h4);
  am.w = std::move(w);
  am.n = std::move(n);
  am.eps3 = eps3;
  am.eps4 = eps4;
  return am;
}

AnsatzMetric generate(const GeneratingData& gd, std::size_t sample, double tol_lap) {
  gd.validate();
  if (sample >= gd.phi.size()) throw std::out_of_range("generate: sample index out of range");
  const GridChart& c = gd.chart;
  const Field& phi = gd.phi[sample];
  Field psi = solve_psi(c, gd.psi_boundary, tol_lap);
  Field h4 = build_h4(c, phi, gd.lambda, gd.h4_0);
  Field h3 = build_h3(c, phi, gd.lambda, h4, gd.eps_phi);
  auto w = build_w(c, phi, gd.eps_phi);
  auto n = build_n(c, h3, h4, gd.n1, gd.n2);
  return assemble(c, std::move(psi), std::move(h3), std::move(h4), std::move(w), std::move(n), gd.eps3, gd.eps4);
}

ResidualReport residual_system(const AnsatzMetric& am, const Field& phi, double lambda, bool with_einstein) {
  const GridChart& c = am.chart;
  require_size(c, phi, "phi");
  ResidualReport r;
  const std::size_t N = c.size();

  // psi equation: wide-stencil Laplacian of psi, independent of the 5-point solve.
  {
    const Field d1 = c.derivative(am.psi, 0), d2 = c.derivative(am.psi, 1);
    for (std::size_t p = 0; p < N; ++p)
      r.eq1 = std::max(r.eq1, std::abs(c.derivative(d1, 0, p) + c.derivative(d2, 1, p)));
  }
  const Field h4s = c.derivative(am.h4, 2);
  const Field ps = c.derivative(phi, 2);
  // phi recovered from the built blocks.
  Field phit(N);
  for (std::size_t p = 0; p < N; ++p) {
    phit[p] = std::log(std::abs(h4s[p] / std::sqrt(std::abs(am.h3[p] * am.h4[p]))));
    r.auxphi = std::max(r.auxphi, std::abs(phi[p] - phit[p]));
    const double rhs = 2 * am.h3[p] * am.h4[p] * lambda / ps[p];
    r.ep2a = std::max(r.ep2a, std::abs(h4s[p] - rhs) / std::abs(h4s[p]));
  }
  // w equation normalised by beta: |w_i - alpha_i / beta|.
  {
    const Field pts = c.derivative(phit, 2);
    for (int i = 0; i < 2; ++i) {
      const Field di = c.derivative(phit, i);
      for (std::size_t p = 0; p < N; ++p)
        r.eq3 = std::max(r.eq3, std::abs(am.w[static_cast<std::size_t>(i)][p] - di[p] / pts[p]));
    }
  }
  // n equation: n** + gamma n* with gamma = (ln |h4|^{3/2} / |h3|^{1/2})*.
  {
    Field lg(N);
    for (std::size_t p = 0; p < N; ++p) lg[p] = 1.5 * std::log(std::abs(am.h4[p])) - 0.5 * std::log(std::abs(am.h3[p]));
    const Field gam = c.derivative(lg, 2);
    for (int i = 0; i < 2; ++i) {
      const Field ns = c.derivative(am.n[static_cast<std::size_t>(i)], 2);
      for (std::size_t p = 0; p < N; ++p) r.eq4 = std::max(r.eq4, std::abs(c.derivative(ns, 2, p) + gam[p] * ns[p]));
    }
  }
  const DMetric m = am.to_dmetric();
  r.lc = lc_constraint_residual(m, am.h4, am.w, am.n);
  if (with_einstein) {
    const auto src = AnsatzMetric::source(lambda, am.eps3);
    CurvatureEngine eng(m, ConnectionKind::canonical);
    double worst = 0.0;
    for (std::size_t p = 0; p < N; ++p) {
      const Ricci4 R = eng.ricci(p);
      const double gi = std::exp(-am.psi[p]);
      const double h3 = m.h[0][p], h4 = m.h[2][p];
      // Mixed components in the N-adapted frame; the blocks are diagonal here.
      double mixed[4][4];
      const double inv[4] = {gi, gi, 1.0 / h3, 1.0 / h4};
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) mixed[a][b] = inv[a] * R[static_cast<std::size_t>(a * 4 + b)];
      const double sR = mixed[0][0] + mixed[1][1] + mixed[2][2] + mixed[3][3];
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          double v = mixed[a][b];
          if (a == b) v -= 0.5 * sR + src[static_cast<std::size_t>(a)];
          worst = std::max(worst, std::abs(v));
          if (a < 2 && b >= 2) r.mixed_ia = std::max(r.mixed_ia, std::abs(R[static_cast<std::size_t>(a * 4 + b)]));
          if (a >= 2 && b < 2) r.mixed_ai = std::max(r.mixed_ai, std::abs(R[static_cast<std::size_t>(a * 4 + b)]));
        }
    }
    r.einstein = worst;
  }
  return r;
}

double eq2_residual(const std::vector<AnsatzMetric>& traj, const std::vector<double>& chi,
                    const std::vector<Field>& phs) {
  if (traj.size() != chi.size() || phs.size() != chi.size())
    throw InvalidArgument("eq2_residual: trajectory, chi and phi* sample counts differ");
  if (traj.size() < 3) throw InvalidArgument("eq2_residual: needs at least 3 samples");
  double worst = 0.0;
  for (std::size_t m = 1; m + 1 < traj.size(); ++m) {
    const double dchi = chi[m + 1] - chi[m - 1];
    const AnsatzMetric& a = traj[m];
    for (std::size_t p = 0; p < a.chart.size(); ++p) {
      const double d3 = (traj[m + 1].h3[p] - traj[m - 1].h3[p]) / dchi;
      const double d4 = (traj[m + 1].h4[p] - traj[m - 1].h4[p]) / dchi;
      worst = std::max(worst, std::abs(d3 / a.h3[p] + phs[m][p] / a.h4[p]));
      worst = std::max(worst, std::abs(d4 / a.h4[p] + phs[m][p] / a.h3[p]));
    }
  }
  return worst;
}

std::vector<Field> sample_random_phi(const GridChart& c, const Field& phi0, const PhiNoise& noise,
                                     std::uint64_t seed, std::uint64_t path, const std::vector<double>& chi,
                                     double eps_phi, int max_attempts) {
  require_size(c, phi0, "phi0");
  if (noise.amplitude < 0 || noise.correlation_time <= 0 || noise.modes < 0 || noise.modes > 8)
    throw InvalidArgument("phi noise: need amplitude >= 0, correlation_time > 0, 0 <= modes <= 8");
  for (std::size_t m = 1; m < chi.size(); ++m)
    if (!(chi[m] > chi[m - 1])) throw InvalidArgument("phi noise: chi samples must increase");
  static const int pq[8][2] = {{1, 0}, {0, 1}, {1, 1}, {2, 0}, {0, 2}, {2, 1}, {1, 2}, {2, 2}};
  const auto K = static_cast<std::size_t>(noise.modes);
  std::vector<Field> modes(K, Field(c.size()));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t p = 0; p < c.size(); ++p) {
      const auto u = c.coords(p);
      const double s1 = (u[0] - c.axis(0).min) / (c.axis(0).max - c.axis(0).min);
      const double s2 = (u[1] - c.axis(1).min) / (c.axis(1).max - c.axis(1).min);
      modes[k][p] = std::cos(pq[k][0] * std::numbers::pi * s1) * std::cos(pq[k][1] * std::numbers::pi * s2);
    }
  auto rng = path_stream(seed, path, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<Field> out;
    std::vector<double> X(K);
    for (auto& x : X) x = noise.amplitude * normal(rng);
    bool ok = true;
    for (std::size_t m = 0; m < chi.size() && ok; ++m) {
      if (m > 0) {
        const double a = std::exp(-(chi[m] - chi[m - 1]) / noise.correlation_time);
        for (auto& x : X) x = a * x + noise.amplitude * std::sqrt(1 - a * a) * normal(rng);
      }
      Field f = phi0;
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t p = 0; p < c.size(); ++p) f[p] += X[k] * modes[k][p];
      const Field ps = c.derivative(f, 2);
      for (double v : ps)
        if (!(std::abs(v) >= eps_phi)) ok = false;
      out.push_back(std::move(f));
    }
    if (ok) return out;
  }
  throw InvalidArgument("sample_random_phi: |phi*| gate failed after maximum resampling attempts");
}

}  // namespace anholo::ansatz
