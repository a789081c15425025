#include "anholo/spde.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

#include "anholo/errors.hpp"
#include "anholo/rng.hpp"

namespace anholo::spde {

std::string to_string(GraphKind k) {
  switch (k) {
    case GraphKind::stefan: return "stefan";
    case GraphKind::sign_power: return "sign_power";
    case GraphKind::heaviside_soc: return "heaviside_soc";
    default: return "linear";
  }
}

// ---- graphs -------------------------------------------------------------

namespace {
bool finite_pos(double v) { return std::isfinite(v) && v > 0.0; }
}  // namespace

MonotoneGraph MonotoneGraph::stefan(double chi0, double rho, double alpha1, double alpha2) {
  if (!finite_pos(chi0) || !finite_pos(rho) || !finite_pos(alpha1) || !finite_pos(alpha2))
    throw InvalidArgument("stefan graph: chi0, rho, alpha1, alpha2 must be positive");
  MonotoneGraph g;
  g.kind_ = GraphKind::stefan;
  g.x0_ = chi0;
  g.a1_ = alpha1;
  g.a2_ = alpha2;
  g.jump_ = rho;
  return g;
}

MonotoneGraph MonotoneGraph::sign_power(double rho, double alpha) {
  if (!finite_pos(rho) || !(alpha >= 0.0 && alpha <= 1.0))
    throw InvalidArgument("sign_power graph: need rho > 0 and alpha in [0, 1]");
  MonotoneGraph g;
  g.kind_ = GraphKind::sign_power;
  g.rho_ = rho;
  g.alpha_ = alpha;
  return g;
}

MonotoneGraph MonotoneGraph::heaviside_soc(double kappa, double c_u) {
  if (!(std::isfinite(kappa) && kappa >= 0.0) || !finite_pos(c_u))
    throw InvalidArgument("heaviside_soc graph: need kappa >= 0 and c_u > 0");
  MonotoneGraph g;
  g.kind_ = GraphKind::heaviside_soc;
  g.x0_ = c_u;
  g.a1_ = kappa;
  g.a2_ = kappa;
  g.jump_ = 1.0;
  return g;
}

MonotoneGraph MonotoneGraph::linear(double slope) {
  if (!(std::isfinite(slope) && slope >= 0.0)) throw InvalidArgument("linear graph: slope must be >= 0");
  MonotoneGraph g;
  g.kind_ = GraphKind::linear;
  g.a1_ = slope;
  g.a2_ = slope;
  return g;
}

MonotoneGraph MonotoneGraph::centered() const {
  MonotoneGraph g = *this;
  const Interval v = values(0.0);
  if (v.lo > 0.0) g.shift_ -= v.lo;
  else if (v.hi < 0.0) g.shift_ -= v.hi;
  return g;
}

Interval MonotoneGraph::values(double r) const {
  if (kind_ == GraphKind::sign_power) {
    if (r == 0.0) return alpha_ == 0.0 ? Interval{-rho_, rho_} : Interval{0.0, 0.0};
    const double v = rho_ * std::pow(std::abs(r), alpha_) * (r > 0 ? 1.0 : -1.0);
    return {v, v};
  }
  if (r < x0_) {
    const double v = a1_ * (r - x0_) + shift_;
    return {v, v};
  }
  if (r > x0_) {
    const double v = a2_ * (r - x0_) + jump_ + shift_;
    return {v, v};
  }
  return {shift_, shift_ + jump_};
}

double MonotoneGraph::resolvent(double eps, double r) const {
  if (!(eps > 0.0)) throw InvalidArgument("resolvent: eps must be positive");
  if (kind_ == GraphKind::sign_power) {
    const double ar = std::abs(r), sg = r >= 0 ? 1.0 : -1.0;
    if (alpha_ == 0.0) return sg * std::max(ar - eps * rho_, 0.0);
    if (alpha_ == 1.0) return r / (1.0 + eps * rho_);
    if (ar == 0.0) return 0.0;
    auto f = [&](double s) { return s + eps * rho_ * std::pow(s, alpha_) - ar; };
    std::uintmax_t it = 200;
    const auto br = boost::math::tools::toms748_solve(f, 0.0, ar, -ar, f(ar), boost::math::tools::eps_tolerance<double>(50), it);
    return sg * 0.5 * (br.first + br.second);
  }
  const double lo = x0_ + eps * shift_, hi = x0_ + eps * (shift_ + jump_);
  if (r < lo) return (r + eps * a1_ * x0_ - eps * shift_) / (1.0 + eps * a1_);
  if (r <= hi) return x0_;
  return (r + eps * a2_ * x0_ - eps * (jump_ + shift_)) / (1.0 + eps * a2_);
}

double MonotoneGraph::yosida(double eps, double r) const { return (r - resolvent(eps, r)) / eps; }

double MonotoneGraph::yosida_slope(double eps, double r) const {
  if (kind_ == GraphKind::sign_power) {
    if (alpha_ == 0.0) return std::abs(r) > eps * rho_ ? 0.0 : 1.0 / eps;
    if (alpha_ == 1.0) return rho_ / (1.0 + eps * rho_);
    const double s = std::abs(resolvent(eps, r));
    if (s == 0.0) return 1.0 / eps;
    const double dj = 1.0 / (1.0 + eps * rho_ * alpha_ * std::pow(s, alpha_ - 1.0));
    return (1.0 - dj) / eps;
  }
  const double lo = x0_ + eps * shift_, hi = x0_ + eps * (shift_ + jump_);
  if (r < lo) return a1_ / (1.0 + eps * a1_);
  if (r <= hi && jump_ > 0.0) return 1.0 / eps;
  if (r <= hi) return a1_ / (1.0 + eps * a1_);
  return a2_ / (1.0 + eps * a2_);
}

double MonotoneGraph::potential(double s) const {
  if (kind_ == GraphKind::sign_power) return rho_ * std::pow(std::abs(s), alpha_ + 1.0) / (alpha_ + 1.0) + shift_ * s;
  const double z = s - x0_;
  return shift_ * s + (z < 0.0 ? 0.5 * a1_ * z * z : 0.5 * a2_ * z * z + jump_ * z);
}

double MonotoneGraph::yosida_potential(double eps, double r) const {
  const double j = resolvent(eps, r);
  return (r - j) * (r - j) / (2.0 * eps) + potential(j);
}

double MonotoneGraph::lipschitz(double eps) const {
  if (kind_ == GraphKind::sign_power) return alpha_ == 1.0 ? rho_ / (1.0 + eps * rho_) : 1.0 / eps;
  if (jump_ > 0.0) return 1.0 / eps;
  return std::max(a1_ / (1.0 + eps * a1_), a2_ / (1.0 + eps * a2_));
}

MonotoneGraph::Growth MonotoneGraph::growth() const {
  if (kind_ == GraphKind::sign_power) return {rho_, alpha_};
  const double a = std::max(a1_, a2_);
  return {std::max(a, a * std::abs(x0_) + jump_ + std::abs(shift_)), 1.0};
}

double MonotoneGraph::critical_level() const {
  return (kind_ == GraphKind::stefan || kind_ == GraphKind::heaviside_soc) ? x0_ : 0.0;
}

std::string MonotoneGraph::describe() const {
  char buf[200];
  switch (kind_) {
    case GraphKind::stefan:
      std::snprintf(buf, sizeof buf, "stefan(chi0=%g, rho=%g, alpha1=%g, alpha2=%g, shift=%g)", x0_, jump_, a1_, a2_, shift_);
      break;
    case GraphKind::sign_power: std::snprintf(buf, sizeof buf, "sign_power(rho=%g, alpha=%g)", rho_, alpha_); break;
    case GraphKind::heaviside_soc:
      std::snprintf(buf, sizeof buf, "heaviside_soc(kappa=%g, c_u=%g, shift=%g)", a1_, x0_, shift_);
      break;
    default: std::snprintf(buf, sizeof buf, "linear(slope=%g)", a1_);
  }
  return buf;
}

// ---- domain -------------------------------------------------------------

namespace {

int sym(int i, int j) {
  static const int t[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
  return t[i][j];
}

SpdeDomain build_domain(int dim, std::array<double, 3> lo, std::array<double, 3> hi, std::array<std::size_t, 3> count,
                        const std::function<std::array<double, 6>(std::size_t, const std::array<double, 3>&)>& g) {
  if (dim < 1 || dim > 3) throw InvalidArgument("spde domain: dim must be 1, 2 or 3");
  for (int i = 0; i < 3; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (i < dim) {
      if (count[k] < 3) throw InvalidArgument("spde domain: need at least 3 nodes per axis");
      if (!(lo[k] < hi[k])) throw InvalidArgument("spde domain: need lo < hi");
    } else {
      count[k] = 1;
      lo[k] = hi[k] = 0.0;
    }
  }
  SpdeDomain d;
  d.dim = dim;
  d.count = count;
  d.lo = lo;
  d.hi = hi;
  d.sqrt_g.resize(d.size());
  d.a.resize(d.size());
  for (std::size_t p = 0; p < d.size(); ++p) {
    const auto gl = g(p, d.coords(p));
    Eigen::Matrix3d G = Eigen::Matrix3d::Identity();
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) G(i, j) = gl[static_cast<std::size_t>(sym(i, j))];
    const Eigen::MatrixXd Gd = G.topLeftCorner(dim, dim);
    Eigen::LLT<Eigen::MatrixXd> llt(Gd);
    if (llt.info() != Eigen::Success || !Gd.allFinite())
      throw SingularMetric("spde domain: metric is not positive definite at node " + std::to_string(p));
    const double det = Gd.determinant();
    const Eigen::MatrixXd inv = Gd.inverse();
    d.sqrt_g[p] = std::sqrt(det);
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) d.a[p][static_cast<std::size_t>(sym(i, j))] = d.sqrt_g[p] * inv(i, j);
  }
  return d;
}

}  // namespace

SpdeDomain SpdeDomain::from_metric(int dim, std::array<double, 3> lo, std::array<double, 3> hi,
                                   std::array<std::size_t, 3> count, const LowerMetric& g) {
  return build_domain(dim, lo, hi, count, [&](std::size_t, const std::array<double, 3>& u) { return g(u); });
}

SpdeDomain SpdeDomain::flat(int dim, std::array<double, 3> lo, std::array<double, 3> hi, std::array<std::size_t, 3> count) {
  return from_metric(dim, lo, hi, count, [](const std::array<double, 3>&) { return std::array<double, 6>{1, 0, 0, 1, 0, 1}; });
}

SpdeDomain SpdeDomain::conformal(int dim, std::array<double, 3> lo, std::array<double, 3> hi,
                                 std::array<std::size_t, 3> count,
                                 const std::function<double(const std::array<double, 3>&)>& psi) {
  return from_metric(dim, lo, hi, count, [&](const std::array<double, 3>& u) {
    const double e = std::exp(psi(u));
    return std::array<double, 6>{e, 0, 0, e, 0, e};
  });
}

SpdeDomain SpdeDomain::from_h_block(const DMetric& m, std::size_t k3, std::size_t k4) {
  if (m.signature == Signature::lorentz) throw InvalidArgument("spde domain: Laplacian of a Lorentz-flagged metric is not elliptic");
  const GridChart& c = m.chart;
  if (c.axis(0).boundary != BoundaryKind::dirichlet || c.axis(1).boundary != BoundaryKind::dirichlet)
    throw InvalidArgument("spde domain: x1 and x2 axes must be dirichlet");
  if (k3 >= c.count(2) || k4 >= c.count(3)) throw InvalidArgument("spde domain: v-slice index out of range");
  const std::size_t n1 = c.count(1);
  return build_domain(2, {c.axis(0).min, c.axis(1).min, 0}, {c.axis(0).max, c.axis(1).max, 0}, {c.count(0), n1, 1},
                      [&](std::size_t p, const std::array<double, 3>&) {
                        const std::size_t q = c.index(p / n1, p % n1, k3, k4);
                        return std::array<double, 6>{m.g[0][q], m.g[1][q], 0, m.g[2][q], 0, 1};
                      });
}

double SpdeDomain::spacing(int axis) const {
  const auto k = static_cast<std::size_t>(axis);
  return (hi[k] - lo[k]) / static_cast<double>(count[k] - 1);
}

double SpdeDomain::cell_volume() const {
  double v = 1.0;
  for (int i = 0; i < dim; ++i) v *= spacing(i);
  return v;
}

std::array<std::size_t, 3> SpdeDomain::multi_index(std::size_t p) const {
  return {p / (count[1] * count[2]), (p / count[2]) % count[1], p % count[2]};
}

std::array<double, 3> SpdeDomain::coords(std::size_t p) const {
  const auto m = multi_index(p);
  std::array<double, 3> u{0, 0, 0};
  for (int i = 0; i < dim; ++i) {
    const auto k = static_cast<std::size_t>(i);
    u[k] = lo[k] + static_cast<double>(m[k]) * spacing(i);
  }
  return u;
}

bool SpdeDomain::on_boundary(std::size_t p) const {
  const auto m = multi_index(p);
  for (std::size_t i = 0; i < static_cast<std::size_t>(dim); ++i)
    if (m[i] == 0 || m[i] + 1 == count[i]) return true;
  return false;
}

// ---- discretization -----------------------------------------------------

Eigen::VectorXd Discretization::restrict_field(const Field& f) const {
  if (f.size() != domain.size()) throw InvalidArgument("restrict_field: size mismatch");
  Eigen::VectorXd u(static_cast<Eigen::Index>(interior.size()));
  for (std::size_t k = 0; k < interior.size(); ++k) u[static_cast<Eigen::Index>(k)] = f[interior[k]];
  return u;
}

Field Discretization::extend(const Eigen::VectorXd& u) const {
  Field f(domain.size(), 0.0);
  for (std::size_t k = 0; k < interior.size(); ++k) f[interior[k]] = u[static_cast<Eigen::Index>(k)];
  return f;
}

Discretization discretize(const SpdeDomain& dom) {
  Discretization d;
  d.domain = dom;
  d.slot.assign(dom.size(), -1);
  for (std::size_t p = 0; p < dom.size(); ++p)
    if (!dom.on_boundary(p)) {
      d.slot[p] = static_cast<long>(d.interior.size());
      d.interior.push_back(p);
    }
  const auto n = static_cast<Eigen::Index>(d.interior.size());
  if (n == 0) throw InvalidArgument("spde domain has no interior nodes");
  const double vol = dom.cell_volume();
  std::array<long, 3> stride{static_cast<long>(dom.count[1] * dom.count[2]), static_cast<long>(dom.count[2]), 1};
  std::vector<Eigen::Triplet<double>> trip;
  d.M.resize(n);
  for (std::size_t k = 0; k < d.interior.size(); ++k) {
    const std::size_t p = d.interior[k];
    const auto row = static_cast<int>(k);
    d.M[row] = dom.sqrt_g[p] * vol;
    double diag = 0.0;
    for (int i = 0; i < dom.dim; ++i) {
      const double h2 = dom.spacing(i) * dom.spacing(i);
      const int ii = sym(i, i);
      for (int s : {-1, 1}) {
        const auto q = static_cast<std::size_t>(static_cast<long>(p) + s * stride[static_cast<std::size_t>(i)]);
        const double c = 0.5 * (dom.a[p][static_cast<std::size_t>(ii)] + dom.a[q][static_cast<std::size_t>(ii)]) / h2 * vol;
        diag += c;
        if (d.slot[q] >= 0) trip.emplace_back(row, static_cast<int>(d.slot[q]), -c);
      }
    }
    for (int i = 0; i < dom.dim; ++i)
      for (int j = i + 1; j < dom.dim; ++j) {
        const auto ij = static_cast<std::size_t>(sym(i, j));
        const double hij = 4.0 * dom.spacing(i) * dom.spacing(j);
        for (int si : {-1, 1})
          for (int sj : {-1, 1}) {
            const long pi = static_cast<long>(p) + si * stride[static_cast<std::size_t>(i)];
            const long pj = static_cast<long>(p) + sj * stride[static_cast<std::size_t>(j)];
            const long q = pi + sj * stride[static_cast<std::size_t>(j)];
            const double c = -si * sj * (dom.a[static_cast<std::size_t>(pi)][ij] + dom.a[static_cast<std::size_t>(pj)][ij]) / hij * vol;
            if (c != 0.0 && d.slot[static_cast<std::size_t>(q)] >= 0)
              trip.emplace_back(row, static_cast<int>(d.slot[static_cast<std::size_t>(q)]), c);
          }
      }
    trip.emplace_back(row, row, diag);
  }
  d.K.resize(n, n);
  d.K.setFromTriplets(trip.begin(), trip.end());
  return d;
}

// ---- eigenpairs ---------------------------------------------------------

namespace {

void finish_pairs(const Discretization& d, EigenPairs& ep) {
  const Eigen::Index K = ep.lambda.size();
  for (Eigen::Index k = 0; k < K; ++k) {
    auto col = ep.vectors.col(k);
    Eigen::Index imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    if (col[imax] < 0) col = -col;
  }
  ep.max_residual = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::VectorXd e = ep.vectors.col(k);
    const Eigen::VectorXd r = (d.K * e).cwiseQuotient(d.M) - ep.lambda[k] * e;
    ep.max_residual = std::max(ep.max_residual, std::sqrt(d.inner(r, r)) / std::abs(ep.lambda[k]));
  }
  const Eigen::MatrixXd G = ep.vectors.transpose() * d.M.asDiagonal() * ep.vectors;
  ep.orthonormality_error = (G - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff();
}

}  // namespace

EigenPairs eigensolve_laplacian(const Discretization& d, int K, std::size_t dense_limit) {
  const auto n = static_cast<Eigen::Index>(d.unknowns());
  if (K < 1 || K > n) throw InvalidArgument("eigensolve_laplacian: need 1 <= K <= number of interior nodes");
  const Eigen::VectorXd mis = d.M.cwiseSqrt().cwiseInverse();
  EigenPairs ep;
  if (static_cast<std::size_t>(n) <= dense_limit) {
    const Eigen::MatrixXd S = mis.asDiagonal() * Eigen::MatrixXd(d.K) * mis.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
    if (es.info() != Eigen::Success) throw NonConvergence("eigensolve_laplacian: dense eigensolver failed");
    ep.lambda = es.eigenvalues().head(K);
    ep.vectors = mis.asDiagonal() * es.eigenvectors().leftCols(K);
  } else {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(d.K);
    if (ldlt.info() != Eigen::Success) throw NonConvergence("eigensolve_laplacian: factorization failed");
    const Eigen::Index p = std::min<Eigen::Index>(n, K + std::max(8, K / 2));
    std::mt19937_64 rng(0x5eed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index i = 0; i < n; ++i) X(i, j) = normal(rng);
    bool done = false;
    for (int it = 0; it < 2000 && !done; ++it) {
      const Eigen::MatrixXd Y = ldlt.solve(d.M.asDiagonal() * X);
      const Eigen::MatrixXd A = Y.transpose() * (d.K * Y);
      const Eigen::MatrixXd B = Y.transpose() * d.M.asDiagonal() * Y;
      Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(0.5 * (A + A.transpose()), 0.5 * (B + B.transpose()));
      if (ges.info() != Eigen::Success) throw NonConvergence("eigensolve_laplacian: Rayleigh-Ritz failed");
      X = Y * ges.eigenvectors();
      ep.lambda = ges.eigenvalues().head(K);
      ep.vectors = X.leftCols(K);
      finish_pairs(d, ep);
      done = ep.max_residual <= 1e-10;
    }
    if (!done) throw NonConvergence("eigensolve_laplacian: block inverse iteration did not converge");
  }
  finish_pairs(d, ep);
  return ep;
}

EigenPairs eigensolve_laplacian(const DMetric& m, int K, std::size_t k3, std::size_t k4) {
  return eigensolve_laplacian(discretize(SpdeDomain::from_h_block(m, k3, k4)), K);
}

// ---- noise --------------------------------------------------------------

NoiseSpec make_noise(const Discretization& d, EigenPairs basis, std::optional<std::vector<double>> nu,
                     std::optional<Eigen::VectorXd> l, double nu_scale) {
  NoiseSpec ns;
  const auto K = static_cast<std::size_t>(basis.lambda.size());
  if (nu) {
    if (nu->size() != K) throw InvalidArgument("noise: nu must have one entry per eigenpair");
    ns.nu = *nu;
  } else {
    if (!(nu_scale >= 0.0)) throw InvalidArgument("noise: nu_scale must be >= 0");
    for (std::size_t k = 0; k < K; ++k) ns.nu.push_back(nu_scale * std::pow(basis.lambda[static_cast<Eigen::Index>(k)], -1.5));
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double lk = basis.lambda[static_cast<Eigen::Index>(k)];
    if (!(ns.nu[k] >= 0.0) || !std::isfinite(ns.nu[k])) throw InvalidArgument("noise: nu_k must be finite and >= 0");
    if (k > 0 && ns.nu[k] * lk > ns.nu[k - 1] * basis.lambda[static_cast<Eigen::Index>(k - 1)] * (1 + 1e-12))
      throw InvalidArgument("noise: nu_k lambda_k must be non-increasing");
    ns.trace_sum += ns.nu[k] * ns.nu[k] * lk * lk;
  }
  if (l) {
    if (l->size() != static_cast<Eigen::Index>(d.unknowns())) throw InvalidArgument("noise: l has wrong size");
    ns.l = *l;
  } else {
    ns.l = basis.vectors.col(0);
  }
  for (std::size_t k = 0; k < K; ++k) ns.l_e.push_back(d.inner(ns.l, basis.vectors.col(static_cast<Eigen::Index>(k))));
  ns.basis = std::move(basis);
  return ns;
}

Eigen::VectorXd sample_noise(const NoiseSpec& ns, const Eigen::VectorXd& U, const std::vector<double>& dbeta) {
  if (dbeta.size() != ns.nu.size()) throw InvalidArgument("sample_noise: one increment per mode required");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(U.size());
  for (std::size_t k = 0; k < ns.nu.size(); ++k) {
    const double c = ns.nu[k] * ns.l_e[k] * dbeta[k];
    if (c != 0.0) v += c * ns.basis.vectors.col(static_cast<Eigen::Index>(k));
  }
  return U.cwiseProduct(v);
}

Eigen::VectorXd sample_noise(const NoiseSpec& ns, const Eigen::VectorXd& U, double dchi, std::mt19937_64& rng) {
  if (!(dchi > 0.0)) throw InvalidArgument("sample_noise: dchi must be positive");
  std::normal_distribution<double> normal;
  std::vector<double> db(ns.nu.size());
  for (auto& b : db) b = std::sqrt(dchi) * normal(rng);
  return sample_noise(ns, U, db);
}

WienerPath WienerPath::sample(int modes, std::size_t steps, double dchi, std::mt19937_64& rng) {
  if (modes < 0 || !(dchi > 0.0)) throw InvalidArgument("wiener path: need modes >= 0 and dchi > 0");
  WienerPath w;
  w.modes_ = modes;
  w.steps_ = steps;
  w.dchi_ = dchi;
  std::normal_distribution<double> normal;
  w.inc_.resize(steps * static_cast<std::size_t>(modes));
  for (auto& v : w.inc_) v = std::sqrt(dchi) * normal(rng);
  return w;
}

WienerPath WienerPath::refine(std::mt19937_64& rng) const {
  WienerPath w;
  w.modes_ = modes_;
  w.steps_ = 2 * steps_;
  w.dchi_ = 0.5 * dchi_;
  w.inc_.resize(w.steps_ * static_cast<std::size_t>(modes_));
  std::normal_distribution<double> normal;
  const auto K = static_cast<std::size_t>(modes_);
  for (std::size_t s = 0; s < steps_; ++s)
    for (std::size_t k = 0; k < K; ++k) {
      const double dw = inc_[s * K + k];
      const double first = 0.5 * dw + 0.5 * std::sqrt(dchi_) * normal(rng);
      w.inc_[(2 * s) * K + k] = first;
      w.inc_[(2 * s + 1) * K + k] = dw - first;
    }
  return w;
}

std::vector<double> WienerPath::increment(std::size_t step) const {
  const auto K = static_cast<std::size_t>(modes_);
  return {inc_.begin() + static_cast<long>(step * K), inc_.begin() + static_cast<long>((step + 1) * K)};
}

// ---- stepping -----------------------------------------------------------

double yosida_eps(const StepOptions& opt, double dchi) { return std::max(opt.eps_min, opt.eps_c * dchi); }

namespace {

Eigen::VectorXd apply_yosida(const MonotoneGraph& g, double eps, const Eigen::VectorXd& u) {
  Eigen::VectorXd v(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) v[i] = g.yosida(eps, u[i]);
  return v;
}

std::string diag_message(const char* what, int it, double res, double target) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%s: %d iterations, residual %.3e (target %.3e)", what, it, res, target);
  return buf;
}

// Semismooth Newton on the graph parametrization theta = J + w, (J, w) on the graph: J = J_1(theta),
// w = Psi_1(theta), U = J + eps w. Crossing a vertical segment or a kink then changes the iterate by
// a bounded amount, unlike Newton in U where Psi_eps has slope 1/eps. The step equation is the
// optimality condition of the strictly convex energy E(U) = 1/2 r^T K^{-1} r + dchi sum_i M_i
// phi_eps(U_i), r = M U - M F; the Newton direction descends it, so E is the line-search merit.
// Full steps that halve the residual are taken directly.
StepInfo newton_solve(Eigen::VectorXd& U, const Eigen::VectorXd& MF, double dchi, double eps, const MonotoneGraph& g,
                      const Discretization& d, double target, int max_iter) {
  const Eigen::Index n = U.size();
  Eigen::VectorXd th(n);
  for (Eigen::Index i = 0; i < n; ++i) th[i] = g.resolvent(eps, U[i]) + g.yosida(eps, U[i]);
  // Nodal U and w of a parameter vector.
  auto unpack = [&](const Eigen::VectorXd& t, Eigen::VectorXd& u, Eigen::VectorXd& w) {
    u.resize(n);
    w.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double j = g.resolvent(1.0, t[i]);
      w[i] = t[i] - j;
      u[i] = j + eps * w[i];
    }
  };
  Eigen::VectorXd W;
  unpack(th, U, W);
  auto residual = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& w) { return Eigen::VectorXd(d.M.cwiseProduct(u) + dchi * (d.K * w) - MF); };
  Eigen::VectorXd G = residual(U, W);
  double r = G.lpNorm<Eigen::Infinity>();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  std::optional<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> kfac;
  bool analyzed = false;
  int it = 0;
  while (r > target) {
    if (it >= max_iter) throw NonConvergence(diag_message("spde newton", it, r, target));
    ++it;
    Eigen::VectorXd a(n), b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      b[i] = std::min(1.0, g.yosida_slope(1.0, th[i]));
      a[i] = 1.0 - (1.0 - eps) * b[i];
    }
    Eigen::SparseMatrix<double> J = dchi * (d.K * b.asDiagonal());
    for (Eigen::Index i = 0; i < n; ++i) J.coeffRef(i, i) += d.M[i] * a[i];
    J.makeCompressed();
    if (!analyzed) {
      lu.analyzePattern(J);
      analyzed = true;
    }
    lu.factorize(J);
    if (lu.info() != Eigen::Success) throw NonConvergence("spde newton: singular Jacobian");
    const Eigen::VectorXd delta = -lu.solve(G);
    Eigen::VectorXd tht = th + delta, Ut, Wt;
    unpack(tht, Ut, Wt);
    Eigen::VectorXd Gt = residual(Ut, Wt);
    if (Gt.lpNorm<Eigen::Infinity>() > 0.5 * r) {
      if (!kfac) {
        kfac.emplace(d.K);
        if (kfac->info() != Eigen::Success) throw NonConvergence("spde newton: stiffness factorization failed");
      }
      const Eigen::VectorXd kr0 = kfac->solve(Eigen::VectorXd(d.M.cwiseProduct(U) - MF));
      const double slope0 = kfac->solve(G).dot(d.M.cwiseProduct(a.cwiseProduct(delta)));
      // E(U(th + t delta)) - E(U), evaluated as differences to keep the roundoff relative to the step.
      auto dE = [&](const Eigen::VectorXd& u) {
        const Eigen::VectorXd dr = d.M.cwiseProduct(u - U);
        double e = dr.dot(kr0) + 0.5 * dr.dot(kfac->solve(dr));
        for (Eigen::Index i = 0; i < n; ++i) e += dchi * d.M[i] * (g.yosida_potential(eps, u[i]) - g.yosida_potential(eps, U[i]));
        return e;
      };
      double t = 1.0;
      while (dE(Ut) > 1e-4 * t * slope0 && t > 1e-10) {
        t *= 0.5;
        tht = th + t * delta;
        unpack(tht, Ut, Wt);
      }
      Gt = residual(Ut, Wt);
    }
    th = tht;
    U = Ut;
    G = Gt;
    r = G.lpNorm<Eigen::Infinity>();
  }
  return {it, r};
}

// L-scheme U <- (M + dchi L K)^{-1} (M F - dchi K (Psi(U) - L U)) with Anderson mixing.
StepInfo fixed_point_solve(Eigen::VectorXd& U, const Eigen::VectorXd& MF, double dchi, double eps, const MonotoneGraph& g,
                           const Discretization& d, double target, int max_iter, int depth) {
  const double L = g.lipschitz(eps);
  Eigen::SparseMatrix<double> A = dchi * L * d.K;
  for (Eigen::Index i = 0; i < U.size(); ++i) A.coeffRef(i, i) += d.M[i];
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw NonConvergence("spde fixed point: factorization failed");
  auto map = [&](const Eigen::VectorXd& u) { return Eigen::VectorXd(ldlt.solve(MF - dchi * (d.K * (apply_yosida(g, eps, u) - L * u)))); };
  auto residual = [&](const Eigen::VectorXd& u) {
    return (d.M.cwiseProduct(u) + dchi * (d.K * apply_yosida(g, eps, u)) - MF).lpNorm<Eigen::Infinity>();
  };
  std::vector<Eigen::VectorXd> dF, dG;
  Eigen::VectorXd f_prev, g_prev;
  double r = residual(U);
  int it = 0;
  while (r > target) {
    if (it >= max_iter) throw NonConvergence(diag_message("spde fixed point", it, r, target));
    ++it;
    const Eigen::VectorXd gx = map(U);
    const Eigen::VectorXd f = gx - U;
    if (f_prev.size()) {
      dF.push_back(f - f_prev);
      dG.push_back(gx - g_prev);
      if (static_cast<int>(dF.size()) > depth) {
        dF.erase(dF.begin());
        dG.erase(dG.begin());
      }
    }
    f_prev = f;
    g_prev = gx;
    Eigen::VectorXd next = gx;
    if (!dF.empty()) {
      Eigen::MatrixXd Fm(U.size(), static_cast<Eigen::Index>(dF.size())), Gm(U.size(), static_cast<Eigen::Index>(dG.size()));
      for (std::size_t k = 0; k < dF.size(); ++k) {
        Fm.col(static_cast<Eigen::Index>(k)) = dF[k];
        Gm.col(static_cast<Eigen::Index>(k)) = dG[k];
      }
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Fm);
      qr.setThreshold(1e-12);
      const Eigen::VectorXd gamma = qr.solve(f);
      if (gamma.allFinite()) next = gx - Gm * gamma;
    }
    const double rn = residual(next);
    if (!(rn <= 10 * r)) {
      // Mixing went astray: take the plain contraction step and restart the history.
      next = gx;
      dF.clear();
      dG.clear();
      r = residual(next);
    } else {
      r = rn;
    }
    U = next;
  }
  return {it, r};
}

}  // namespace

StepInfo step(SPDEState& s, double dchi, const MonotoneGraph& graph, const Discretization& d, const NoiseSpec* ns,
              const std::vector<double>* dbeta, const StepOptions& opt) {
  if (!(dchi > 0.0)) throw InvalidArgument("spde step: dchi must be positive");
  if (s.U.size() != static_cast<Eigen::Index>(d.unknowns())) throw InvalidArgument("spde step: state size mismatch");
  const double eps = yosida_eps(opt, dchi);
  if (!(eps > 0.0)) throw InvalidArgument("spde step: Yosida parameter must be positive");
  Eigen::VectorXd F = s.U;
  if (ns && dbeta) F += sample_noise(*ns, s.U, *dbeta);
  const Eigen::VectorXd MF = d.M.cwiseProduct(F);
  // Relative to the larger of the two balanced terms; dchi K Psi dominates on stiff plateaus.
  double k_norm = 0.0;
  for (Eigen::Index c = 0; c < d.K.outerSize(); ++c) {
    double row = 0.0;
    for (Eigen::SparseMatrix<double>::InnerIterator it(d.K, c); it; ++it) row += std::abs(it.value());
    k_norm = std::max(k_norm, row);
  }
  double psi_max = 0.0;
  for (Eigen::Index i = 0; i < F.size(); ++i) psi_max = std::max(psi_max, std::abs(graph.yosida(eps, F[i])));
  const double scale = std::max({MF.lpNorm<Eigen::Infinity>(), dchi * k_norm * psi_max, 1e-12 * d.M.maxCoeff()});
  const double target = opt.tol * scale;
  Eigen::VectorXd U = F;
  StepInfo info;
  if (opt.solver == InnerSolver::newton)
    info = newton_solve(U, MF, dchi, eps, graph, d, target, opt.max_iter > 0 ? opt.max_iter : 60);
  else
    info = fixed_point_solve(U, MF, dchi, eps, graph, d, target, opt.max_iter > 0 ? opt.max_iter : 20000, opt.anderson_depth);
  if (!U.allFinite()) throw NumericalError("spde step: non-finite state");
  s.U = std::move(U);
  s.chi += dchi;
  s.eps = eps;
  return info;
}

// ---- runs ---------------------------------------------------------------

namespace {

bool has_noise(const NoiseSpec& ns) {
  for (std::size_t k = 0; k < ns.nu.size(); ++k)
    if (ns.nu[k] * ns.l_e[k] != 0.0) return true;
  return false;
}

// Supercritical set: nodes whose resolvent state lies above c_u. For graphs with a vertical segment at
// c_u this excludes the O(eps) band U in (c_u, c_u + eps jump] that regularizes the critical set {U = c_u}.
void record(TrajectoryRecord& tr, const Discretization& d, const Eigen::VectorXd& U, double chi, const MonotoneGraph& g,
            double eps, double c_u) {
  tr.chi.push_back(chi);
  tr.l2.push_back(std::sqrt(d.inner(U, U)));
  tr.min.push_back(U.minCoeff());
  tr.max.push_back(U.maxCoeff());
  double m = 0.0;
  for (Eigen::Index i = 0; i < U.size(); ++i)
    if (g.resolvent(eps, U[i]) > c_u) m += d.M[i];
  tr.m.push_back(m);
}

// Steps the problem along `wiener` (or without noise) and calls `observe` after every step.
template <class Observer>
void simulate(const SpdeProblem& pb, const MonotoneGraph& g, const WienerPath* wiener, const StepOptions& opt,
              double dchi, std::size_t steps, SPDEState& s, TrajectoryRecord& tr, Observer&& observe) {
  const bool noisy = wiener && has_noise(pb.noise);
  for (std::size_t k = 0; k < steps; ++k) {
    std::vector<double> db;
    if (noisy) db = wiener->increment(k);
    const StepInfo info = step(s, dchi, g, pb.disc, noisy ? &pb.noise : nullptr, noisy ? &db : nullptr, opt);
    tr.max_inner_iterations = std::max(tr.max_inner_iterations, info.iterations);
    observe(k + 1, s);
  }
}

}  // namespace

TrajectoryRecord run(const SpdeProblem& pb, std::uint64_t seed, std::uint64_t path, const WienerPath* wiener,
                     Eigen::VectorXd* final_state) {
  if (pb.initial.size() != static_cast<Eigen::Index>(pb.disc.unknowns())) throw InvalidArgument("spde run: initial datum size mismatch");
  if (!(pb.dchi > 0.0)) throw InvalidArgument("spde run: dchi must be positive");
  const MonotoneGraph g = pb.graph.centered();
  WienerPath own;
  if (!wiener) {
    auto rng = path_stream(seed, path, 2);
    own = WienerPath::sample(pb.noise.modes(), pb.steps, pb.dchi, rng);
    wiener = &own;
  } else if (wiener->steps() != pb.steps || wiener->modes() != pb.noise.modes()) {
    throw InvalidArgument("spde run: Wiener path does not match the problem");
  }
  TrajectoryRecord tr;
  SPDEState s{pb.initial, 0.0, path, yosida_eps(pb.options, pb.dchi)};
  record(tr, pb.disc, s.U, 0.0, g, s.eps, pb.c_u);
  try {
    simulate(pb, g, wiener, pb.options, pb.dchi, pb.steps, s, tr,
             [&](std::size_t, const SPDEState& st) { record(tr, pb.disc, st.U, st.chi, g, s.eps, pb.c_u); });
  } catch (const NumericalError& e) {
    tr.converged = false;
    tr.failure = e.what();
  }
  tr.positivity_ok = *std::min_element(tr.min.begin(), tr.min.end()) >= -pb.positivity_tol;
  if (final_state) *final_state = s.U;
  return tr;
}

EnsembleStats ensemble_run(const SpdeProblem& pb, std::uint64_t seed, std::size_t paths) {
  EnsembleStats es;
  const std::size_t n = pb.steps + 1;
  std::vector<double> s_l2(n, 0.0), s_m(n, 0.0), s_m2(n, 0.0);
  es.min_u.assign(n, INFINITY);
  es.global_min = INFINITY;
  std::size_t ok = 0;
  for (std::size_t p = 0; p < paths; ++p) {
    TrajectoryRecord tr = run(pb, seed, p);
    if (!tr.converged) {
      ++es.failed;
    } else {
      ++ok;
      for (std::size_t k = 0; k < n; ++k) {
        s_l2[k] += tr.l2[k];
        s_m[k] += tr.m[k];
        s_m2[k] += tr.m[k] * tr.m[k];
        es.min_u[k] = std::min(es.min_u[k], tr.min[k]);
      }
      es.positivity = es.positivity && tr.positivity_ok;
    }
    for (double v : tr.min) es.global_min = std::min(es.global_min, v);
    if (es.chi.empty() && tr.converged) es.chi = tr.chi;
    es.paths.push_back(std::move(tr));
  }
  if (ok == 0) return es;
  for (std::size_t k = 0; k < n; ++k) {
    const double N = static_cast<double>(ok);
    es.mean_l2.push_back(s_l2[k] / N);
    es.mean_m.push_back(s_m[k] / N);
    const double var = ok > 1 ? std::max(0.0, (s_m2[k] - s_m[k] * s_m[k] / N) / (N - 1)) : 0.0;
    es.stderr_m.push_back(std::sqrt(var / N));
  }
  return es;
}

std::pair<double, double> spearman_decreasing(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (y.size() != n) throw InvalidArgument("spearman: size mismatch");
  if (n < 3) return {0.0, 1.0};
  auto ranks = [n](const std::vector<double>& v) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, 1.0};
  const double rho = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  if (rho <= -1.0) return {rho, 0.0};
  if (rho >= 1.0) return {rho, 1.0};
  const double dof = static_cast<double>(n - 2);
  const double t = rho * std::sqrt(dof / (1.0 - rho * rho));
  return {rho, boost::math::cdf(boost::math::students_t(dof), t)};
}

SocStatistics soc_statistics(const EnsembleStats& ens, double burn_in_fraction, double alpha) {
  SocStatistics st;
  st.chi = ens.chi;
  st.m_bar = ens.mean_m;
  const std::size_t n = st.m_bar.size();
  if (n == 0) {
    st.inconclusive = true;
    return st;
  }
  const double m0 = st.m_bar.front();
  if (*std::max_element(st.m_bar.begin(), st.m_bar.end()) == 0.0) {
    st.absorption_flag = true;
    st.trend_p = 0.0;
    return st;
  }
  const auto b = static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(n)));
  if (n - b < 4) {
    st.inconclusive = true;
    return st;
  }
  const std::vector<double> x(st.chi.begin() + static_cast<long>(b), st.chi.end());
  const std::vector<double> y(st.m_bar.begin() + static_cast<long>(b), st.m_bar.end());
  const double xm = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double ym = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - xm) * (y[i] - ym);
    sxx += (x[i] - xm) * (x[i] - xm);
  }
  st.tail_slope = sxx > 0 ? sxy / sxx : 0.0;
  const bool absorbed_window = *std::max_element(y.begin(), y.end()) == 0.0;
  if (absorbed_window) {
    // Already absorbed before the window: no trend left to test.
    st.trend_rho = 0.0;
    st.trend_p = 0.0;
  } else {
    const auto [rho, p] = spearman_decreasing(x, y);
    st.trend_rho = rho;
    st.trend_p = p;
  }
  st.absorption_flag = st.trend_p < alpha && st.m_bar.back() < 0.1 * m0;
  return st;
}

RefinementStudy refinement_study(const SpdeProblem& pb, std::uint64_t seed, std::uint64_t path, int levels) {
  if (levels < 2) throw InvalidArgument("refinement_study: need at least 2 levels");
  const MonotoneGraph g = pb.graph.centered();
  auto rng = path_stream(seed, path, 2);
  std::vector<WienerPath> wp{WienerPath::sample(pb.noise.modes(), pb.steps, pb.dchi, rng)};
  auto bridge = path_stream(seed, path, 3);
  for (int l = 1; l <= levels; ++l) wp.push_back(wp.back().refine(bridge));

  auto coarse_states = [&](int level, const StepOptions& opt) {
    const std::size_t factor = std::size_t{1} << level;
    std::vector<Eigen::VectorXd> out{pb.initial};
    SPDEState s{pb.initial, 0.0, path, 0.0};
    TrajectoryRecord tr;
    simulate(pb, g, &wp[static_cast<std::size_t>(level)], opt, pb.dchi / static_cast<double>(factor), pb.steps * factor, s, tr,
             [&](std::size_t k, const SPDEState& st) {
               if (k % factor == 0) out.push_back(st.U);
             });
    return out;
  };
  auto distance = [&](const std::vector<Eigen::VectorXd>& a, const std::vector<Eigen::VectorXd>& b) {
    double w = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const Eigen::VectorXd e = a[k] - b[k];
      w = std::max(w, std::sqrt(pb.disc.inner(e, e)));
    }
    return w;
  };

  StepOptions newton = pb.options;
  newton.solver = InnerSolver::newton;
  StepOptions fixed = pb.options;
  fixed.solver = InnerSolver::fixed_point;
  const auto ref = coarse_states(levels, newton);
  RefinementStudy rs;
  std::vector<Eigen::VectorXd> second_finest;
  for (int l = 0; l < levels; ++l) {
    const auto st = coarse_states(l, newton);
    rs.dchi.push_back(pb.dchi / static_cast<double>(std::size_t{1} << l));
    rs.error.push_back(distance(st, ref));
    if (l == levels - 1) second_finest = st;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (std::size_t l = 0; l < rs.error.size(); ++l) {
    if (!(rs.error[l] > 0.0)) continue;
    const double x = std::log(rs.dchi[l]), y = std::log(rs.error[l]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++cnt;
  }
  rs.order = cnt >= 2 ? (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx) : 0.0;
  rs.solver_gap = distance(coarse_states(levels - 1, fixed), second_finest);
  return rs;
}

}  // namespace anholo::spde
