#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "anholo/dmetric.hpp"

namespace anholo::spde {

// ---- drift graphs -------------------------------------------------------

enum class GraphKind { stefan, sign_power, heaviside_soc, linear };
std::string to_string(GraphKind k);

struct Interval {
  double lo = 0.0, hi = 0.0;
};

// Maximal monotone graph Psi: R -> 2^R. Stefan, HeavisideSOC and linear graphs are
// piecewise linear with at most one vertical segment; SignPower is rho |r|^alpha sign r
// with alpha in [0, 1] (alpha = 0 is the sign graph with Psi(0) = [-rho, rho]).
// HeavisideSOC is Hev(r - c_u) + kappa (r - c_u) with Hev(0) = [0, 1].
class MonotoneGraph {
 public:
  static MonotoneGraph stefan(double chi0, double rho, double alpha1, double alpha2);
  static MonotoneGraph sign_power(double rho, double alpha);
  static MonotoneGraph heaviside_soc(double kappa, double c_u);
  static MonotoneGraph linear(double slope);

  GraphKind kind() const { return kind_; }
  // Vertical shift making 0 an element of Psi(0).
  MonotoneGraph centered() const;
  double shift() const { return shift_; }

  Interval values(double r) const;
  // J_eps(r): the unique s with s + eps Psi(s) containing r.
  double resolvent(double eps, double r) const;
  // Psi_eps(r) = (r - J_eps(r)) / eps and its derivative (one-sided at kinks).
  double yosida(double eps, double r) const;
  double yosida_slope(double eps, double r) const;
  // Convex primitive Phi with Phi' in Psi, and its Moreau envelope (r - J)^2 / (2 eps) + Phi(J),
  // whose derivative is Psi_eps.
  double potential(double s) const;
  double yosida_potential(double eps, double r) const;
  // Upper bound of yosida_slope over R.
  double lipschitz(double eps) const;

  struct Growth {
    double C = 0.0, a = 0.0;  // sup |Psi(r)| <= C (1 + |r|^a)
  };
  Growth growth() const;
  // Level separating sub- and supercritical states (c_u for SOC, chi0 for Stefan, else 0).
  double critical_level() const;
  std::string describe() const;

 private:
  GraphKind kind_ = GraphKind::linear;
  // Piecewise-linear kinds: slope a1 below x0, a2 above, vertical segment of height jump at x0.
  double x0_ = 0.0, a1_ = 0.0, a2_ = 0.0, jump_ = 0.0;
  // SignPower parameters.
  double rho_ = 0.0, alpha_ = 1.0;
  double shift_ = 0.0;
};

// ---- spatial domain and Laplace-Beltrami operator -----------------------

// Regular grid on a 1-, 2- or 3-d box with Dirichlet boundary and a Riemannian metric per node.
struct SpdeDomain {
  int dim = 2;
  std::array<std::size_t, 3> count{1, 1, 1};
  std::array<double, 3> lo{0, 0, 0}, hi{1, 1, 1};
  Field sqrt_g;                          // sqrt(det g) per node
  std::vector<std::array<double, 6>> a;  // sqrt(g) g^{ij} packed as 00 01 02 11 12 22

  using LowerMetric = std::function<std::array<double, 6>(const std::array<double, 3>&)>;
  static SpdeDomain from_metric(int dim, std::array<double, 3> lo, std::array<double, 3> hi,
                                std::array<std::size_t, 3> count, const LowerMetric& g);
  static SpdeDomain flat(int dim, std::array<double, 3> lo, std::array<double, 3> hi, std::array<std::size_t, 3> count);
  // g = e^{psi} delta.
  static SpdeDomain conformal(int dim, std::array<double, 3> lo, std::array<double, 3> hi,
                              std::array<std::size_t, 3> count,
                              const std::function<double(const std::array<double, 3>&)>& psi);
  // h-block g_ij of a d-metric on the (x1, x2) slice at v-indices (k3, k4).
  // Rejects Lorentz-flagged or indefinite input.
  static SpdeDomain from_h_block(const DMetric& m, std::size_t k3 = 0, std::size_t k4 = 0);

  std::size_t size() const { return count[0] * count[1] * count[2]; }
  double spacing(int axis) const;
  double cell_volume() const;
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const { return (i * count[1] + j) * count[2] + k; }
  std::array<std::size_t, 3> multi_index(std::size_t p) const;
  std::array<double, 3> coords(std::size_t p) const;
  bool on_boundary(std::size_t p) const;
};

// K u approximates -Delta u * sqrt(g) dV and M = diag(sqrt(g) dV) on interior nodes,
// so -Delta ~ M^{-1} K. Conservative second-order stencil; symmetric K.
struct Discretization {
  SpdeDomain domain;
  std::vector<std::size_t> interior;  // node index of each unknown
  std::vector<long> slot;             // unknown index of each node, -1 on the boundary
  Eigen::SparseMatrix<double> K;
  Eigen::VectorXd M;

  std::size_t unknowns() const { return interior.size(); }
  double inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const { return (u.array() * v.array() * M.array()).sum(); }
  // Interior values of a node field, and back (boundary set to zero).
  Eigen::VectorXd restrict_field(const Field& f) const;
  Field extend(const Eigen::VectorXd& u) const;
};
Discretization discretize(const SpdeDomain& domain);

struct EigenPairs {
  Eigen::VectorXd lambda;   // ascending
  Eigen::MatrixXd vectors;  // unknowns x K, M-orthonormal
  double max_residual = 0.0;         // max_k |K e - lambda M e|_M^{-1} / lambda_k
  double orthonormality_error = 0.0;  // max |E^T M E - I|
};
// K lowest eigenpairs of -Delta. Dense solve up to dense_limit unknowns, block inverse
// iteration with Rayleigh-Ritz above it.
EigenPairs eigensolve_laplacian(const Discretization& d, int K, std::size_t dense_limit = 2500);
EigenPairs eigensolve_laplacian(const DMetric& m, int K, std::size_t k3 = 0, std::size_t k4 = 0);

// ---- noise --------------------------------------------------------------

struct NoiseSpec {
  EigenPairs basis;
  std::vector<double> nu;
  Eigen::VectorXd l;        // reference element (interior values)
  std::vector<double> l_e;  // <l, e_k>
  double trace_sum = 0.0;   // sum nu_k^2 lambda_k^2 over the truncation

  int modes() const { return static_cast<int>(nu.size()); }
};
// nu defaults to lambda_k^{-3/2} times nu_scale; l defaults to e_1.
// Rejects negative nu and sequences with nu_k lambda_k increasing.
NoiseSpec make_noise(const Discretization& d, EigenPairs basis, std::optional<std::vector<double>> nu = std::nullopt,
                     std::optional<Eigen::VectorXd> l = std::nullopt, double nu_scale = 1.0);

// sum_k nu_k U <l, e_k> e_k dbeta_k (pointwise product with U).
Eigen::VectorXd sample_noise(const NoiseSpec& ns, const Eigen::VectorXd& U, const std::vector<double>& dbeta);
Eigen::VectorXd sample_noise(const NoiseSpec& ns, const Eigen::VectorXd& U, double dchi, std::mt19937_64& rng);

// Brownian increments for K modes over a uniform step sequence.
class WienerPath {
 public:
  static WienerPath sample(int modes, std::size_t steps, double dchi, std::mt19937_64& rng);
  // Halves the step by Brownian-bridge midpoints; the coarse increments are preserved exactly.
  WienerPath refine(std::mt19937_64& rng) const;

  std::size_t steps() const { return steps_; }
  int modes() const { return modes_; }
  double dchi() const { return dchi_; }
  std::vector<double> increment(std::size_t step) const;

 private:
  int modes_ = 0;
  std::size_t steps_ = 0;
  double dchi_ = 0.0;
  std::vector<double> inc_;  // steps x modes
};

// ---- time stepping ------------------------------------------------------

enum class InnerSolver { newton, fixed_point };

struct StepOptions {
  double eps_min = 1e-4;  // Yosida parameter eps = max(eps_min, eps_c * dchi)
  double eps_c = 1.0;
  InnerSolver solver = InnerSolver::newton;
  double tol = 1e-11;     // relative residual tolerance
  int max_iter = 0;       // 0: 60 for Newton, 20000 for the fixed point
  int anderson_depth = 6;
};

double yosida_eps(const StepOptions& opt, double dchi);

struct SPDEState {
  Eigen::VectorXd U;
  double chi = 0.0;
  std::uint64_t path = 0;
  double eps = 0.0;
};

struct StepInfo {
  int iterations = 0;
  double residual = 0.0;
};

// One implicit step: U+ + dchi M^{-1} K Psi_eps(U+) = U + noise. `graph` must be centered.
StepInfo step(SPDEState& s, double dchi, const MonotoneGraph& graph, const Discretization& d,
              const NoiseSpec* ns, const std::vector<double>* dbeta, const StepOptions& opt);

struct SpdeProblem {
  Discretization disc;
  MonotoneGraph graph;  // raw; centered internally
  NoiseSpec noise;      // nu all zero: deterministic
  Eigen::VectorXd initial;
  double dchi = 1e-3;
  std::size_t steps = 100;
  double c_u = 0.0;     // level of the supercritical measure |{J_eps(U) > c_u}|
  double positivity_tol = 1e-8;
  StepOptions options;
};

struct TrajectoryRecord {
  std::vector<double> chi, l2, min, max, m;
  bool positivity_ok = true;
  bool converged = true;
  std::string failure;
  int max_inner_iterations = 0;
};

// One path; the Wiener path is drawn from (seed, path) unless supplied.
TrajectoryRecord run(const SpdeProblem& pb, std::uint64_t seed, std::uint64_t path,
                     const WienerPath* wiener = nullptr, Eigen::VectorXd* final_state = nullptr);

struct EnsembleStats {
  std::vector<double> chi, mean_l2, mean_m, stderr_m, min_u;
  std::vector<TrajectoryRecord> paths;
  std::size_t failed = 0;
  bool positivity = true;  // every completed path kept min U >= -positivity_tol
  double global_min = 0.0;
};
EnsembleStats ensemble_run(const SpdeProblem& pb, std::uint64_t seed, std::size_t paths);

struct SocStatistics {
  std::vector<double> chi, m_bar;
  bool absorption_flag = false;
  bool inconclusive = false;
  double trend_rho = 0.0;  // Spearman correlation of m_bar with chi after burn-in
  double trend_p = 1.0;    // one-sided p-value for a decreasing trend
  double tail_slope = 0.0;  // least-squares slope of m_bar over the post-burn-in window
};
SocStatistics soc_statistics(const EnsembleStats& ens, double burn_in_fraction = 0.1, double alpha = 0.05);

// Spearman rank correlation (average ranks for ties) and one-sided p-value for rho < 0.
std::pair<double, double> spearman_decreasing(const std::vector<double>& x, const std::vector<double>& y);

// Self-convergence on one Wiener path refined by Brownian bridges: errors of levels
// 0..levels-1 against the finest level, all compared at the coarse output times.
struct RefinementStudy {
  std::vector<double> dchi, error;
  double order = 0.0;       // least-squares slope of log error vs log dchi
  double solver_gap = 0.0;  // Newton vs fixed point at the second-finest level
};
RefinementStudy refinement_study(const SpdeProblem& pb, std::uint64_t seed, std::uint64_t path, int levels);

}  // namespace anholo::spde
