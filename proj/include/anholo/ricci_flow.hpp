#pragma once

#include <Eigen/Sparse>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "anholo/ansatz.hpp"
#include "anholo/dmetric.hpp"

namespace anholo::flow {

// ---- ansatz v-block flow ------------------------------------------------

// phi(chi) from the generating-data samples: linear in chi between samples, constant outside.
using PhiFamily = std::function<Field(double chi)>;
PhiFamily phi_family(const ansatz::GeneratingData& gd);

// One RK4 step of dh3/dchi = -h3 phi*/h4, dh4/dchi = -h4 phi*/h3 per node, phi* taken from the
// family at the stage times. w is rebuilt from the auxiliary potential ln|h4*/sqrt|h3 h4|| of the
// updated v-block and n by re-integrating with the generating data's integration functions;
// psi is unchanged. Throws InvalidArgument where |phi*| < eps_phi and NumericalError when h3 or
// h4 changes sign (the step is rejected).
ansatz::AnsatzMetric flow_step_ansatz(const ansatz::AnsatzMetric& am, const ansatz::GeneratingData& gd, double chi,
                                      double dchi);

struct AnsatzFlowRecord {
  std::vector<double> chi;
  std::vector<ansatz::AnsatzMetric> metrics;
  std::vector<double> mixed;  // max |R_ia|, |R_ai| per stored step (canonical d-connection)
};
// Starts from the generated metric of the first sample at chi = gd.chi.front().
AnsatzFlowRecord run_ansatz_flow(const ansatz::GeneratingData& gd, double dchi, std::size_t steps,
                                 bool with_mixed = true);

// ---- general flow with fixed N ------------------------------------------

struct FlowState {
  DMetric metric;
  Field f_hat;  // may be empty until f_evolution fills it
  double tau_hat = 1.0;
  double chi = 0.0;
};

// g and h blocks at (chi, u); N is ignored.
using BoundaryData = std::function<MetricSample(double chi, const std::array<double, 4>& u)>;

struct GeneralFlowOptions {
  double lambda = 0.0;      // dg/dchi = -2 (Ric - lambda g) on both blocks
  double tol_mixed = 1e-6;  // mixed Ricci above this at entry records a warning
  // Dirichlet data for nodes on the end points of Dirichlet axes. Without it those nodes follow the
  // flow with one-sided stencils.
  BoundaryData boundary;
  // Kreiss-Oliger coefficient eps: adds (-1)^{r+1} eps delta^{2r} / (4^r h^2) per axis to every metric
  // rate, r = fd_order / 2 + 1. Damps the odd-even modes that composed first-derivative stencils leave
  // undamped; O(h^{2r-2}) on smooth data, so the stencil order is kept.
  double dissipation = 0.2;
  // Block-wise DeTurck term: adds D_i W_j + D_j W_i per block with W^k = g^ij (G^k_ij - G~^k_ij),
  // G and G~ the block Christoffel symbols of the current and reference metric (h-derivatives
  // N-elongated). Makes the flow strictly parabolic; the result differs from the plain flow by a
  // diffeomorphism for N = 0 block products. run_general_flow uses the initial metric as reference
  // when none is set.
  bool deturck = false;
  std::shared_ptr<const DMetric> deturck_reference;
};

// The DeTurck rate above for the packed (11, 12, 22) components of each block.
struct BlockRates {
  std::array<Field, 3> g, h;
};
BlockRates deturck_term(const DMetric& m, const DMetric& reference);

// The dissipation term above for one field; zero within r nodes of a Dirichlet end point.
Field kreiss_oliger(const GridChart& c, const Field& u, double eps);

// Nodes at either end of a Dirichlet axis.
std::vector<std::size_t> dirichlet_edge_nodes(const GridChart& c);

struct StepDiagnostics {
  double mixed = 0.0;
  std::string warning;
};

// RK4 step of dg_ij/dchi = -2 (R_ij - lambda g_ij), dh_ab/dchi = -2 (R_ab - lambda h_ab) with N fixed
// and tau_hat decreased by dchi. Throws SingularMetric when a block degenerates at any stage.
FlowState flow_step_general(const FlowState& fs, double dchi, const GeneralFlowOptions& opt = {},
                            StepDiagnostics* diag = nullptr);

// Snapshots at every accepted step, chi_k = chi0 + k dchi, tau_k = tau0 - (chi_k - chi0).
struct FlowHistory {
  std::vector<double> chi, tau;
  std::vector<DMetric> metrics;
  std::vector<Field> f;  // filled by f_evolution
  std::vector<double> mixed;
  std::vector<std::string> warnings;
};
FlowHistory run_general_flow(const DMetric& m0, double tau0, double dchi, std::size_t steps,
                             const GeneralFlowOptions& opt = {}, double chi0 = 0.0);

// ---- potential f ----------------------------------------------------------

// curvature: reaction -(R + S) from the curvature of each snapshot.
// volume_rate: the reaction over [chi_k, chi_k+1] is the pointwise volume ratio dV_k+1 / dV_k, i.e.
// -(R + S) integrated along the computed metric path, which keeps int e^{-f} dV exact under the
// reaction when the metric path also carries boundary data, dissipation or the DeTurck term.
enum class ReactionKind { curvature, volume_rate };

struct FEvolutionOptions {
  // Adds +n/tau to df/dchi (the variant that keeps int (4 pi tau)^{-n} e^{-f} dV constant).
  bool tau_term = false;
  // Zero normal derivative of omega at the end points of Dirichlet axes (no flux through the edge).
  bool zero_normal_flux = true;
  ReactionKind reaction = ReactionKind::curvature;
};

// omega = e^{-f} solves the conjugate equation d(omega)/d(-chi) = Lap omega - (R + S) omega
// (+ n/tau omega with tau_term) backwards from omega(X) = e^{-f_final}, so that f = -ln omega solves
// df/dchi = -Lap f + |Df|^2 - R - S (+ n/tau). Strang splitting: exact reaction half steps around
// a Crank-Nicolson diffusion step. Fills hist.f; throws NumericalError if omega <= 0 anywhere.
void f_evolution(FlowHistory& hist, const Field& f_final, const FEvolutionOptions& opt = {});

// Sparse matrix of the canonical d-Laplacian g^{bc} (e_c e_b - G^a_{bc} e_a) over pure h and pure v
// frame pairs, built from the chart stencils (matches the field-based Hessians of functionals).
// zero_normal_flux drops the derivative rows at the end points of Dirichlet axes.
Eigen::SparseMatrix<double> d_laplacian_matrix(const DMetric& m, bool zero_normal_flux = false);

// ---- monotonicity -------------------------------------------------------

struct MonotonicityReport {
  std::vector<double> chi, tau, F, W, F_rate, W_rate, sigma, mass, mu_mass;
  std::vector<double> dF_fd, dW_fd;  // centred differences, NaN at the end points
  double min_forward_dF = 0.0;        // min over consecutive snapshots of (F_{k+1} - F_k)/dchi
  std::size_t mid = 0;
  double mid_mismatch_F = 0.0;  // |dF_fd - F_rate| / |F_rate| at mid
  double mid_mismatch_W = 0.0;
  double mid_mismatch_sigma = 0.0;  // |sigma - tau^3 dW_fd| / sigma at mid
  double mass_drift = 0.0;     // max relative deviation of int e^{-f} dV from its initial value
  double mu_mass_drift = 0.0;  // same for int mu dV
  double min_sigma = 0.0;
  double max_entropy_identity = 0.0;  // max |S + W|
  bool monotone = false;       // min_forward_dF >= -tol_mono
};
// Needs at least 3 snapshots with f filled.
MonotonicityReport monotonicity_report(const FlowHistory& hist, double tol_mono = 1e-6);

}  // namespace anholo::flow
