#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "anholo/dmetric.hpp"

namespace anholo::ansatz {

// Chart axes are (x1, x2, t, y4); every ansatz field is constant along y4.
struct GeneratingData {
  GridChart chart;
  std::vector<double> chi;      // flow-parameter samples
  std::vector<Field> phi;       // phi(x1, x2, t) per sample
  double lambda = 0.0;
  Field h4_0;                   // integration function of (x1, x2)
  std::array<Field, 2> n1, n2;  // integration functions of (x1, x2)
  Field psi_boundary;           // Dirichlet data for psi (only edge values are read)
  double eps_phi = 1e-8;
  int eps3 = 1, eps4 = 1;       // v-block sign flags

  // lambda != 0, |phi*| >= eps_phi everywhere, sizes consistent.
  void validate() const;
};

GeneratingData make_generating_data(const GridChart& chart, std::vector<Field> phi, double lambda,
                                    std::vector<double> chi = {0.0});

struct AnsatzMetric {
  GridChart chart;
  Field psi, h3, h4;
  std::array<Field, 2> w, n;
  int eps3 = 1, eps4 = 1;

  // g = e^psi delta, h = diag(eps3 h3, eps4 h4), N^3_i = w_i, N^4_i = n_i.
  DMetric to_dmetric() const;
  // Mixed-index Einstein source this family solves: diag[l, l, 0, 0], l = eps3 lambda
  // (the v-block Ricci R^3_3 = R^4_4 flips sign with eps3 only).
  static std::array<double, 4> source(double lambda, int eps3);
};

// Dirichlet problem for the 2-d Laplacian in (x1, x2); boundary values are
// read from the edges of `boundary` (a chart field). Result is broadcast over t, y4.
// The 5-point residual must stay below tol_lap * max(1, (2/hx^2 + 2/hy^2) max|psi|).
Field solve_psi(const GridChart& chart, const Field& boundary, double tol_lap = 1e-10);
// max |5-point Laplacian| over interior (x1, x2) nodes.
double five_point_residual(const GridChart& chart, const Field& psi);

Field phi_star(const GridChart& chart, const Field& phi);
Field build_h4(const GridChart& chart, const Field& phi, double lambda, const Field& h4_0);
Field build_h3(const GridChart& chart, const Field& phi, double lambda, const Field& h4, double eps_phi = 1e-8);
// w_i = d_i phi / phi* (the sign that makes R_3i vanish with e^3 = dt + w_i dx^i).
std::array<Field, 2> build_w(const GridChart& chart, const Field& phi, double eps_phi = 1e-8);
// n_i = n1_i + n2_i * int_{t_min}^{t} |h3|^{1/2} / |h4|^{3/2} dt (cumulative trapezoid),
// the first integral of n** + gamma n* = 0 with gamma = (ln |h4|^{3/2} / |h3|^{1/2})*,
// which is what R_4i = 0 requires for the canonical d-connection.
std::array<Field, 2> build_n(const GridChart& chart, const Field& h3, const Field& h4,
                             const std::array<Field, 2>& n1, const std::array<Field, 2>& n2);

AnsatzMetric assemble(const GridChart& chart, Field psi, Field h3, Field h4, std::array<Field, 2> w,
                      std::array<Field, 2> n, int eps3 = 1, int eps4 = 1);

// Full construction for sample m of the generating data.
AnsatzMetric generate(const GeneratingData& gd, std::size_t sample, double tol_lap = 1e-10);

struct ResidualReport {
  double eq1 = 0, eq2 = -1, eq3 = 0, eq4 = 0, auxphi = 0, ep2a = 0;  // eq2 < 0: not evaluated
  std::array<double, 4> lc{};
  double einstein = 0;
  double mixed_ia = 0, mixed_ai = 0;
};

// Back-substitution residuals, each evaluated with chart finite differences
// independent of the closed forms used to build the metric.
ResidualReport residual_system(const AnsatzMetric& am, const Field& phi, double lambda, bool with_einstein = true);

// Flow equation residual over a trajectory: centred chi-differences of h3, h4
// at interior samples against -h3 phi*/h4 and -h4 phi*/h3.
double eq2_residual(const std::vector<AnsatzMetric>& traj, const std::vector<double>& chi,
                    const std::vector<Field>& phi_star_per_sample);

struct PhiNoise {
  double amplitude = 0.0;
  double correlation_time = 1.0;
  int modes = 4;
};

// phi(., chi_m) = phi0 + sum_k X_k(chi_m) c_k(x1, x2) with stationary OU
// coefficients X_k and low cosine modes c_k; t-independent so phi* is unchanged.
std::vector<Field> sample_random_phi(const GridChart& chart, const Field& phi0, const PhiNoise& noise,
                                     std::uint64_t seed, std::uint64_t path, const std::vector<double>& chi,
                                     double eps_phi = 1e-8, int max_attempts = 20);

}  // namespace anholo::ansatz
