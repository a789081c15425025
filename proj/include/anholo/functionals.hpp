#pragma once

#include <array>
#include <string>

#include "anholo/connection.hpp"
#include "anholo/curvature.hpp"
#include "anholo/dmetric.hpp"

namespace anholo::functionals {

// Half dimension n of the 2n = 4 dimensional total space; mu = (4 pi tau)^{-n} e^{-f}.
inline constexpr int kHalfDim = 2;

// Pointwise ingredients shared by all functionals. Symmetric 2x2 blocks are packed (11, 12, 22).
struct Ingredients {
  GridChart chart;
  ConnectionKind kind = ConnectionKind::canonical;
  Field f;
  Field dv;                  // quadrature weight * sqrt|det g| * sqrt|det h|
  Field R, S;                // h- and v-scalar curvature
  Field grad_h, grad_v;      // |hDf|^2, |vDf|^2 with N-elongated h-derivatives
  Field lap_h, lap_v;        // g^ij D_i D_j f, h^ab D_a D_b f
  std::array<Field, 3> ric_h, ric_v, hess_h, hess_v;
  std::array<Field, 3> g, h, g_inv, h_inv;
};

// Throws SingularMetric for degenerate blocks, InvalidArgument for size mismatch or non-finite f.
Ingredients ingredients(const DMetric& m, const Field& f, ConnectionKind kind = ConnectionKind::canonical);

// |T|^2 = T_ij T_kl G^ik G^jl for packed symmetric T and inverse metric G at node p.
double sym_norm2(const std::array<Field, 3>& T, const std::array<Field, 3>& G, std::size_t p);

double F_functional(const Ingredients& in);
double F_functional(const DMetric& m, const Field& f);

// W = int [tau (R + S + |Df|^2) + f - 2n] mu dV.
double W_functional(const Ingredients& in, double tau);
double W_functional(const DMetric& m, const Field& f, double tau);

// log int (4 pi tau)^{-n} e^{-f} dV, evaluated with a shift so large |f| does not overflow.
double log_mu_mass(const DMetric& m, const Field& f, double tau);
// f + log_mu_mass, so that int mu dV = 1.
Field normalize_f(const Field& f, double tau, const DMetric& m);
// int e^{-f} dV.
double weighted_volume(const DMetric& m, const Field& f);

// Monotonicity integrands 2 int [|R_ij + D_i D_j f|^2 + |R_ab + D_a D_b f|^2] e^{-f} dV and
// 2 int tau [|R_ij + D_i D_j f - g_ij/(2 tau)|^2 + |R_ab + D_a D_b f - h_ab/(2 tau)|^2] mu dV.
double F_rate_integrand(const Ingredients& in);
double W_rate_integrand(const Ingredients& in, double tau);

// Variations: delta g_ij = v_h, delta h_ab = v_v, delta f = f_h + f_v.
struct Variation {
  std::array<Field, 3> v_h, v_v;
  Field f_h, f_v;
};

// First variation of F split into the part linear in (v_h, f_h) and the part linear in (v_v, f_v):
//   h: -v^ij (R_ij + D_i D_j f) + (tr_g v_h / 2)(2 hLap f - |hDf|^2 + R + S + |vDf|^2)
//      - f_h (2 Lap f - |Df|^2 + R + S)
//   v: the same with h and v exchanged,
// both weighted by e^{-f} dV. Exact for N = 0 block-product base points on charts without boundary.
struct VariationSplit {
  double h = 0.0, v = 0.0;
  double total() const { return h + v; }
};
VariationSplit first_variation_split(const Ingredients& in, const Variation& var);
double first_variation(const DMetric& m, const Field& f, const Variation& var);

struct FunctionalReport {
  double F = 0.0, W = 0.0, E = 0.0, S_entropy = 0.0, sigma = 0.0, Z_log = 0.0;
  ConnectionKind connection = ConnectionKind::canonical;
};

// <E> = -tau^2 int (R + S + |Df|^2 - n/tau) mu dV, S = -W,
// sigma = 2 tau^4 int [|R_ij + D_i D_j f - g_ij/(2 tau)|^2 + (v-block)] mu dV, log Z = int (n - f) mu dV.
FunctionalReport thermodynamics(const Ingredients& in, double tau);
FunctionalReport thermodynamics(const DMetric& m, const Field& f, double tau,
                                ConnectionKind kind = ConnectionKind::canonical);

enum class Verdict { more, less, equivalent };
const char* to_string(Verdict v);

struct ConnectionComparison {
  double S_canonical = 0.0, S_levi_civita = 0.0;
  Verdict verdict = Verdict::equivalent;
};

// Entropy with canonical and Levi-Civita curvature. The canonical configuration is "more" convenient
// when its entropy is lower by more than tol_S.
ConnectionComparison compare_connections(const DMetric& m, const Field& f, double tau, double tol_S = 1e-8);

}  // namespace anholo::functionals
