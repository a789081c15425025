#pragma once

#include <array>
#include <cstddef>
#include <functional>

#include "anholo/grid.hpp"

namespace anholo {

enum class Signature { riemannian, lorentz };

// Distinguished metric g = g_ij dx^i dx^j + h_ab e^a e^b with e^a = dy^a + N^a_i dx^i.
// Symmetric blocks are stored once: g[0]=g11, g[1]=g12, g[2]=g22 (same for h).
// n[2*a + i] holds N^a_i with a, i in {0, 1} (a=0 is y3).
struct DMetric {
  GridChart chart;
  std::array<Field, 3> g;
  std::array<Field, 3> h;
  std::array<Field, 4> n;
  Signature signature = Signature::riemannian;
  double nondegeneracy = 1e-12;

  // Throws InvalidArgument for size/finiteness problems, SingularMetric for
  // degenerate or wrongly signed blocks.
  void validate() const;

  static DMetric zeros(const GridChart& chart);
  DMetric with_values(const std::array<Field, 3>& g_new, const std::array<Field, 3>& h_new) const;
};

// Pointwise metric data used to sample a DMetric from closed-form expressions.
struct MetricSample {
  std::array<double, 3> g{1.0, 0.0, 1.0};
  std::array<double, 3> h{1.0, 0.0, 1.0};
  std::array<double, 4> n{};  // N^a_i at [2*a + i]
};

DMetric sample_metric(const GridChart& chart,
                      const std::function<MetricSample(const std::array<double, 4>&)>& fn,
                      Signature sig = Signature::riemannian);

using Mat2 = std::array<std::array<double, 2>, 2>;

// Values and partial coordinate derivatives of the metric fields at one node.
struct MetricJet {
  Mat2 g{}, h{}, N{};                    // N[a][i]
  std::array<Mat2, 4> dg{}, dh{}, dN{};  // partial along axis mu
  Mat2 gi{}, hi{};                       // inverses
};

MetricJet metric_jet(const DMetric& m, std::size_t p);

// Connection coefficients in the N-adapted frame, D_{e_c} e_b = G^a_{bc} e_a,
// stored at index a*16 + b*4 + c. Frame indices 0,1 are horizontal, 2,3 vertical.
using FrameCoeffs = std::array<double, 64>;
inline std::size_t gidx(int a, int b, int c) {
  return static_cast<std::size_t>(a * 16 + b * 4 + c);
}

// Frame derivatives e_mu F = d_mu F - N^a_mu d_a F (mu horizontal) from partials.
std::array<double, 4> elongate(const std::array<double, 4>& partials, const Mat2& N);

// [e_b, e_c] = W^a_{bc} e_a.
FrameCoeffs frame_commutators(const MetricJet& j);
FrameCoeffs canonical_coeffs(const MetricJet& j);
FrameCoeffs levi_civita_coeffs(const MetricJet& j);

double det2(const Mat2& m);
Mat2 inverse2(const Mat2& m);

}  // namespace anholo
