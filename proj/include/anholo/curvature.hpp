#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "anholo/connection.hpp"

namespace anholo {

// Frame Ricci tensor Ric_{bd} at one node, index b*4 + d.
using Ricci4 = std::array<double, 16>;

// Node-by-node curvature evaluation. Connection coefficients are computed per
// slab of constant x1 index and kept in a small LRU cache, so memory stays
// bounded on large charts. Best used with nodes visited in increasing order.
class CurvatureEngine {
 public:
  CurvatureEngine(const DMetric& m, ConnectionKind kind);

  Ricci4 ricci(std::size_t p);
  const FrameCoeffs& coeffs(std::size_t p);
  const DMetric& metric() const { return m_; }
  ConnectionKind kind() const { return kind_; }

 private:
  struct Slab {
    long index = -1;
    std::uint64_t stamp = 0;
    std::vector<FrameCoeffs> data;
  };
  const std::vector<FrameCoeffs>& slab(std::size_t s);

  const DMetric& m_;
  ConnectionKind kind_;
  std::vector<Slab> cache_;
  std::uint64_t clock_ = 0;
};

struct CurvatureBundle {
  GridChart chart;
  ConnectionKind kind = ConnectionKind::canonical;
  std::array<Field, 3> ricci_h;   // symmetric part of R_ij (11, 12, 22)
  std::array<Field, 3> ricci_v;   // symmetric part of R_ab (33, 34, 44)
  std::array<Field, 4> ricci_hv;  // R_ia at [2*i + a]
  std::array<Field, 4> ricci_vh;  // R_ai at [2*a + i]
  Field scalar_h;                 // R = g^ij R_ij
  Field scalar_v;                 // S = h^ab R_ab
  double antisym_h = 0.0;         // max |R_12 - R_21|, dropped by symmetrisation
  double antisym_v = 0.0;
};

CurvatureBundle curvature(const DMetric& m, ConnectionKind kind = ConnectionKind::canonical);

// Mixed-index Einstein residual E^a_b = R^a_b - 1/2 delta^a_b (R + S) - U^a_b
// with diagonal source U = diag(source).
struct EinsteinResidual {
  Field pointwise;  // max over components at each node
  double max_norm = 0.0;
};

EinsteinResidual einstein_residual(const DMetric& m, const std::array<double, 4>& source,
                                   ConnectionKind kind = ConnectionKind::canonical);

}  // namespace anholo
