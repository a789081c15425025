#pragma once

#include <array>
#include <vector>

#include "anholo/dmetric.hpp"

namespace anholo {

enum class ConnectionKind { canonical, levi_civita };

const char* to_string(ConnectionKind k);

// Connection coefficients per node, N-adapted frame (see FrameCoeffs).
struct DConnection {
  GridChart chart;
  ConnectionKind kind = ConnectionKind::canonical;
  std::vector<FrameCoeffs> coeffs;

  // Block accessors with 0-based block indices.
  double L_h(int i, int j, int k, std::size_t p) const { return coeffs[p][gidx(i, j, k)]; }
  double L_v(int a, int b, int k, std::size_t p) const { return coeffs[p][gidx(2 + a, 2 + b, k)]; }
  double C_h(int i, int j, int c, std::size_t p) const { return coeffs[p][gidx(i, j, 2 + c)]; }
  double C_v(int a, int b, int c, std::size_t p) const { return coeffs[p][gidx(2 + a, 2 + b, 2 + c)]; }
};

FrameCoeffs connection_coeffs(const DMetric& m, ConnectionKind kind, std::size_t p);

DConnection canonical_dconnection(const DMetric& m);
DConnection levi_civita(const DMetric& m);

// Max-norm of the frame components of D g (both blocks, all directions).
double metric_compat_residual(const DMetric& m, const DConnection& c);

// Max-norm of torsion. For the canonical connection only the pure h- and
// pure v-parts are measured (the mixed parts are genuinely nonzero).
double torsion_residual(const DMetric& m, const DConnection& c);

enum class FrameKind { n_adapted, coordinate };

// Z = canonical - Levi-Civita, per node, in the requested frame.
std::vector<FrameCoeffs> distortion(const DMetric& m, FrameKind frame = FrameKind::coordinate);
// Max-norm of the coordinate components of Z, computed node by node.
double distortion_norm(const DMetric& m);

// e_dir f with dir in 0..3 (0,1 horizontal and N-elongated).
Field n_elongated_derivative(const Field& f, int dir, const GridChart& chart, const std::array<Field, 4>& n);

// Zero-torsion constraints for ansatz-type metrics with v-block diag(h3, h4)
// and N^3_i = w_i, N^4_i = n_i. Returns max-norms of
// {w_i* - e_i ln|h4|, e_k w_i - e_i w_k, n_i*, d_i n_k - d_k n_i}.
std::array<double, 4> lc_constraint_residual(const DMetric& m, const Field& h4,
                                             const std::array<Field, 2>& w,
                                             const std::array<Field, 2>& n);

}  // namespace anholo
