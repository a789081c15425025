#pragma once

#include <array>
#include <cmath>
#include <string>

#include "anholo/grid.hpp"

namespace testutil {

inline anholo::GridChart box(std::array<double, 4> lo, std::array<double, 4> hi, std::array<std::size_t, 4> n,
                             std::array<anholo::BoundaryKind, 4> b = {anholo::BoundaryKind::dirichlet,
                                                                      anholo::BoundaryKind::dirichlet,
                                                                      anholo::BoundaryKind::dirichlet,
                                                                      anholo::BoundaryKind::dirichlet},
                             int order = 2) {
  const char* names[4] = {"x1", "x2", "y3", "y4"};
  std::array<anholo::Axis, 4> ax;
  for (std::size_t a = 0; a < 4; ++a) ax[a] = anholo::make_axis(names[a], lo[a], hi[a], n[a], b[a]);
  return anholo::GridChart(ax, order);
}

inline anholo::GridChart unit_box(std::size_t n) { return box({0, 0, 0, 0}, {1, 1, 1, 1}, {n, n, n, n}); }

// Interior nodes: at least `margin` away from every Dirichlet edge.
inline bool interior(const anholo::GridChart& c, std::size_t p, std::size_t margin = 1) {
  const auto m = c.multi_index(p);
  for (int a = 0; a < 4; ++a) {
    if (c.axis(a).boundary == anholo::BoundaryKind::periodic) continue;
    if (m[static_cast<std::size_t>(a)] < margin || m[static_cast<std::size_t>(a)] + margin >= c.count(a)) return false;
  }
  return true;
}

}  // namespace testutil
