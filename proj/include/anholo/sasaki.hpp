#pragma once

#include <array>
#include <functional>
#include <optional>

#include "anholo/dmetric.hpp"

namespace anholo {

// Regular Lagrangian L(x1, x2, y3, y4) on the chart coordinates.
using Lagrangian = std::function<double(const std::array<double, 4>&)>;

struct SasakiOptions {
  std::optional<std::array<Field, 4>> user_n;  // wins over the spray when given
  double step = 1e-3;                          // finite-difference step (scaled by 1 + |coord|)
  double nondegeneracy = 1e-12;
};

// v-block h_ab = 1/2 d^2L/dy^a dy^b, h-block equal to it componentwise.
// Without user N: N^a_j = dG^a/dy^j with the semispray
// G^a = 1/4 h^ab (d^2L/dy^b dx^k y^k - dL/dx^b).
DMetric sasaki_lift(const Lagrangian& L, const GridChart& chart, const SasakiOptions& opt = {});

}  // namespace anholo
