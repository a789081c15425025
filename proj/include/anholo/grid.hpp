#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace anholo {

enum class BoundaryKind { dirichlet, periodic };

// One coordinate axis. Dirichlet axes include both end points
// (spacing = (max - min) / (count - 1)); periodic axes identify max with min
// (spacing = (max - min) / count).
struct Axis {
  std::string name;
  double min = 0.0;
  double max = 1.0;
  std::size_t count = 3;
  BoundaryKind boundary = BoundaryKind::dirichlet;

  double spacing() const;
  double coord(std::size_t i) const { return min + static_cast<double>(i) * spacing(); }
  bool operator==(const Axis&) const = default;
};

using Field = std::vector<double>;

// Derivative stencil at one node: absolute node indices along the axis and
// weights already divided by the spacing.
struct StencilRow {
  int n = 0;
  std::array<std::size_t, 5> idx{};
  std::array<double, 5> w{};
};

// Rectangular 4-d chart u = (x1, x2, y3, y4). Axes 0,1 are horizontal,
// 2,3 vertical. Storage is row-major, axis 3 fastest.
class GridChart {
 public:
  GridChart() = default;
  GridChart(std::array<Axis, 4> axes, int fd_order = 2);

  const Axis& axis(int a) const;
  const std::array<Axis, 4>& axes() const { return axes_; }
  int fd_order() const { return fd_order_; }
  std::size_t size() const { return size_; }
  std::size_t stride(int a) const { return strides_[static_cast<std::size_t>(a)]; }
  std::size_t count(int a) const { return axes_[static_cast<std::size_t>(a)].count; }
  double spacing(int a) const { return spacing_[static_cast<std::size_t>(a)]; }

  std::size_t index(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
    return ((i0 * axes_[1].count + i1) * axes_[2].count + i2) * axes_[3].count + i3;
  }
  std::array<std::size_t, 4> multi_index(std::size_t p) const;
  std::size_t index_along(std::size_t p, int a) const {
    return (p / strides_[static_cast<std::size_t>(a)]) % axes_[static_cast<std::size_t>(a)].count;
  }
  std::array<double, 4> coords(std::size_t p) const;

  const StencilRow& stencil(int a, std::size_t i) const {
    return stencils_[static_cast<std::size_t>(a)][i];
  }

  // Partial derivative of f along axis a at node p.
  double derivative(const Field& f, int a, std::size_t p) const;
  Field derivative(const Field& f, int a) const;

  // Trapezoid weight of node p (product of per-axis weights times spacings).
  double quadrature_weight(std::size_t p) const;
  Field quadrature_weights() const;

  Field sample(const std::function<double(const std::array<double, 4>&)>& fn) const;

  bool operator==(const GridChart& o) const { return axes_ == o.axes_ && fd_order_ == o.fd_order_; }

 private:
  std::array<Axis, 4> axes_{};
  int fd_order_ = 2;
  std::size_t size_ = 0;
  std::array<std::size_t, 4> strides_{};
  std::array<double, 4> spacing_{};
  std::array<std::vector<StencilRow>, 4> stencils_;
  std::array<std::vector<double>, 4> axis_weights_;
};

// Convenience builder.
Axis make_axis(std::string name, double min, double max, std::size_t count,
               BoundaryKind b = BoundaryKind::dirichlet);

void require_same_chart(const GridChart& a, const GridChart& b, const char* what);

}  // namespace anholo
