#include "anholo/grid.hpp"

#include <cmath>

#include "anholo/errors.hpp"

namespace anholo {

double Axis::spacing() const {
  if (boundary == BoundaryKind::periodic) return (max - min) / static_cast<double>(count);
  return (max - min) / static_cast<double>(count - 1);
}

Axis make_axis(std::string name, double min, double max, std::size_t count, BoundaryKind b) {
  Axis a;
  a.name = std::move(name);
  a.min = min;
  a.max = max;
  a.count = count;
  a.boundary = b;
  return a;
}

namespace {

StencilRow row(std::initializer_list<std::pair<long, double>> terms, long n, bool periodic,
               double h) {
  StencilRow r;
  for (const auto& [j, c] : terms) {
    long jj = j;
    if (periodic) jj = ((jj % n) + n) % n;
    r.idx[static_cast<std::size_t>(r.n)] = static_cast<std::size_t>(jj);
    r.w[static_cast<std::size_t>(r.n)] = c / h;
    ++r.n;
  }
  return r;
}

std::vector<StencilRow> build_stencils(const Axis& ax, int order) {
  const long n = static_cast<long>(ax.count);
  const double h = ax.spacing();
  const bool per = ax.boundary == BoundaryKind::periodic;
  std::vector<StencilRow> out(ax.count);
  for (long i = 0; i < n; ++i) {
    auto& r = out[static_cast<std::size_t>(i)];
    if (order == 2) {
      if (per || (i > 0 && i < n - 1))
        r = row({{i - 1, -0.5}, {i + 1, 0.5}}, n, per, h);
      // Edge closures carry the same leading error (h^2/6 times the third
      // derivative) as the central stencil, so differencing a differenced
      // field stays second order up to the edge.
      else if (n == 3 && i == 0)
        r = row({{0, -1.5}, {1, 2.0}, {2, -0.5}}, n, per, h);
      else if (n == 3)
        r = row({{2, 1.5}, {1, -2.0}, {0, 0.5}}, n, per, h);
      else if (i == 0)
        r = row({{0, -2.0}, {1, 3.5}, {2, -2.0}, {3, 0.5}}, n, per, h);
      else
        r = row({{n - 1, 2.0}, {n - 2, -3.5}, {n - 3, 2.0}, {n - 4, -0.5}}, n, per, h);
    } else {
      const double s = 1.0 / 12.0;
      if (per || (i > 1 && i < n - 2))
        r = row({{i - 2, s}, {i - 1, -8 * s}, {i + 1, 8 * s}, {i + 2, -s}}, n, per, h);
      else if (i == 0)
        r = row({{0, -25 * s}, {1, 48 * s}, {2, -36 * s}, {3, 16 * s}, {4, -3 * s}}, n, per, h);
      else if (i == 1)
        r = row({{0, -3 * s}, {1, -10 * s}, {2, 18 * s}, {3, -6 * s}, {4, s}}, n, per, h);
      else if (i == n - 2)
        r = row({{n - 1, 3 * s}, {n - 2, 10 * s}, {n - 3, -18 * s}, {n - 4, 6 * s}, {n - 5, -s}},
                n, per, h);
      else
        r = row({{n - 1, 25 * s}, {n - 2, -48 * s}, {n - 3, 36 * s}, {n - 4, -16 * s},
                 {n - 5, 3 * s}},
                n, per, h);
    }
  }
  return out;
}

}  // namespace

GridChart::GridChart(std::array<Axis, 4> axes, int fd_order) : axes_(std::move(axes)), fd_order_(fd_order) {
  if (fd_order != 2 && fd_order != 4) throw InvalidArgument("fd_order must be 2 or 4");
  const std::size_t min_count = fd_order == 4 ? 5 : 3;
  for (int a = 0; a < 4; ++a) {
    const auto& ax = axes_[static_cast<std::size_t>(a)];
    const std::size_t need = min_count;
    if (ax.count < need)
      throw InvalidArgument("axis '" + ax.name + "' needs at least " + std::to_string(need) +
                            " points");
    if (!(ax.max > ax.min) || !std::isfinite(ax.min) || !std::isfinite(ax.max))
      throw InvalidArgument("axis '" + ax.name + "' must satisfy min < max");
  }
  strides_[3] = 1;
  for (int a = 2; a >= 0; --a)
    strides_[static_cast<std::size_t>(a)] =
        strides_[static_cast<std::size_t>(a + 1)] * axes_[static_cast<std::size_t>(a + 1)].count;
  size_ = strides_[0] * axes_[0].count;
  for (std::size_t a = 0; a < 4; ++a) {
    spacing_[a] = axes_[a].spacing();
    stencils_[a] = build_stencils(axes_[a], fd_order_);
    auto& w = axis_weights_[a];
    w.assign(axes_[a].count, spacing_[a]);
    if (axes_[a].boundary == BoundaryKind::dirichlet) {
      w.front() *= 0.5;
      w.back() *= 0.5;
    }
  }
}

const Axis& GridChart::axis(int a) const {
  if (a < 0 || a > 3) throw std::out_of_range("axis index out of range");
  return axes_[static_cast<std::size_t>(a)];
}

std::array<std::size_t, 4> GridChart::multi_index(std::size_t p) const {
  std::array<std::size_t, 4> m{};
  for (std::size_t a = 0; a < 4; ++a) m[a] = (p / strides_[a]) % axes_[a].count;
  return m;
}

std::array<double, 4> GridChart::coords(std::size_t p) const {
  const auto m = multi_index(p);
  return {axes_[0].coord(m[0]), axes_[1].coord(m[1]), axes_[2].coord(m[2]), axes_[3].coord(m[3])};
}

double GridChart::derivative(const Field& f, int a, std::size_t p) const {
  const auto ua = static_cast<std::size_t>(a);
  const std::size_t st = strides_[ua];
  const std::size_t i = (p / st) % axes_[ua].count;
  const std::size_t base = p - i * st;
  const StencilRow& r = stencils_[ua][i];
  double s = 0.0;
  for (int k = 0; k < r.n; ++k) s += r.w[static_cast<std::size_t>(k)] * f[base + r.idx[static_cast<std::size_t>(k)] * st];
  return s;
}

Field GridChart::derivative(const Field& f, int a) const {
  if (a < 0 || a > 3) throw std::out_of_range("axis index out of range");
  if (f.size() != size_) throw InvalidArgument("field size does not match chart");
  Field out(size_);
  for (std::size_t p = 0; p < size_; ++p) out[p] = derivative(f, a, p);
  return out;
}

double GridChart::quadrature_weight(std::size_t p) const {
  const auto m = multi_index(p);
  return axis_weights_[0][m[0]] * axis_weights_[1][m[1]] * axis_weights_[2][m[2]] *
         axis_weights_[3][m[3]];
}

Field GridChart::quadrature_weights() const {
  Field w(size_);
  for (std::size_t p = 0; p < size_; ++p) w[p] = quadrature_weight(p);
  return w;
}

Field GridChart::sample(const std::function<double(const std::array<double, 4>&)>& fn) const {
  Field out(size_);
  for (std::size_t p = 0; p < size_; ++p) out[p] = fn(coords(p));
  return out;
}

void require_same_chart(const GridChart& a, const GridChart& b, const char* what) {
  if (!(a == b)) throw InvalidArgument(std::string("chart mismatch: ") + what);
}

}  // namespace anholo
