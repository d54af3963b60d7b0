#include "dgm/grid.hpp"

#include <algorithm>
#include <cmath>

#include "dgm/error.hpp"

namespace dgm {

void Grid::validate() const {
  if (res_x == 0 || res_y == 0) throw DomainError("grid resolution must be at least 1");
  if (!(xmax > xmin) || !(ymax > ymin)) throw DomainError("grid bounds must satisfy min < max");
}

Tensor Grid::points() const {
  validate();
  Tensor out(Shape{size(), 2});
  const double hx = dx(), hy = dy();
  for (std::size_t iy = 0; iy < res_y; ++iy) {
    for (std::size_t ix = 0; ix < res_x; ++ix) {
      const std::size_t r = iy * res_x + ix;
      out.at(r, 0) = xmin + (static_cast<double>(ix) + 0.5) * hx;
      out.at(r, 1) = ymin + (static_cast<double>(iy) + 0.5) * hy;
    }
  }
  return out;
}

double riemann_mass(const Tensor& log_density, const Grid& grid) {
  if (log_density.numel() != grid.size()) {
    throw ShapeError("riemann_mass: " + std::to_string(log_density.numel()) +
                     " values for a grid of " + std::to_string(grid.size()));
  }
  // Kahan-compensated so the result does not depend on the grid size class.
  double s = 0.0, c = 0.0;
  for (double lp : log_density.values()) {
    const double y = std::exp(lp) - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s * grid.cell_area();
}

namespace {

Tensor evaluate_chunked(const LogDensityFn& fn, const Tensor& pts, std::size_t chunk) {
  Tensor out(Shape{pts.rows()});
  for (std::size_t begin = 0; begin < pts.rows(); begin += chunk) {
    const std::size_t end = std::min(pts.rows(), begin + chunk);
    Tensor part(Shape{end - begin, 2},
                std::vector<double>(pts.data() + begin * 2, pts.data() + end * 2));
    const Tensor lp = fn(part);
    if (lp.numel() != end - begin) throw ShapeError("log-density returned the wrong row count");
    std::copy(lp.data(), lp.data() + lp.numel(), out.data() + begin);
  }
  return out;
}

double boundary_max(const Tensor& lp, const Grid& g) {
  double best = 0.0;
  for (std::size_t iy = 0; iy < g.res_y; ++iy) {
    for (std::size_t ix = 0; ix < g.res_x; ++ix) {
      if (iy != 0 && iy + 1 != g.res_y && ix != 0 && ix + 1 != g.res_x) continue;
      best = std::max(best, std::exp(lp[iy * g.res_x + ix]));
    }
  }
  return best;
}

}  // namespace

GridMass integrate_density(const LogDensityFn& log_density, Grid grid, double boundary_tol,
                           std::size_t max_expansions, std::size_t chunk) {
  grid.validate();
  GridMass result;
  for (std::size_t round = 0;; ++round) {
    const Tensor lp = evaluate_chunked(log_density, grid.points(), std::max<std::size_t>(chunk, 1));
    result.mass = riemann_mass(lp, grid);
    result.boundary_density = boundary_max(lp, grid);
    result.grid = grid;
    result.expansions = round;
    if (result.boundary_density < boundary_tol || round == max_expansions) break;
    // Add a quarter of the extent on every side, keeping the cell size.
    const std::size_t add_x = std::max<std::size_t>(1, grid.res_x / 4);
    const std::size_t add_y = std::max<std::size_t>(1, grid.res_y / 4);
    const double hx = grid.dx(), hy = grid.dy();
    grid.xmin -= hx * static_cast<double>(add_x);
    grid.xmax += hx * static_cast<double>(add_x);
    grid.ymin -= hy * static_cast<double>(add_y);
    grid.ymax += hy * static_cast<double>(add_y);
    grid.res_x += 2 * add_x;
    grid.res_y += 2 * add_y;
  }
  return result;
}

}  // namespace dgm
