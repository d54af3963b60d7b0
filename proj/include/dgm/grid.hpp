#pragma once

#include <cstddef>
#include <functional>

#include "dgm/tensor.hpp"

namespace dgm {

/// Rectangular grid of res_x x res_y cells over [xmin,xmax] x [ymin,ymax].
/// Nodes are cell centres, emitted row-major with y outer and x inner.
struct Grid {
  double xmin = -4.0, xmax = 4.0, ymin = -4.0, ymax = 4.0;
  std::size_t res_x = 400, res_y = 400;

  double dx() const { return (xmax - xmin) / static_cast<double>(res_x); }
  double dy() const { return (ymax - ymin) / static_cast<double>(res_y); }
  double cell_area() const { return dx() * dy(); }
  std::size_t size() const { return res_x * res_y; }
  /// (res_x·res_y) x 2 matrix of cell centres.
  Tensor points() const;
  void validate() const;
};

/// Per-row log-density of a batch of 2-D points (returns B x 1 or B).
using LogDensityFn = std::function<Tensor(const Tensor&)>;

/// Midpoint Riemann sum of exp(log p) over the grid.
double riemann_mass(const Tensor& log_density, const Grid& grid);

struct GridMass {
  double mass = 0.0;
  /// Largest density among the outermost ring of cells.
  double boundary_density = 0.0;
  Grid grid;
  std::size_t expansions = 0;
};

/// Integrates exp(log p) on the grid, growing the domain about its centre
/// (keeping the cell size) while the boundary density exceeds `boundary_tol`.
GridMass integrate_density(const LogDensityFn& log_density, Grid grid,
                           double boundary_tol = 1e-6, std::size_t max_expansions = 8,
                           std::size_t chunk = 16384);

}  // namespace dgm
