#pragma once

// Normalized 2-D grid densities, halo smoothing and signed differences.

#include <span>
#include <string>

#include <Eigen/Dense>

#include "driftlab/core.hpp"

namespace driftlab::density {

struct Extent {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 1.0;
  double max_y = 1.0;
  bool operator==(const Extent&) const = default;
};

struct DensityGrid {
  int rows = 0;
  int cols = 0;
  Extent extent;
  Eigen::MatrixXd values;  // rows x cols; row index follows y, column index follows x
  Eigen::MatrixXi counts;  // raw per-cell sample counts from rasterize
  std::size_t sample_count = 0;
  bool smoothed = false;
};

/// Signed per-cell difference newer - older.
struct DensityDiff {
  int rows = 0;
  int cols = 0;
  Extent extent;
  Eigen::MatrixXd values;
  bool smoothed = false;
  std::size_t newer_count = 0;
  std::size_t older_count = 0;
};

/// Bounding box of all points, padded by `padding` times each side length.
/// Degenerate sides are widened to unit length.
Extent union_extent(const RowMatrix& a, const RowMatrix& b, double padding = 0.05);

/// Bins each point into one cell (points on the max edge go to the last
/// cell, shared edges go to the lower index) and normalizes by N.
DensityGrid rasterize(const RowMatrix& coords, const Extent& extent, int rows, int cols);

/// Keeps 70% of each cell's mass and spreads 30% evenly over the 24 other
/// cells of its 5x5 neighborhood; mass leaving the grid is dropped.
DensityGrid halo_smooth(const DensityGrid& grid);

/// Throws PreconditionError on mismatched resolution, extent or smoothing.
DensityDiff density_diff(const DensityGrid& newer, const DensityGrid& older);

}  // namespace driftlab::density
