#include "driftlab/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace driftlab::density {
namespace {

constexpr double kCenterShare = 0.7;
constexpr double kHaloShare = 0.3;
constexpr int kHaloRadius = 2;  // 5x5 neighborhood

// Cell index for a coordinate; values on an interior edge go to the lower
// cell, values at or beyond the max edge go to the last cell.
int bin(double v, double lo, double hi, int cells) {
  const double t = (v - lo) / (hi - lo) * cells;
  int idx = static_cast<int>(std::ceil(t)) - 1;
  return std::clamp(idx, 0, cells - 1);
}

}  // namespace

Extent union_extent(const RowMatrix& a, const RowMatrix& b, double padding) {
  Extent e{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  auto include = [&](const RowMatrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      e.min_x = std::min(e.min_x, m(i, 0));
      e.max_x = std::max(e.max_x, m(i, 0));
      e.min_y = std::min(e.min_y, m(i, 1));
      e.max_y = std::max(e.max_y, m(i, 1));
    }
  };
  include(a);
  include(b);
  if (!std::isfinite(e.min_x)) return Extent{};
  auto widen = [&](double& lo, double& hi) {
    double span = hi - lo;
    if (span <= 0.0) {
      lo -= 0.5;
      hi += 0.5;
      span = 1.0;
    }
    lo -= padding * span;
    hi += padding * span;
  };
  widen(e.min_x, e.max_x);
  widen(e.min_y, e.max_y);
  return e;
}

DensityGrid rasterize(const RowMatrix& coords, const Extent& extent, int rows, int cols) {
  if (rows < 2 || cols < 2) throw PreconditionError("density grid resolution must be at least 2x2");
  if (!(extent.max_x > extent.min_x && extent.max_y > extent.min_y)) {
    throw PreconditionError("density grid extent is degenerate");
  }
  if (coords.rows() > 0 && coords.cols() != 2) throw PreconditionError("rasterize expects 2-D points");

  DensityGrid g;
  g.rows = rows;
  g.cols = cols;
  g.extent = extent;
  g.values = Eigen::MatrixXd::Zero(rows, cols);
  g.counts = Eigen::MatrixXi::Zero(rows, cols);
  g.sample_count = static_cast<std::size_t>(coords.rows());
  if (g.sample_count == 0) return g;

  Eigen::MatrixXi& counts = g.counts;
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const int c = bin(coords(i, 0), extent.min_x, extent.max_x, cols);
    const int r = bin(coords(i, 1), extent.min_y, extent.max_y, rows);
    ++counts(r, c);
  }
  const double n = static_cast<double>(g.sample_count);
  g.values = counts.cast<double>() / n;
  return g;
}

DensityGrid halo_smooth(const DensityGrid& grid) {
  DensityGrid out = grid;
  out.smoothed = true;
  out.values = Eigen::MatrixXd::Zero(grid.rows, grid.cols);
  const double neighbor_share = kHaloShare / 24.0;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const double mass = grid.values(r, c);
      if (mass == 0.0) continue;
      out.values(r, c) += kCenterShare * mass;
      for (int dr = -kHaloRadius; dr <= kHaloRadius; ++dr) {
        for (int dc = -kHaloRadius; dc <= kHaloRadius; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= grid.rows || cc >= grid.cols) continue;
          out.values(rr, cc) += neighbor_share * mass;
        }
      }
    }
  }
  return out;
}

DensityDiff density_diff(const DensityGrid& newer, const DensityGrid& older) {
  if (newer.rows != older.rows || newer.cols != older.cols) {
    throw PreconditionError("density_diff: grid resolutions differ");
  }
  if (!(newer.extent == older.extent)) throw PreconditionError("density_diff: grid extents differ");
  if (newer.smoothed != older.smoothed) {
    throw PreconditionError("density_diff: both grids must be smoothed or both raw");
  }
  DensityDiff d;
  d.rows = newer.rows;
  d.cols = newer.cols;
  d.extent = newer.extent;
  d.values = newer.values - older.values;
  d.smoothed = newer.smoothed;
  d.newer_count = newer.sample_count;
  d.older_count = older.sample_count;
  return d;
}

}  // namespace driftlab::density
