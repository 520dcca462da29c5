#pragma once

#include <array>
#include <string>

#include "psrpn/errors.hpp"
#include "psrpn/graph.hpp"
#include "psrpn/pool_geometry.hpp"
#include "psrpn/tensor.hpp"

namespace psrpn {

// Tape-free pooling of one window, for inference over full anchor sets.
// Same semantics as the graph op: k*k grid of bin means, classification
// channels grid major, regression channels in four grid-size blocks, grid
// means averaged into one vector t_x t_y t_w t_h o.
inline std::array<double, 5> ps_pool_window(const Tensor4f& reg, const Tensor4f& cls,
                                            const PoolWindow& pw, int k) {
  if (cls.n != 1 || reg.n != 1) throw ShapeError("ps_pool_window: single-image maps only");
  if (cls.c != k * k || reg.c != 4 * k * k)
    throw ShapeError("ps_pool_window: channel layout mismatch for k=" + std::to_string(k));
  if (pw.row < 0 || pw.col < 0 || pw.row + pw.h > cls.h || pw.col + pw.w > cls.w)
    throw ShapeError("ps_pool_window: window outside map");
  const auto by = grid_bins(pw.h, k);
  const auto bx = grid_bins(pw.w, k);
  std::array<double, 5> out = {0, 0, 0, 0, 0};
  for (int gy = 0; gy < k; ++gy)
    for (int gx = 0; gx < k; ++gx) {
      const int grid = gy * k + gx;
      const int y0 = pw.row + by[gy].first, y1 = pw.row + by[gy].second;
      const int x0 = pw.col + bx[gx].first, x1 = pw.col + bx[gx].second;
      const double cells = static_cast<double>(y1 - y0) * (x1 - x0);
      double s = 0.0;
      for (int y = y0; y < y1; ++y) {
        const float* p = cls.row(0, grid, y);
        for (int x = x0; x < x1; ++x) s += p[x];
      }
      out[4] += s / cells;
      for (int cd = 0; cd < 4; ++cd) {
        double sr = 0.0;
        for (int y = y0; y < y1; ++y) {
          const float* p = reg.row(0, cd * k * k + grid, y);
          for (int x = x0; x < x1; ++x) sr += p[x];
        }
        out[cd] += sr / cells;
      }
    }
  for (double& v : out) v /= static_cast<double>(k) * k;
  return out;
}

// Tape-free read of one ratio slot at one cell of dense sibling maps.
inline std::array<double, 5> read_cell(const Tensor4f& reg, const Tensor4f& cls,
                                       const CellRef& c) {
  if (cls.n != 1 || reg.n != 1) throw ShapeError("read_cell: single-image maps only");
  if (reg.c != 4 * cls.c) throw ShapeError("read_cell: reg channels must be 4x cls channels");
  if (c.ratio < 0 || c.ratio >= cls.c || c.row < 0 || c.row >= cls.h || c.col < 0 ||
      c.col >= cls.w)
    throw ShapeError("read_cell: cell outside map");
  return {reg.at(0, 4 * c.ratio + 0, c.row, c.col), reg.at(0, 4 * c.ratio + 1, c.row, c.col),
          reg.at(0, 4 * c.ratio + 2, c.row, c.col), reg.at(0, 4 * c.ratio + 3, c.row, c.col),
          cls.at(0, c.ratio, c.row, c.col)};
}

}  // namespace psrpn
