#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "psrpn/errors.hpp"

namespace psrpn {

// Window placement on a feature map, in whole cells.
struct PoolWindow {
  int row = 0, col = 0;  // top-left cell
  int w = 0, h = 0;      // extent in cells
};

// Partition of [0,len) into k bins: edge_i = round(i*len/k).
// Edges are monotone and telescope to len, so the raw bins cover the
// window exactly once.
inline std::vector<int> grid_edges(int len, int k) {
  if (len < 1 || k < 1) throw ShapeError("grid_edges: len and k must be positive");
  std::vector<int> edges(static_cast<std::size_t>(k) + 1);
  for (int i = 0; i <= k; ++i)
    edges[i] = static_cast<int>(std::lround(static_cast<double>(i) * len / k));
  return edges;
}

// Per-bin [begin,end) cell ranges. A bin that is empty in the raw
// partition (len < k) borrows the range of its nearest non-empty bin,
// left neighbour first on ties, so every grid averages over >= 1 cell.
inline std::vector<std::pair<int, int>> grid_bins(int len, int k) {
  const std::vector<int> e = grid_edges(len, k);
  std::vector<std::pair<int, int>> bins(k);
  for (int i = 0; i < k; ++i) bins[i] = {e[i], e[i + 1]};
  for (int i = 0; i < k; ++i) {
    if (bins[i].first < bins[i].second) continue;
    for (int d = 1; d < k; ++d) {
      const int l = i - d, r = i + d;
      if (l >= 0 && e[l] < e[l + 1]) {
        bins[i] = {e[l], e[l + 1]};
        break;
      }
      if (r < k && e[r] < e[r + 1]) {
        bins[i] = {e[r], e[r + 1]};
        break;
      }
    }
  }
  return bins;
}

}  // namespace psrpn
