#pragma once

#include <string>
#include <vector>

#include "psrpn/box.hpp"
#include "psrpn/pool_geometry.hpp"

namespace psrpn {

// Window footprint in feature cells.
struct AnchorShape {
  int w = 0;
  int h = 0;
};

struct LevelGeom {
  std::string name;  // D2..D6
  int stride = 0;    // image pixels per feature cell
  int h = 0, w = 0;  // feature map dims
};

struct Anchor {
  int level = 0;
  int shape = 0;  // shape index (window mode) or ratio index (grid mode)
  int row = 0, col = 0;
  Box box;  // image space
};

// Anchors for one image, ordered by (level, shape, row, col). That ordering
// is a contract: proposal files and checkpointed runs rely on it.
struct AnchorSet {
  bool window_mode = false;
  std::vector<LevelGeom> levels;
  std::vector<std::vector<AnchorShape>> shapes;  // per level; empty in grid mode
  std::vector<Anchor> anchors;
  std::vector<long> level_counts;

  long total() const { return static_cast<long>(anchors.size()); }
};

// D2..D6 geometry for an input padded to a multiple of 64.
std::vector<LevelGeom> pyramid_levels(int img_h, int img_w);

// Five shapes everywhere; the finest level adds three smaller, the
// coarsest five larger.
std::vector<std::vector<AnchorShape>> default_window_profile(int num_levels);

AnchorSet make_window_anchors(const std::vector<LevelGeom>& levels,
                              const std::vector<std::vector<AnchorShape>>& profile);

// One anchor per cell per aspect ratio, all with area (scale * stride)^2.
AnchorSet make_grid_anchors(const std::vector<LevelGeom>& levels,
                            const std::vector<double>& ratios, double scale = 8.0);

// Closed-form position count for one level: sum over shapes of
// (H-h+1)(W-w+1). Oracle for the materialised generator.
long window_anchor_count(const LevelGeom& level, const std::vector<AnchorShape>& shapes);

inline PoolWindow window_of(const Anchor& a, const AnchorSet& set) {
  const AnchorShape& s = set.shapes[a.level][a.shape];
  return PoolWindow{a.row, a.col, s.w, s.h};
}

// Reference per-level totals for a 640x640 input.
inline constexpr long kWindowAudit640[5] = {194058, 27803, 5963, 1043, 83};
inline constexpr long kWindowAudit640Total = 228950;
inline constexpr long kGridAudit640Ratios3 = 102300;
inline constexpr long kGridAudit640Ratios5 = 170500;

}  // namespace psrpn
