#include "psrpn/anchors.hpp"

#include <cmath>

#include "psrpn/errors.hpp"

namespace psrpn {

std::vector<LevelGeom> pyramid_levels(int img_h, int img_w) {
  if (img_h < 64 || img_w < 64 || img_h % 64 != 0 || img_w % 64 != 0)
    throw ShapeError("pyramid_levels: input dims must be positive multiples of 64, got " +
                     std::to_string(img_h) + "x" + std::to_string(img_w));
  std::vector<LevelGeom> levels;
  int stride = 4;
  for (int i = 2; i <= 6; ++i) {
    levels.push_back(LevelGeom{"D" + std::to_string(i), stride, img_h / stride, img_w / stride});
    stride *= 2;
  }
  return levels;
}

std::vector<std::vector<AnchorShape>> default_window_profile(int num_levels) {
  const std::vector<AnchorShape> base = {{8, 8}, {4, 8}, {8, 4}, {3, 9}, {9, 3}};
  const std::vector<AnchorShape> finest_extra = {{4, 4}, {2, 4}, {4, 2}};
  const std::vector<AnchorShape> coarsest_extra = {{12, 12}, {6, 12}, {12, 6}, {12, 4}, {4, 12}};
  std::vector<std::vector<AnchorShape>> profile(num_levels, base);
  if (num_levels > 0)
    profile.front().insert(profile.front().end(), finest_extra.begin(), finest_extra.end());
  if (num_levels > 1)
    profile.back().insert(profile.back().end(), coarsest_extra.begin(), coarsest_extra.end());
  return profile;
}

long window_anchor_count(const LevelGeom& level, const std::vector<AnchorShape>& shapes) {
  long n = 0;
  for (const AnchorShape& s : shapes) {
    const long rows = level.h - s.h + 1;
    const long cols = level.w - s.w + 1;
    if (rows > 0 && cols > 0) n += rows * cols;
  }
  return n;
}

AnchorSet make_window_anchors(const std::vector<LevelGeom>& levels,
                              const std::vector<std::vector<AnchorShape>>& profile) {
  if (profile.size() != levels.size())
    throw ShapeError("make_window_anchors: profile levels do not match pyramid");
  AnchorSet set;
  set.window_mode = true;
  set.levels = levels;
  set.shapes = profile;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const LevelGeom& lv = levels[li];
    long count = 0;
    for (std::size_t si = 0; si < profile[li].size(); ++si) {
      const AnchorShape& s = profile[li][si];
      if (s.w < 1 || s.h < 1)
        throw ShapeError("make_window_anchors: degenerate shape at level " + lv.name);
      for (int r = 0; r + s.h <= lv.h; ++r)
        for (int c = 0; c + s.w <= lv.w; ++c) {
          const double st = lv.stride;
          set.anchors.push_back(Anchor{static_cast<int>(li), static_cast<int>(si), r, c,
                                       Box{c * st, r * st, (c + s.w) * st, (r + s.h) * st}});
          ++count;
        }
    }
    set.level_counts.push_back(count);
  }
  return set;
}

AnchorSet make_grid_anchors(const std::vector<LevelGeom>& levels,
                            const std::vector<double>& ratios, double scale) {
  if (ratios.empty()) throw ShapeError("make_grid_anchors: need at least one ratio");
  AnchorSet set;
  set.window_mode = false;
  set.levels = levels;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const LevelGeom& lv = levels[li];
    long count = 0;
    for (std::size_t ri = 0; ri < ratios.size(); ++ri) {
      if (ratios[ri] <= 0) throw ShapeError("make_grid_anchors: ratio must be positive");
      const double side = scale * lv.stride;
      const double w = side * std::sqrt(ratios[ri]);
      const double h = side / std::sqrt(ratios[ri]);
      for (int r = 0; r < lv.h; ++r)
        for (int c = 0; c < lv.w; ++c) {
          const double cx = (c + 0.5) * lv.stride;
          const double cy = (r + 0.5) * lv.stride;
          set.anchors.push_back(Anchor{static_cast<int>(li), static_cast<int>(ri), r, c,
                                       Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}});
          ++count;
        }
    }
    set.level_counts.push_back(count);
  }
  return set;
}

}  // namespace psrpn
