#include "psrpn/assign.hpp"

#include <algorithm>

#include "psrpn/errors.hpp"

namespace psrpn {

AssignResult assign_anchors(const std::vector<Box>& anchors, const std::vector<GtBox>& gts,
                            double hi, double lo) {
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0))
    throw ConfigError("assign_anchors: need 0 <= lo < hi <= 1");
  const int n = static_cast<int>(anchors.size());
  AssignResult res;
  res.labels.assign(n, -1);
  res.matched_gt.assign(n, -1);
  if (gts.empty()) return res;

  // best real target per anchor, and best anchor per real target
  std::vector<double> best_iou(n, 0.0);
  std::vector<double> best_gt_iou(gts.size(), 0.0);
  std::vector<int> best_gt_anchor(gts.size(), -1);
  for (int a = 0; a < n; ++a) {
    double ignore_iou = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g].box);
      if (gts[g].ignore) {
        ignore_iou = std::max(ignore_iou, v);
        continue;
      }
      if (v > best_iou[a]) {
        best_iou[a] = v;
        res.matched_gt[a] = static_cast<int>(g);
      }
      if (v > best_gt_iou[g]) {
        best_gt_iou[g] = v;
        best_gt_anchor[g] = a;
      }
    }
    if (best_iou[a] > hi) {
      res.labels[a] = 1;
    } else if (best_iou[a] < lo) {
      // plain background unless it sits on a region we must not train on
      res.labels[a] = ignore_iou > lo ? 0 : -1;
    } else {
      res.labels[a] = 0;
    }
  }

  // every real target keeps its best anchor if the overlap is meaningful;
  // ties were already broken toward the lowest anchor index by the strict
  // improvement test above
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].ignore || best_gt_anchor[g] < 0 || best_gt_iou[g] <= lo) continue;
    const int a = best_gt_anchor[g];
    res.labels[a] = 1;
    res.matched_gt[a] = static_cast<int>(g);
  }
  for (int a = 0; a < n; ++a)
    if (res.labels[a] != 1) res.matched_gt[a] = -1;
  return res;
}

MiniBatch sample_minibatch(const AssignResult& assign, int anchors_per_image, Rng& rng) {
  if (anchors_per_image < 2) throw ConfigError("sample_minibatch: batch too small");
  std::vector<int> pos, neg;
  for (int a = 0; a < static_cast<int>(assign.labels.size()); ++a) {
    if (assign.labels[a] > 0) pos.push_back(a);
    if (assign.labels[a] < 0) neg.push_back(a);
  }
  auto draw = [&rng](std::vector<int>& from, int want, std::vector<int>& into) {
    // partial fisher-yates across the first `want` slots
    const int take = std::min<int>(want, static_cast<int>(from.size()));
    for (int i = 0; i < take; ++i) {
      const int j = rng.uniform_int(i, static_cast<int>(from.size()) - 1);
      std::swap(from[i], from[j]);
      into.push_back(from[i]);
    }
    return take;
  };
  MiniBatch mb;
  std::vector<int> chosen;
  const int npos = draw(pos, anchors_per_image / 2, chosen);
  for (int i = 0; i < npos; ++i) mb.labels.push_back(1);
  const int nneg = draw(neg, anchors_per_image - npos, chosen);
  for (int i = 0; i < nneg; ++i) mb.labels.push_back(-1);
  mb.anchor_ids = std::move(chosen);
  return mb;
}

}  // namespace psrpn
