#include "psrpn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "psrpn/ps_pool.hpp"

namespace psrpn {

const int kAucBudgets[10] = {1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};

std::vector<int> nms(const std::vector<Proposal>& props, double iou_thresh, int max_keep) {
  std::vector<int> order(props.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&props](int a, int b) {
    if (props[a].score != props[b].score) return props[a].score > props[b].score;
    return a < b;
  });
  std::vector<int> kept;
  for (int cand : order) {
    bool drop = false;
    for (int k : kept)
      if (iou(props[cand].box, props[k].box) > iou_thresh) {
        drop = true;
        break;
      }
    if (!drop) {
      kept.push_back(cand);
      if (max_keep > 0 && static_cast<int>(kept.size()) >= max_keep) break;
    }
  }
  return kept;
}

std::vector<Proposal> proposals_from_maps(const std::vector<Tensor4f>& reg,
                                          const std::vector<Tensor4f>& cls,
                                          const AnchorSet& anchors, int ps_k,
                                          const ProposalConfig& cfg, double img_w, double img_h,
                                          long* clamp_count) {
  if (reg.size() != anchors.levels.size() || cls.size() != reg.size())
    throw ShapeError("proposals_from_maps: need one reg and cls map per level");

  std::vector<Proposal> scored;
  scored.reserve(anchors.anchors.size());
  for (const Anchor& a : anchors.anchors) {
    std::array<double, 5> t;
    if (anchors.window_mode)
      t = ps_pool_window(reg[a.level], cls[a.level], window_of(a, anchors), ps_k);
    else
      t = read_cell(reg[a.level], cls[a.level], CellRef{a.shape, a.row, a.col});
    const Box decoded = decode_box(a.box, {t[0], t[1], t[2], t[3]}, clamp_count);
    const Box clipped = clip_box(decoded, img_w, img_h);
    if (!clipped.valid()) continue;
    scored.push_back(Proposal{clipped, 1.0 / (1.0 + std::exp(-t[4]))});
  }

  std::vector<int> order(scored.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&scored](int a, int b) {
    if (scored[a].score != scored[b].score) return scored[a].score > scored[b].score;
    return a < b;
  });
  if (cfg.pre_nms_top_n > 0 && static_cast<int>(order.size()) > cfg.pre_nms_top_n)
    order.resize(cfg.pre_nms_top_n);
  std::vector<Proposal> pool;
  pool.reserve(order.size());
  for (int i : order) pool.push_back(scored[i]);

  const auto kept = nms(pool, cfg.nms_iou, cfg.post_nms_top_n);
  std::vector<Proposal> out;
  out.reserve(kept.size());
  for (int i : kept) out.push_back(pool[i]);
  return out;
}

std::vector<Proposal> propose_image(Model<float>& model, const Tensor4f& image,
                                    const AnchorSet& anchors, const ProposalConfig& cfg,
                                    long* clamp_count) {
  if (image.n != 1 || image.c != 3)
    throw ShapeError("propose_image: expected a 1x3xHxW image, got " + image.shape_str());
  if (anchors.window_mode != model.cfg.position_sensitive)
    throw ConfigError("propose_image: anchor mode does not match the head layout");
  if (anchors.levels.empty() || anchors.levels[0].h * anchors.levels[0].stride != image.h ||
      anchors.levels[0].w * anchors.levels[0].stride != image.w)
    throw ShapeError("propose_image: anchors were built for a different input size");

  Graph<float> g(false);
  const auto maps = forward_model(g, model, g.input(image));
  std::vector<Tensor4f> reg, cls;
  for (std::size_t i = 0; i < maps.reg.size(); ++i) {
    reg.push_back(g.value(maps.reg[i]));
    cls.push_back(g.value(maps.cls[i]));
  }
  return proposals_from_maps(reg, cls, anchors, model.cfg.ps_k, cfg,
                             static_cast<double>(image.w), static_cast<double>(image.h),
                             clamp_count);
}

namespace {

// Greedy matching in proposal score order; returns which eligible targets
// were hit. Ignored targets are unmatchable.
std::vector<char> match_targets(const std::vector<Proposal>& props,
                                const std::vector<GtBox>& gts, int n, double thresh) {
  std::vector<char> hit(gts.size(), 0);
  const int use = std::min<int>(n, static_cast<int>(props.size()));
  for (int p = 0; p < use; ++p) {
    int best = -1;
    double best_v = -1.0;
    for (std::size_t t = 0; t < gts.size(); ++t) {
      if (gts[t].ignore || hit[t]) continue;
      const double v = iou(props[p].box, gts[t].box);
      if (v >= thresh && v > best_v) {
        best = static_cast<int>(t);
        best_v = v;
      }
    }
    if (best >= 0) hit[best] = 1;
  }
  return hit;
}

constexpr double kThreshLo = 0.50, kThreshStep = 0.05;
constexpr int kThreshCount = 10;  // 0.50 .. 0.95

}  // namespace

double recall_at(const std::vector<Proposal>& props, const std::vector<GtBox>& gts, int n,
                 double thresh) {
  long eligible = 0, matched = 0;
  const auto hit = match_targets(props, gts, n, thresh);
  for (std::size_t t = 0; t < gts.size(); ++t) {
    if (gts[t].ignore) continue;
    ++eligible;
    if (hit[t]) ++matched;
  }
  if (eligible == 0) return 0.0;
  return static_cast<double>(matched) / static_cast<double>(eligible);
}

double average_recall(const std::vector<ImageEval>& images, int n) {
  double sum = 0.0;
  for (int ti = 0; ti < kThreshCount; ++ti) {
    const double thresh = kThreshLo + kThreshStep * ti;
    long eligible = 0, matched = 0;
    for (const ImageEval& im : images) {
      const auto hit = match_targets(im.props, im.gts, n, thresh);
      for (std::size_t t = 0; t < im.gts.size(); ++t) {
        if (im.gts[t].ignore) continue;
        ++eligible;
        if (hit[t]) ++matched;
      }
    }
    sum += eligible > 0 ? static_cast<double>(matched) / eligible : 0.0;
  }
  return sum / kThreshCount;
}

double ar_auc(const std::vector<ImageEval>& images) {
  double ar[10];
  for (int i = 0; i < 10; ++i) ar[i] = average_recall(images, kAucBudgets[i]);
  double area = 0.0;
  for (int i = 1; i < 10; ++i) {
    const double dx = std::log10(static_cast<double>(kAucBudgets[i])) -
                      std::log10(static_cast<double>(kAucBudgets[i - 1]));
    area += 0.5 * (ar[i] + ar[i - 1]) * dx;
  }
  return area / 3.0;  // the budget axis spans three decades
}

SizeStrata strata_recall(const std::vector<ImageEval>& images, int n) {
  constexpr double kSmall = 32.0 * 32.0, kLarge = 96.0 * 96.0;
  SizeStrata out;
  long hits[3] = {0, 0, 0}, counts[3] = {0, 0, 0};
  for (int ti = 0; ti < kThreshCount; ++ti) {
    const double thresh = kThreshLo + kThreshStep * ti;
    for (const ImageEval& im : images) {
      const auto hit = match_targets(im.props, im.gts, n, thresh);
      for (std::size_t t = 0; t < im.gts.size(); ++t) {
        if (im.gts[t].ignore) continue;
        const double area = im.gts[t].box.area();
        const int bucket = area < kSmall ? 0 : (area > kLarge ? 2 : 1);
        ++counts[bucket];
        if (hit[t]) ++hits[bucket];
      }
    }
  }
  out.n_small = counts[0] / kThreshCount;
  out.n_medium = counts[1] / kThreshCount;
  out.n_large = counts[2] / kThreshCount;
  out.small = counts[0] ? static_cast<double>(hits[0]) / counts[0] : 0.0;
  out.medium = counts[1] ? static_cast<double>(hits[1]) / counts[1] : 0.0;
  out.large = counts[2] ? static_cast<double>(hits[2]) / counts[2] : 0.0;
  return out;
}

}  // namespace psrpn
