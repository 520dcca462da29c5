#pragma once

#include <string>
#include <vector>

#include "psrpn/anchors.hpp"
#include "psrpn/assign.hpp"
#include "psrpn/box.hpp"
#include "psrpn/model.hpp"

namespace psrpn {

struct Proposal {
  Box box;
  double score = 0.0;
};

struct ProposalConfig {
  int pre_nms_top_n = 6000;
  int post_nms_top_n = 1000;
  double nms_iou = 0.7;
};

// Greedy descending-score suppression; equal scores keep the lower index.
// Returns kept indices in the order they were kept.
std::vector<int> nms(const std::vector<Proposal>& props, double iou_thresh,
                     int max_keep = -1);

// Pool/read, decode, clip, rank, and suppress over already-computed
// prediction maps, one reg and cls tensor per pyramid level.
std::vector<Proposal> proposals_from_maps(const std::vector<Tensor4f>& reg,
                                          const std::vector<Tensor4f>& cls,
                                          const AnchorSet& anchors, int ps_k,
                                          const ProposalConfig& cfg, double img_w, double img_h,
                                          long* clamp_count = nullptr);

// Scored, decoded, clipped, suppressed proposals for one image.
// clamp_count tallies decode clamps across calls when given.
std::vector<Proposal> propose_image(Model<float>& model, const Tensor4f& image,
                                    const AnchorSet& anchors, const ProposalConfig& cfg,
                                    long* clamp_count = nullptr);

// Recall of the eligible targets among the top n proposals at one overlap
// threshold. Proposals are consumed greedily in score order; a target
// counts once; ignored targets match nothing and do not enter the
// denominator.
double recall_at(const std::vector<Proposal>& props, const std::vector<GtBox>& gts, int n,
                 double thresh);

struct ImageEval {
  std::vector<Proposal> props;  // already suppressed, score order
  std::vector<GtBox> gts;
};

// Mean recall over overlap thresholds 0.50:0.05:0.95 at a proposal budget,
// averaged over eligible targets pooled across images.
double average_recall(const std::vector<ImageEval>& images, int n);

// Area under the AR-versus-budget curve on a log10 axis over budgets
// 1..1000, normalised by the 3-decade span.
double ar_auc(const std::vector<ImageEval>& images);
extern const int kAucBudgets[10];

struct SizeStrata {
  double small = 0.0, medium = 0.0, large = 0.0;  // AR at a fixed budget per bucket
  long n_small = 0, n_medium = 0, n_large = 0;
};

// Per-size-bucket average recall at one budget; bucket edges 32^2 and 96^2
// on the target area.
SizeStrata strata_recall(const std::vector<ImageEval>& images, int n);

}  // namespace psrpn
