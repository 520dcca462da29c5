#pragma once

#include <cstdint>
#include <vector>

#include "psrpn/box.hpp"
#include "psrpn/rng.hpp"

namespace psrpn {

struct GtBox {
  Box box;
  bool ignore = false;  // crowd regions and annotations marked difficult
};

// labels: +1 positive, -1 negative, 0 excluded from sampling.
struct AssignResult {
  std::vector<std::int8_t> labels;
  std::vector<int> matched_gt;  // index of the matched target, -1 otherwise
};

AssignResult assign_anchors(const std::vector<Box>& anchors, const std::vector<GtBox>& gts,
                            double hi = 0.7, double lo = 0.3);

// Training minibatch for one image: up to half positives drawn uniformly
// without replacement, negatives fill the remainder.
struct MiniBatch {
  std::vector<int> anchor_ids;
  std::vector<std::int8_t> labels;  // +1 / -1, aligned with anchor_ids
};

MiniBatch sample_minibatch(const AssignResult& assign, int anchors_per_image, Rng& rng);

}  // namespace psrpn
