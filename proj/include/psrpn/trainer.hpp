#pragma once

#include <string>
#include <vector>

#include "psrpn/anchors.hpp"
#include "psrpn/assign.hpp"
#include "psrpn/config.hpp"
#include "psrpn/model.hpp"

namespace psrpn {

// Stream tags off the run seed; every consumer forks its own generator.
inline constexpr std::uint64_t kSeedInit = 1;
inline constexpr std::uint64_t kSeedData = 2;
inline constexpr std::uint64_t kSeedTrain = 3;

// Epoch e runs at base_lr * 10^(-e/10).
double lr_at(double base_lr, int epoch);

struct TrainSample {
  Tensor4f image;  // normalised network input
  std::vector<GtBox> gts;
};

// Training images from the configured source, already transformed and
// normalised. Synth sources honour offset/count so train and validation
// splits come from disjoint indices of one stream.
std::vector<TrainSample> load_training_set(const Config& cfg, int offset, int count);

// Evaluation samples keep an id so proposal files can be joined back to
// their targets, and only deterministic transforms apply: the random crop
// becomes a resize plus pad.
struct EvalSample {
  std::string id;
  Tensor4f image;
  std::vector<GtBox> gts;
};
std::vector<EvalSample> load_eval_set(const Config& cfg, int offset, int count);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  double mean_reg = 0.0;
  double mean_cls_pos = 0.0;
  double mean_cls_neg = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
};

// Momentum SGD over one model. Deterministic for a fixed config, seed, and
// data: one run's checkpoint is byte-identical to a rerun's.
class Trainer {
 public:
  Trainer(Model<float>& model, const Config& cfg, std::vector<TrainSample> data);

  // Trains for cfg.epochs. When log_csv is non-empty, appends one line per
  // epoch: epoch,lr,loss,reg,cls_pos,cls_neg.
  TrainResult run(const std::string& log_csv = "");

  const AnchorSet& anchors() const { return anchors_; }

 private:
  void step(double lr);
  LossValues<float> train_image(int sample_idx, Rng& rng);

  Model<float>& model_;
  Config cfg_;
  std::vector<TrainSample> data_;
  AnchorSet anchors_;
  std::vector<AssignResult> assignments_;
  std::vector<Tensor4f> momentum_;  // aligned with model_.ordered
};

}  // namespace psrpn
