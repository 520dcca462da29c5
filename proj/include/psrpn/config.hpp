#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psrpn/arch.hpp"
#include "psrpn/eval.hpp"

namespace psrpn {

struct Config {
  int version = 1;
  ArchConfig arch;

  // anchors
  bool window_anchors = false;  // must agree with arch.position_sensitive
  std::vector<double> grid_ratio_values = {0.5, 1.0, 2.0};
  double grid_scale = 8.0;

  // bn
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  // sampler
  double iou_hi = 0.7;
  double iou_lo = 0.3;
  int anchors_per_image = 64;
  int images_per_batch = 2;

  // trainer
  int epochs = 20;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 7;

  // eval
  ProposalConfig proposals;

  // dataset
  std::string dataset_kind = "synth";  // synth | detection-json | voc-dir
  std::string dataset_path;
  std::string transform = "none";  // none | voc640 | coco768 | pad64
  int synth_count = 1000;
  int synth_size = 128;
  int synth_min_shapes = 1;
  int synth_max_shapes = 8;

  std::string hash;  // of the canonical serialisation, set on load
};

std::uint64_t fnv1a64(const std::string& bytes);

// Strict loader: unknown keys anywhere are an error, omitted keys take the
// defaults above, cross-field consistency is enforced.
Config load_config(const std::string& path);
Config parse_config(const std::string& text, const std::string& path);

// The canonical serialisation the hash is computed over, and the 16-hex
// digest of it that every output embeds.
std::string canonical_config(const Config& cfg);
std::string config_hash(const Config& cfg);

std::string default_config_text();

}  // namespace psrpn
