#pragma once

#include <string>
#include <vector>

namespace psrpn {

enum class HeadVariant { Baseline, Naive, GcnS, LkS, GcnNS, LkNS };

const char* variant_name(HeadVariant v);
HeadVariant variant_from_name(const std::string& name);
bool variant_has_split_smoothers(HeadVariant v);

// Widths and structural switches. The default constructs the full-scale
// reference network used by the parameter audit; instantiable test and
// training networks shrink the widths.
struct ArchConfig {
  bool resnet50 = true;            // false: small single-conv-per-stage encoder
  int toy_stem = 8;                // toy encoder widths
  std::vector<int> toy_widths = {16, 24, 32, 48};  // E2..E5
  int decoder_channels = 256;
  HeadVariant variant = HeadVariant::Baseline;
  bool position_sensitive = false;
  int ps_k = 4;
  int grid_ratios = 3;  // sibling slots in the dense (non position-sensitive) layout
  int gcn_kernel = 15;
  int gcn_mid = 18;
  int lk_kernel = 15;
  int lk_width = 16;

  int encoder_width(int stage) const;  // stage 0..3 -> E2..E5 output channels
  int reg_channels() const { return position_sensitive ? 4 * ps_k * ps_k : 4 * grid_ratios; }
  int cls_channels() const { return position_sensitive ? ps_k * ps_k : grid_ratios; }
};

// One learnable site. Convs never carry a bias; a bn site owns a scale and
// a shift per channel plus (non-learnable) running statistics.
struct LayerSpec {
  enum Kind { Conv, Bn } kind;
  std::string name;
  int cin = 0, cout = 0, kh = 0, kw = 0;  // bn uses cout only

  long param_count() const {
    return kind == Conv ? static_cast<long>(cin) * cout * kh * kw : 2L * cout;
  }
};

// Every learnable layer of the configured network, in instantiation order.
std::vector<LayerSpec> enumerate_layers(const ArchConfig& cfg);

long count_params(const std::vector<LayerSpec>& layers);
long count_params(const ArchConfig& cfg);

// Reference totals for the full-scale network.
inline constexpr long kParamsBackboneDecoder = 26264128;  // resnet50 + decoder
inline constexpr long kParamsBaselineDense = 26858334;
inline constexpr long kParamsPsMinusDense = 16770;
inline constexpr long kParamsNaiveMinusBaseline = 1180672;
inline constexpr long kParamsSplitSmootherDelta = 590336;  // NS minus S, either unit

}  // namespace psrpn
