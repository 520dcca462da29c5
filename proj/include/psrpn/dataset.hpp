#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psrpn/assign.hpp"
#include "psrpn/rng.hpp"
#include "psrpn/tensor.hpp"

namespace psrpn {

struct ImageAnnotation {
  std::string id;
  std::string file;  // image container path, relative to the annotation file
  int width = 0, height = 0;
  std::vector<GtBox> gts;
};

struct DatasetIndex {
  std::vector<ImageAnnotation> images;  // ordered by id
};

// Detection-style json: images carry size and file name, annotations carry
// xywh boxes and a crowd flag. Boxes with non-positive size are dropped and
// tallied in warn_count. Missing keys raise ParseError naming the path.
DatasetIndex parse_detection_json(const std::string& path, long* warn_count = nullptr);
std::string emit_detection_json(const DatasetIndex& index);

// Single-image xml annotation with 1-based inclusive corners; objects
// marked difficult become ignored targets.
ImageAnnotation parse_voc_xml(const std::string& path);

struct TransformResult {
  Tensor4f image;
  std::vector<GtBox> gts;
};

// Long side to 640, zero pad bottom/right to 640x640.
TransformResult transform_voc640(const Tensor4f& img, const std::vector<GtBox>& gts);

// Short side to 768, then a seeded random 768x768 crop; targets are shifted,
// clipped, and dropped when nothing of them survives.
TransformResult transform_coco768(const Tensor4f& img, const std::vector<GtBox>& gts, Rng& rng);

// Pad bottom/right to the next multiple of 64; geometry otherwise intact.
TransformResult transform_test_pad(const Tensor4f& img, const std::vector<GtBox>& gts);

// Filled rectangles and ellipses on textured noise, with exact target
// boxes. Fully determined by (seed, index).
struct SynthSample {
  Tensor4f image;  // 1x3xSxS in [0,1]
  std::vector<GtBox> gts;
};
SynthSample synth_shapes(std::uint64_t seed, int index, int size = 128, int min_shapes = 1,
                         int max_shapes = 8);

// Writes count synthetic samples under dir: images/img_NNNNN.pft plus
// annotations.json in the detection format above.
void materialize_synth(const std::string& dir, std::uint64_t seed, int count, int size = 128,
                       int min_shapes = 1, int max_shapes = 8);

// Loads the image container behind an annotation entry and checks its size.
Tensor4f load_annotated_image(const std::string& anno_dir, const ImageAnnotation& im);

}  // namespace psrpn
