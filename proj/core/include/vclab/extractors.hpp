#pragma once

#include <map>
#include <string>

#include "vclab/scene.hpp"
#include "vclab/tensor.hpp"

namespace vclab {

// Pixel-space measurement of a scene: recovers category and nuance for every
// axis it can find, plus the object center offset. Works from the image
// alone. On clean renders the recovery is exact up to 8-bit quantization; on
// generated images it is a best-effort estimate and object_found reports
// whether a plausible object was present at all.
struct ExtractionResult {
  std::map<std::string, AxisValue> axes;
  double jitter_x = 0.0;
  double jitter_y = 0.0;
  bool object_found = false;
};

ExtractionResult extract_scene(const DomainConfig& config,
                               const Tensor<float>& image);

}  // namespace vclab
