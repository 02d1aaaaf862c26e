#pragma once

#include <optional>
#include <string>

#include "raydepth/geometry.hpp"
#include "raydepth/image.hpp"

namespace raydepth {

// One (image, dense depth, intrinsics) training/eval triplet.
struct RenderedSample {
  Image image;
  DepthMap depth;
  PinholeIntrinsics intrinsics;
  std::optional<Extrinsics> extrinsics;
  bool dense = true;
  std::string id;
};

}  // namespace raydepth
