#pragma once

// Dense optical flow (3-level pyramidal Lucas-Kanade) and the Middlebury-style
// color-wheel rendering used to feed flow into the clue encoder.

#include "phantom/image.hpp"

namespace phantom {

// H×W per-pixel displacements in pixels.
struct FlowField {
  size_t height = 0;
  size_t width = 0;
  std::vector<float> u;  // horizontal
  std::vector<float> v;  // vertical

  static FlowField make(size_t h, size_t w) {
    return FlowField{h, w, std::vector<float>(h * w, 0.f), std::vector<float>(h * w, 0.f)};
  }
};

struct FlowConfig {
  int levels = 3;
  int window = 5;       // odd
  int iterations = 3;
  double damping = 1e-3;  // Tikhonov term added to the normal equations
  int median_passes = 1;  // 3x3 median smoothing of the final field
};

// Flow from prev to next.  Frames are converted to luma internally.
FlowField compute_optical_flow(const Image& prev, const Image& next, const FlowConfig& cfg = {});

// hue = atan2(v,u), saturation = magnitude / max magnitude, full value.
// A zero-magnitude field renders all white.
Image flow_to_rgb(const FlowField& flow);

// Flow dump: magic "PHFL" | u32 H | u32 W | H*W little-endian f32 (u,v) pairs.
void write_flow(const FlowField& flow, const std::string& path);
FlowField read_flow(const std::string& path);

}  // namespace phantom
