#include "phantom/clues.hpp"

#include <stdexcept>

namespace phantom {

ClueBundle assemble_clue_window(const std::vector<Image>& frames, size_t t, size_t clue_size,
                                size_t anyres_grid, ClueMode mode) {
  if (t < 3 || t > frames.size())
    throw std::out_of_range("assemble_clue_window: t must be in [3, T] (1-indexed)");
  const Image& cur = frames[t - 1];
  ClueBundle bundle;
  if (mode == ClueMode::kFull) {
    bundle.temporal.push_back(resize_bilinear(frames[t - 3], clue_size, clue_size));
    bundle.temporal.push_back(resize_bilinear(frames[t - 2], clue_size, clue_size));
    bundle.temporal.push_back(resize_bilinear(cur, clue_size, clue_size));
    FlowField flow = compute_optical_flow(frames[t - 2], cur);
    bundle.temporal.push_back(resize_bilinear(flow_to_rgb(flow), clue_size, clue_size));
  } else {
    bundle.temporal.push_back(resize_bilinear(cur, clue_size, clue_size));
  }
  if (mode != ClueMode::kImageOnly) {
    for (auto& tile : anyres_split(cur, anyres_grid))
      bundle.spatial.push_back(resize_bilinear(tile, clue_size, clue_size));
  }
  return bundle;
}

}  // namespace phantom
