#pragma once

// Per-timestep clue-window assembly: three consecutive frames, a rendered
// flow image, and AnyRes patches of the current frame, all resized to S×S.

#include "phantom/flow.hpp"
#include "phantom/image.hpp"

namespace phantom {

struct VideoSample {
  std::string id;
  std::vector<Image> frames;
  std::vector<Mask> masks;   // may be empty for unlabeled inference input
  std::vector<Box> boxes;    // parallel to masks
};

struct ClueBundle {
  std::vector<Image> temporal;  // I_{t-2}, I_{t-1}, I_t, rendered flow
  std::vector<Image> spatial;   // K AnyRes patches of I_t

  size_t count() const { return temporal.size() + spatial.size(); }
};

// Which clue images enter the bundle (the visual-input ablation axis).
enum class ClueMode {
  kImageOnly,     // I_t alone
  kImageSpatial,  // I_t + patches
  kFull,          // 3 frames + flow + patches
};

// t is 1-indexed; the first two frames of a video are never predicted.
ClueBundle assemble_clue_window(const std::vector<Image>& frames, size_t t, size_t clue_size,
                                size_t anyres_grid, ClueMode mode = ClueMode::kFull);

}  // namespace phantom
