#pragma once

// Evaluation measures: MAE, mean Dice, mean IoU, S-measure, weighted
// F-measure, E-measure, and per-video aggregation.

#include "phantom/image.hpp"

namespace phantom {

// Soft prediction in [0,1].
struct SoftMask {
  size_t height = 0;
  size_t width = 0;
  std::vector<float> data;

  float at(size_t y, size_t x) const { return data[y * width + x]; }

  static SoftMask make(size_t h, size_t w, float fill = 0.f) {
    return SoftMask{h, w, std::vector<float>(h * w, fill)};
  }
};

struct MetricReport {
  double s_alpha = 0;
  double f_w_beta = 0;
  double e_phi = 0;
  double mae = 0;
  double m_dice = 0;
  double m_iou = 0;
};

struct PixelMetrics {
  double mae = 0, dice = 0, iou = 0;
};

// MAE on the soft prediction; Dice/IoU on the prediction binarized at 0.5.
// Both-empty frames score 1 by convention; empty gt with nonempty prediction
// scores 0.
PixelMetrics pixel_metrics_frame(const Mask& gt, const SoftMask& pred);

// Structure measure, alpha = 0.5 (object/region split at the gt centroid).
double s_measure(const Mask& gt, const SoftMask& pred);

// Weighted F-measure, beta^2 = 1, 7×7 Gaussian sigma 5 dependency weighting.
// Returns 0 for empty ground truth (callers exclude such frames from means).
double weighted_f(const Mask& gt, const SoftMask& pred);

// Enhanced-alignment measure at the single fixed threshold 0.5.
double e_measure(const Mask& gt, const SoftMask& pred);

// Frame-level metrics averaged over the evaluated frames.  Empty-gt frames
// are excluded from the weighted-F mean.
MetricReport evaluate_video(const std::vector<Mask>& gt, const std::vector<SoftMask>& pred);

MetricReport average_reports(const std::vector<MetricReport>& reports);

std::string report_json(const MetricReport& r);

// Fixed-width table with columns ordered S_alpha, F_w_beta, E_phi, M, mDice, mIoU.
std::string report_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace phantom
