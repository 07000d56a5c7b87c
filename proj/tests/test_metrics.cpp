#include "phantom/metrics.hpp"
#include "phantom/nn.hpp"

#include <doctest.h>

#include <cmath>

using namespace phantom;

namespace {

Mask rand_mask(size_t h, size_t w, Rng& rng, double density = 0.5) {
  Mask m = Mask::make(h, w);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

SoftMask rand_soft(size_t h, size_t w, Rng& rng) {
  SoftMask s = SoftMask::make(h, w);
  for (auto& v : s.data) v = float(rng.uniform());
  return s;
}

SoftMask from_mask(const Mask& m) {
  SoftMask s = SoftMask::make(m.height, m.width);
  for (size_t i = 0; i < m.data.size(); ++i) s.data[i] = float(m.data[i]);
  return s;
}

// Independent brute-force re-derivation of the pixel metrics.
PixelMetrics brute_force(const Mask& gt, const SoftMask& pred) {
  PixelMetrics r;
  double inter = 0, gt_sum = 0, pr_sum = 0;
  for (size_t i = 0; i < gt.data.size(); ++i) {
    r.mae += std::fabs(double(pred.data[i]) - double(gt.data[i]));
    bool p = pred.data[i] >= 0.5f;
    bool g = gt.data[i] != 0;
    inter += p && g;
    gt_sum += g;
    pr_sum += p;
  }
  r.mae /= double(gt.data.size());
  if (gt_sum == 0 && pr_sum == 0) {
    r.dice = r.iou = 1;
  } else if (gt_sum == 0) {
    r.dice = r.iou = 0;
  } else {
    r.dice = 2 * inter / (gt_sum + pr_sum);
    r.iou = inter / (gt_sum + pr_sum - inter);
  }
  return r;
}

}  // namespace

TEST_CASE("pixel metrics hand case on a 2x2 frame") {
  Mask gt = Mask::make(2, 2);
  gt.at(0, 0) = 1;
  SoftMask pred = SoftMask::make(2, 2);
  pred.data = {1.f, 1.f, 0.f, 0.f};
  PixelMetrics r = pixel_metrics_frame(gt, pred);
  CHECK(r.mae == doctest::Approx(0.25));
  CHECK(r.dice == doctest::Approx(2.0 / 3.0));
  CHECK(r.iou == doctest::Approx(0.5));
}

TEST_CASE("pixel metrics match brute force on random 8x8 pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Mask gt = rand_mask(8, 8, rng, rng.uniform(0.1, 0.9));
    SoftMask pred = rand_soft(8, 8, rng);
    PixelMetrics got = pixel_metrics_frame(gt, pred);
    PixelMetrics want = brute_force(gt, pred);
    CHECK(got.mae == doctest::Approx(want.mae).epsilon(1e-12));
    CHECK(got.dice == doctest::Approx(want.dice).epsilon(1e-12));
    CHECK(got.iou == doctest::Approx(want.iou).epsilon(1e-12));
  }
}

TEST_CASE("empty-frame conventions") {
  Mask empty = Mask::make(4, 4);
  SoftMask zero = SoftMask::make(4, 4);
  PixelMetrics both = pixel_metrics_frame(empty, zero);
  CHECK(both.dice == doctest::Approx(1.0));
  CHECK(both.iou == doctest::Approx(1.0));

  SoftMask spurious = SoftMask::make(4, 4);
  spurious.data[5] = 1.f;
  PixelMetrics fp = pixel_metrics_frame(empty, spurious);
  CHECK(fp.dice == doctest::Approx(0.0));
  CHECK(fp.iou == doctest::Approx(0.0));
}

TEST_CASE("structure measures reward perfect predictions and punish complements") {
  Rng rng(9);
  Mask gt = Mask::make(16, 16);
  for (size_t y = 4; y < 12; ++y)
    for (size_t x = 5; x < 11; ++x) gt.at(y, x) = 1;
  SoftMask perfect = from_mask(gt);
  CHECK(s_measure(gt, perfect) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(weighted_f(gt, perfect) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(e_measure(gt, perfect) == doctest::Approx(1.0).epsilon(1e-3));

  SoftMask comp = SoftMask::make(16, 16);
  for (size_t i = 0; i < comp.data.size(); ++i) comp.data[i] = 1.f - perfect.data[i];
  CHECK(s_measure(gt, comp) < 0.5);
  CHECK(weighted_f(gt, comp) < 0.5);
  CHECK(e_measure(gt, comp) < 0.5);
  (void)rng;
}

TEST_CASE("dice never falls below iou") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Mask gt = rand_mask(8, 8, rng);
    SoftMask pred = rand_soft(8, 8, rng);
    PixelMetrics r = pixel_metrics_frame(gt, pred);
    CHECK(r.dice >= r.iou - 1e-12);
  }
}

TEST_CASE("video evaluation averages frames and reports serialize") {
  Rng rng(13);
  std::vector<Mask> gts;
  std::vector<SoftMask> preds;
  for (int f = 0; f < 3; ++f) {
    gts.push_back(rand_mask(8, 8, rng));
    preds.push_back(from_mask(gts.back()));
  }
  MetricReport r = evaluate_video(gts, preds);
  CHECK(r.m_dice == doctest::Approx(1.0));
  CHECK(r.mae == doctest::Approx(0.0));

  std::string json = report_json(r);
  CHECK(json.find("\"s_alpha\"") != std::string::npos);
  CHECK(json.find("\"m_dice\"") != std::string::npos);
  CHECK(json.find("\"m_iou\"") != std::string::npos);

  MetricReport avg = average_reports({r, r});
  CHECK(avg.m_dice == doctest::Approx(r.m_dice));

  std::string table = report_table({{"run-a", r}});
  CHECK(table.find("run-a") != std::string::npos);
  // Column order is fixed: structure, weighted F, alignment, MAE, Dice, IoU.
  CHECK(table.find("S_a") < table.find("F_wb"));
  CHECK(table.find("F_wb") < table.find("E_phi"));
  CHECK(table.find("mDice") < table.find("mIoU"));
}
