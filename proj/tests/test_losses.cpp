#include "phantom/losses.hpp"

#include <doctest.h>

#include <cmath>

using namespace phantom;

namespace {

Tensor<double> rand_tensor(const std::vector<size_t>& shape, Rng& rng, bool binary = false) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = binary ? double(rng.uniform() < 0.5) : rng.uniform(0.05, 0.95);
  return Tensor<double>(shape, std::move(v));
}

}  // namespace

TEST_CASE("uniform half prediction gives BCE of ln 2") {
  Tensor<double> gt({2, 2}, {1, 1, 0, 0});
  Tensor<double> pred = Tensor<double>::full({2, 2}, 0.5);
  CHECK(bce_loss(gt, pred).data()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("dice loss hand case: half-covered target at 0.5 prediction") {
  Tensor<double> gt({2, 2}, {1, 1, 0, 0});
  Tensor<double> pred = Tensor<double>::full({2, 2}, 0.5);
  // intersection 1, sums 2 + 2, smoothing 1: 1 - 3/5 = 0.4
  CHECK(dice_loss(gt, pred).data()[0] == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(seg_loss(gt, pred).data()[0] == doctest::Approx(std::log(2.0) + 0.4).epsilon(1e-6));
}

TEST_CASE("dice loss is zero for empty gt with empty prediction") {
  Tensor<double> gt = Tensor<double>::zeros({3, 3});
  Tensor<double> pred = Tensor<double>::zeros({3, 3});
  CHECK(dice_loss(gt, pred).data()[0] == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("perfect prediction drives seg loss toward zero") {
  Rng rng(1);
  Tensor<double> gt = rand_tensor({4, 4}, rng, true);
  CHECK(seg_loss(gt, gt).data()[0] < 1e-4);
}

TEST_CASE("bce and dice are pixel-permutation invariant") {
  Rng rng(2);
  Tensor<double> gt = rand_tensor({1, 8}, rng, true);
  Tensor<double> pred = rand_tensor({1, 8}, rng);
  std::vector<size_t> perm{3, 1, 7, 0, 5, 2, 6, 4};
  std::vector<double> g2(8), p2(8);
  for (size_t i = 0; i < 8; ++i) {
    g2[i] = gt.data()[perm[i]];
    p2[i] = pred.data()[perm[i]];
  }
  Tensor<double> gt_p({1, 8}, std::move(g2)), pred_p({1, 8}, std::move(p2));
  CHECK(bce_loss(gt, pred).data()[0] == doctest::Approx(bce_loss(gt_p, pred_p).data()[0]));
  CHECK(dice_loss(gt, pred).data()[0] == doctest::Approx(dice_loss(gt_p, pred_p).data()[0]));
}

TEST_CASE("box loss hand case: centered half-size box scores exactly one") {
  Tensor<double> gt({4}, {0.0, 0.0, 1.0, 1.0});
  Tensor<double> pred({4}, {0.25, 0.25, 0.75, 0.75});
  // L1 = 0.25; IoU = 0.25, hull penalty 0 -> loss = 0.25 + (1 - 0.25) = 1.
  CHECK(box_loss(gt, pred).data()[0] == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("box loss is zero for identical boxes and exceeds one when disjoint") {
  Tensor<double> a({4}, {0.1, 0.2, 0.5, 0.6});
  CHECK(box_loss(a, a).data()[0] == doctest::Approx(0.0).epsilon(1e-5));
  Tensor<double> b({4}, {0.6, 0.7, 0.9, 0.95});
  CHECK(box_loss(a, b).data()[0] > 1.0);  // hull penalty pushes past 1 - IoU = 1
}

TEST_CASE("uniform logits give cross entropy of ln vocabulary size") {
  Tensor<double> logits = Tensor<double>::zeros({4, 1102});
  CHECK(text_loss<double>({0, 5, 500, 1101}, logits).data()[0] ==
        doctest::Approx(std::log(1102.0)).epsilon(1e-6));
  CHECK_THROWS_AS(text_loss<double>({0, 0, 0, 0}, Tensor<double>::zeros({3, 1102})),
                  std::invalid_argument);
}

TEST_CASE("prompt loss is the sum of its present components") {
  Rng rng(3);
  StepTargets<double> tgt;
  tgt.gt_box = Tensor<double>({4}, {0.2, 0.2, 0.7, 0.7});
  tgt.gt_mask_ds = rand_tensor({4, 4}, rng, true);
  tgt.bg_mask_ds = rand_tensor({4, 4}, rng, true);
  StepOutputs<double> out;
  out.fg_box = Tensor<double>({4}, {0.25, 0.3, 0.6, 0.65});
  out.fg_mask_prompt = rand_tensor({4, 4}, rng);
  out.bg_mask_prompt = rand_tensor({4, 4}, rng);

  double expect = box_loss(tgt.gt_box, out.fg_box).data()[0] +
                  seg_loss(tgt.gt_mask_ds, sigmoid(out.fg_mask_prompt)).data()[0] +
                  seg_loss(tgt.bg_mask_ds, sigmoid(out.bg_mask_prompt)).data()[0];
  CHECK(prompt_loss(out, tgt).data()[0] == doctest::Approx(expect).epsilon(1e-9));

  // Dropping the background prompt removes exactly its term.
  StepOutputs<double> no_bg = out;
  no_bg.bg_mask_prompt = Tensor<double>();
  double expect_fg = expect - seg_loss(tgt.bg_mask_ds, sigmoid(out.bg_mask_prompt)).data()[0];
  CHECK(prompt_loss(no_bg, tgt).data()[0] == doctest::Approx(expect_fg).epsilon(1e-9));
}

TEST_CASE("total loss is the unit-weighted sum and the report itemizes it") {
  Rng rng(4);
  StepTargets<double> tgt;
  tgt.box_bins = {100, 200, 300, 400};
  tgt.gt_box = Tensor<double>({4}, {0.1, 0.2, 0.6, 0.7});
  tgt.gt_mask = rand_tensor({8, 8}, rng, true);
  tgt.gt_mask_ds = rand_tensor({4, 4}, rng, true);
  tgt.bg_mask = rand_tensor({8, 8}, rng, true);
  tgt.bg_mask_ds = rand_tensor({4, 4}, rng, true);

  StepOutputs<double> out;
  out.location_logits = rand_tensor({4, 1102}, rng);
  out.fg_box = Tensor<double>({4}, {0.15, 0.25, 0.55, 0.6});
  out.fg_mask_prompt = rand_tensor({4, 4}, rng);
  out.bg_mask_prompt = rand_tensor({4, 4}, rng);
  out.fg_pred = rand_tensor({8, 8}, rng);
  out.bg_pred = rand_tensor({8, 8}, rng);

  LossReport report;
  Tensor<double> total = total_loss(out, tgt, LossWeights{}, &report);
  CHECK(total.data()[0] ==
        doctest::Approx(report.l_prompt + report.l_text + report.l_mask).epsilon(1e-9));
  CHECK(report.l_total == doctest::Approx(total.data()[0]));
  CHECK(report.l_box == doctest::Approx(report.l1 + report.giou_loss).epsilon(1e-9));
  CHECK(report.l_seg == doctest::Approx(report.bce + report.dice).epsilon(1e-9));
  CHECK(report.ce == doctest::Approx(report.l_text));
}

TEST_CASE("mask complement flips every pixel") {
  Mask m = Mask::make(2, 2);
  m.at(0, 1) = 1;
  Mask c = complement<double>(m);
  CHECK(c.at(0, 0) == 1);
  CHECK(c.at(0, 1) == 0);
}
