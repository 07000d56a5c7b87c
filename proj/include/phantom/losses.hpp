#pragma once

// The decoupled loss stack: segmentation (BCE + Dice), box (L1 + GIoU loss),
// prompt, text, mask, and the unit-weighted total objective.

#include "phantom/image.hpp"
#include "phantom/nn.hpp"

namespace phantom {

// Itemized loss values for one optimization step.  Component fields
// accumulate over every place the component appears (e.g. bce sums the BCE
// of all four supervised masks).
struct LossReport {
  double bce = 0, dice = 0, l1 = 0, giou_loss = 0, ce = 0;
  double l_seg = 0, l_box = 0, l_prompt = 0, l_text = 0, l_mask = 0, l_total = 0;
};

template <class S>
Tensor<S> mask_to_tensor(const Mask& mask) {
  std::vector<S> v(mask.data.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(mask.data[i]);
  return Tensor<S>({mask.height, mask.width}, std::move(v));
}

template <class S>
Mask complement(const Mask& mask) {
  Mask out = mask;
  for (auto& v : out.data) v = v ? 0 : 1;
  return out;
}

template <class S>
Tensor<S> box_to_tensor(const Box& box) {
  return Tensor<S>({4}, {S(box.x1), S(box.y1), S(box.x2), S(box.y2)});
}

namespace loss_detail {

template <class S>
Tensor<S> coord(const Tensor<S>& box, size_t i) {
  return reshape(slice_rows(reshape(box, {4, size_t(1)}), i, 1), {1});
}

}  // namespace loss_detail

// Mean BCE on clamped predictions plus Dice with smoothing eps = 1.
template <class S>
Tensor<S> bce_loss(const Tensor<S>& gt, const Tensor<S>& pred) {
  if (gt.shape() != pred.shape()) throw std::invalid_argument("bce_loss: shape mismatch");
  Tensor<S> p = clamp(pred, S(1e-7), S(1) - S(1e-7));
  Tensor<S> ones = Tensor<S>::full(gt.shape(), S(1));
  Tensor<S> term = add(mul(gt, log_(p)), mul(sub(ones, gt), log_(sub(ones, p))));
  return neg(mean(term));
}

template <class S>
Tensor<S> dice_loss(const Tensor<S>& gt, const Tensor<S>& pred) {
  if (gt.shape() != pred.shape()) throw std::invalid_argument("dice_loss: shape mismatch");
  Tensor<S> p = clamp(pred, S(1e-7), S(1) - S(1e-7));
  Tensor<S> inter = sum(mul(p, gt));
  Tensor<S> denom = add(sum(p), sum(gt));
  Tensor<S> ratio =
      mul(add_scalar(mul_scalar(inter, S(2)), S(1)), reciprocal(add_scalar(denom, S(1))));
  return add_scalar(neg(ratio), S(1));
}

template <class S>
Tensor<S> seg_loss(const Tensor<S>& gt, const Tensor<S>& pred) {
  return add(bce_loss(gt, pred), dice_loss(gt, pred));
}

// Mean absolute coordinate error plus 1 - GIoU.  A degenerate predicted box
// contributes zero intersection while the enclosing-box penalty still applies.
template <class S>
Tensor<S> box_loss(const Tensor<S>& gt, const Tensor<S>& pred) {
  if (gt.size() != 4 || pred.size() != 4)
    throw std::invalid_argument("box_loss: boxes must have 4 coordinates");
  using loss_detail::coord;
  Tensor<S> l1 = mean(abs_(sub(pred, gt)));

  auto ax1 = coord(gt, 0), ay1 = coord(gt, 1), ax2 = coord(gt, 2), ay2 = coord(gt, 3);
  auto bx1 = coord(pred, 0), by1 = coord(pred, 1), bx2 = coord(pred, 2), by2 = coord(pred, 3);
  Tensor<S> zero = Tensor<S>::zeros({1});
  auto pos = [&](const Tensor<S>& t) { return maximum(t, zero); };

  Tensor<S> inter = mul(pos(sub(minimum(ax2, bx2), maximum(ax1, bx1))),
                        pos(sub(minimum(ay2, by2), maximum(ay1, by1))));
  Tensor<S> area_a = mul(pos(sub(ax2, ax1)), pos(sub(ay2, ay1)));
  Tensor<S> area_b = mul(pos(sub(bx2, bx1)), pos(sub(by2, by1)));
  Tensor<S> uni = sub(add(area_a, area_b), inter);
  Tensor<S> iou = mul(inter, reciprocal(add_scalar(uni, S(1e-7))));
  Tensor<S> hull = mul(sub(maximum(ax2, bx2), minimum(ax1, bx1)),
                       sub(maximum(ay2, by2), minimum(ay1, by1)));
  Tensor<S> penalty = mul(sub(hull, uni), reciprocal(add_scalar(hull, S(1e-7))));
  Tensor<S> giou = sub(iou, penalty);
  return add(l1, add_scalar(neg(reshape(giou, {1})), S(1)));
}

// Mean cross-entropy over the 4 coordinate positions.
template <class S>
Tensor<S> text_loss(const std::array<size_t, 4>& target_ids, const Tensor<S>& logits) {
  if (logits.shape().size() != 2 || logits.dim(0) != 4)
    throw std::invalid_argument("text_loss: 4 logit rows required");
  return cross_entropy_rows(logits, {target_ids[0], target_ids[1], target_ids[2], target_ids[3]});
}

// Everything produced by one supervised forward pass.  Absent components
// (box prompt in ablations that drop it, background branch when disabled)
// are signaled by invalid tensors and contribute nothing.
template <class S>
struct StepOutputs {
  Tensor<S> location_logits;  // 4 × V
  Tensor<S> fg_box;           // 4, from the cue head
  Tensor<S> fg_mask_prompt;   // G_m × G_m logits
  Tensor<S> bg_mask_prompt;   // G_m × G_m logits (invalid when bg disabled)
  Tensor<S> fg_pred;          // S × S probabilities
  Tensor<S> bg_pred;          // S × S probabilities (invalid when bg disabled)
};

template <class S>
struct StepTargets {
  std::array<size_t, 4> box_bins{};  // coordinate token ids
  Tensor<S> gt_box;                  // 4
  Tensor<S> gt_mask;                 // S × S in {0,1}
  Tensor<S> gt_mask_ds;              // G_m × G_m soft (area-downsampled)
  Tensor<S> bg_mask;                 // complements of the above
  Tensor<S> bg_mask_ds;
};

// Box loss plus BCE+Dice supervision of both downsampled mask prompts.
template <class S>
Tensor<S> prompt_loss(const StepOutputs<S>& out, const StepTargets<S>& tgt) {
  Tensor<S> loss;
  auto accumulate = [&](Tensor<S> term) { loss = loss.valid() ? add(loss, term) : term; };
  if (out.fg_box.valid()) accumulate(box_loss(tgt.gt_box, out.fg_box));
  if (out.fg_mask_prompt.valid())
    accumulate(seg_loss(tgt.gt_mask_ds, sigmoid(out.fg_mask_prompt)));
  if (out.bg_mask_prompt.valid())
    accumulate(seg_loss(tgt.bg_mask_ds, sigmoid(out.bg_mask_prompt)));
  if (!loss.valid()) loss = Tensor<S>::zeros({1});
  return loss;
}

// Full-resolution BCE+Dice on the decoded masks.
template <class S>
Tensor<S> mask_loss(const StepOutputs<S>& out, const StepTargets<S>& tgt) {
  Tensor<S> loss = seg_loss(tgt.gt_mask, out.fg_pred);
  if (out.bg_pred.valid()) loss = add(loss, seg_loss(tgt.bg_mask, out.bg_pred));
  return loss;
}

struct LossWeights {
  double prompt = 1.0, text = 1.0, mask = 1.0;
};

// L_total = w_p L_prompt + w_t L_text + w_m L_mask (unit weights by default).
template <class S>
Tensor<S> total_loss(const StepOutputs<S>& out, const StepTargets<S>& tgt,
                     const LossWeights& w, LossReport* report = nullptr) {
  Tensor<S> l_prompt = prompt_loss(out, tgt);
  Tensor<S> l_mask = mask_loss(out, tgt);
  Tensor<S> l_text = out.location_logits.valid() ? text_loss(tgt.box_bins, out.location_logits)
                                                 : Tensor<S>::zeros({1});
  Tensor<S> total = add(mul_scalar(l_prompt, S(w.prompt)),
                        add(mul_scalar(l_text, S(w.text)), mul_scalar(l_mask, S(w.mask))));
  if (report) {
    report->l_prompt = double(l_prompt.data()[0]);
    report->l_text = double(l_text.data()[0]);
    report->l_mask = double(l_mask.data()[0]);
    report->l_total = double(total.data()[0]);
    auto item = [](const Tensor<S>& t) { return double(t.data()[0]); };
    report->bce = 0;
    report->dice = 0;
    auto tally = [&](const Tensor<S>& gt, const Tensor<S>& pred) {
      report->bce += item(bce_loss(gt, pred));
      report->dice += item(dice_loss(gt, pred));
    };
    if (out.fg_mask_prompt.valid()) tally(tgt.gt_mask_ds, sigmoid(out.fg_mask_prompt));
    if (out.bg_mask_prompt.valid()) tally(tgt.bg_mask_ds, sigmoid(out.bg_mask_prompt));
    tally(tgt.gt_mask, out.fg_pred);
    if (out.bg_pred.valid()) tally(tgt.bg_mask, out.bg_pred);
    if (out.fg_box.valid()) {
      report->l1 = item(mean(abs_(sub(out.fg_box, tgt.gt_box))));
      report->giou_loss = item(box_loss(tgt.gt_box, out.fg_box)) - report->l1;
      report->l_box = report->l1 + report->giou_loss;
    }
    report->ce = report->l_text;
    report->l_seg = report->bce + report->dice;
  }
  return total;
}

}  // namespace phantom
