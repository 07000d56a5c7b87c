#pragma once

// Dynamic foreground visual token scoring and multi-cue generation: the
// scoring network gates each fused token into foreground/background mass,
// pooled aggregates feed a shared cue MLP, mask-prompt decoder, and a
// foreground-only box decoder.

#include "phantom/nn.hpp"

namespace phantom {

struct CueConfig {
  size_t d_llm = 128;
  size_t d_cue = 64;        // d_s, the segmenter feature width
  size_t pool_tokens = 64;  // P, per-layer pool target of the aggregation
  size_t cue_tokens = 64;   // C, long-cue token count (desk preset)
  size_t box_tokens = 4;    // short pool target
  size_t mask_grid = 16;    // G_m
  size_t hidden = 128;
  size_t sources = 1;       // clue images interleaved per grid position
  long motion_source = -1;  // index of the flow rendering among them, -1 if none
};

template <class S>
struct CueSet {
  Tensor<S> fg_cue;      // C × d_cue
  Tensor<S> fg_mask;     // G_m × G_m logits
  Tensor<S> fg_box;      // 4 values in [0,1]
  Tensor<S> bg_cue;      // C × d_cue
  Tensor<S> bg_mask;     // G_m × G_m logits
  bool has_bg = false;
};

template <class S>
class CueHead {
public:
  CueHead() = default;

  CueHead(const CueConfig& cfg, Rng& rng) : cfg_(cfg) {
    token_grid_ = size_t(std::lround(std::sqrt(double(cfg.cue_tokens))));
    if (token_grid_ * token_grid_ != cfg.cue_tokens)
      throw std::invalid_argument("CueHead: cue token count must be square");
    if (cfg.mask_grid % token_grid_ != 0)
      throw std::invalid_argument("CueHead: token grid must divide mask grid");
    block_ = cfg.mask_grid / token_grid_;
    score_fc1_ = Linear<S>(cfg.d_llm, cfg.hidden, rng);
    score_fc2_ = Linear<S>(cfg.hidden, 1, rng);
    cue_fc1_ = Linear<S>(cfg.d_llm, cfg.hidden, rng);
    cue_fc2_ = Linear<S>(cfg.hidden, cfg.d_cue, rng);
    mask_decoder_ = Linear<S>(cfg.d_llm, block_ * block_, rng);
    box_fc1_ = Linear<S>(cfg.box_tokens * cfg.d_llm, cfg.hidden, rng);
    box_fc2_ = Linear<S>(cfg.hidden, 4, rng);
    // Shared input normalization: foreground aggregates are score-gated down
    // to a fraction of the background's scale, and without per-token
    // normalization the larger branch monopolizes the shared decoders'
    // updates.  One instance serves both branches, like the weights.
    cue_ln_ = LayerNorm<S>(cfg.d_llm);
    decoder_ln_ = LayerNorm<S>(cfg.d_llm);
    // Zero-started heads: scores open at exactly 0.5 and the mask prompt at
    // uniform logits, which keeps the short training budget from first having
    // to undo random output noise.
    zero_fill(score_fc2_.weight);
    zero_fill(score_fc2_.bias);
    zero_fill(mask_decoder_.weight);
    zero_fill(mask_decoder_.bias);
    // Motion-prior scoring: when a flow rendering is among the clue sources,
    // foreground mass opens on it and background mass on the appearance
    // clues.  Motion is the one clue that breaks camouflage, so starting from
    // that split spends none of the budget discovering it.  The bias stays
    // trainable so the scorer can still revise the split.
    src_bias_ = Tensor<S>::full({cfg.sources}, S(0), /*requires_grad=*/true);
    if (cfg.motion_source >= 0) {
      if (size_t(cfg.motion_source) >= cfg.sources)
        throw std::invalid_argument("CueHead: motion source out of range");
      for (size_t i = 0; i < cfg.sources; ++i)
        src_bias_.mutable_data()[i] = i == size_t(cfg.motion_source) ? kMotionPrior : -kMotionPrior;
    }
  }

  const CueConfig& config() const { return cfg_; }

  // Zero-started heads open at zero output, so a fixed gain on each head sets
  // how far its logits can reach within the short optimizer displacement
  // budget without changing behavior at initialization.
  static constexpr S kHeadGain = S(8);

  // The mask-prompt head fights a class-imbalanced mean BCE; its logits must
  // clear the threshold within the same displacement budget, so it gets a
  // larger gain than the bounded score head.
  static constexpr S kMaskGain = S(96);

  // Pre-gain score bias of the motion source (0.25 * 8 = logit 2): flow
  // tokens open near score 0.9 and the rest near 0.1.  The split is kept
  // soft so the background aggregate retains enough motion signal for its
  // own mask supervision to stay discriminative.
  static constexpr S kMotionPrior = S(0.25);

  // Per-token foreground scores in (0,1); tokens is N × d_llm with source i
  // of each grid position at row p * sources + i.
  Tensor<S> score_tokens(const Tensor<S>& tokens) const {
    Tensor<S> z = score_fc2_.forward(gelu(score_fc1_.forward(tokens)));
    Tensor<S> h = sigmoid(mul_scalar(add(z, source_bias(tokens.dim(0))), kHeadGain));
    return reshape(h, {h.dim(0)});
  }

  // f_fg = sum_l pool(s_l * f_l), f_bg = sum_l pool((1-s_l) * f_l); both P×d.
  std::pair<Tensor<S>, Tensor<S>> aggregate_fg_bg(const std::vector<Tensor<S>>& layers) const {
    if (layers.size() != 3)
      throw std::invalid_argument("aggregate_fg_bg: exactly three layers expected");
    Tensor<S> fg, bg;
    for (const auto& f : layers) {
      Tensor<S> s = score_tokens(f);
      Tensor<S> ones = Tensor<S>::full({s.dim(0)}, S(1));
      Tensor<S> fg_part = adaptive_pool_seq(scale_rows(f, s), cfg_.pool_tokens);
      Tensor<S> bg_part = adaptive_pool_seq(scale_rows(f, sub(ones, s)), cfg_.pool_tokens);
      fg = fg.valid() ? add(fg, fg_part) : fg_part;
      bg = bg.valid() ? add(bg, bg_part) : bg_part;
    }
    return {fg, bg};
  }

  // Foreground path: long pool -> cue + mask prompt; short pool -> box prompt.
  CueSet<S> gen_fg_cues(const Tensor<S>& fg) const {
    CueSet<S> out;
    Tensor<S> long_tokens = adaptive_pool_seq(fg, cfg_.cue_tokens);
    out.fg_cue = cue_mlp(long_tokens);
    out.fg_mask = mask_prompt(long_tokens);
    Tensor<S> short_tokens = decoder_ln_.forward(adaptive_pool_seq(fg, cfg_.box_tokens));
    Tensor<S> flat = reshape(short_tokens, {size_t(1), cfg_.box_tokens * cfg_.d_llm});
    Tensor<S> box = sigmoid(box_fc2_.forward(relu(box_fc1_.forward(flat))));
    out.fg_box = reshape(box, {4});
    return out;
  }

  // Background path: the same cue-MLP and mask-decoder weight instances as
  // the foreground path; no box output.
  void gen_bg_cues(const Tensor<S>& bg, CueSet<S>& out) const {
    Tensor<S> long_tokens = adaptive_pool_seq(bg, cfg_.cue_tokens);
    out.bg_cue = cue_mlp(long_tokens);
    out.bg_mask = mask_prompt(long_tokens);
    out.has_bg = true;
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    score_fc1_.collect(prefix + ".score_fc1", out);
    score_fc2_.collect(prefix + ".score_fc2", out);
    cue_fc1_.collect(prefix + ".cue_fc1", out);
    cue_fc2_.collect(prefix + ".cue_fc2", out);
    mask_decoder_.collect(prefix + ".mask_decoder", out);
    box_fc1_.collect(prefix + ".box_fc1", out);
    box_fc2_.collect(prefix + ".box_fc2", out);
    cue_ln_.collect(prefix + ".cue_ln", out);
    decoder_ln_.collect(prefix + ".decoder_ln", out);
    out.push_back({prefix + ".src_bias", src_bias_});
  }

private:
  // Per-token bias column gathering src_bias_[token % sources].
  Tensor<S> source_bias(size_t n) const {
    size_t m = cfg_.sources;
    if (n % m != 0)
      throw std::invalid_argument("CueHead: token count not divisible by clue sources");
    std::vector<S> vals(n);
    for (size_t i = 0; i < n; ++i) vals[i] = src_bias_.data()[i % m];
    return detail::make_op<S>({n, size_t(1)}, std::move(vals), {src_bias_},
                              [m](TensorNode<S>& node) {
                                auto& p = *node.parents[0];
                                p.ensure_grad();
                                for (size_t i = 0; i < node.grad.size(); ++i)
                                  p.grad[i % m] += node.grad[i];
                              });
  }
  Tensor<S> cue_mlp(const Tensor<S>& tokens) const {
    return cue_fc2_.forward(gelu(cue_fc1_.forward(cue_ln_.forward(tokens))));
  }

  // Each cue token decodes the block of mask cells its grid position covers.
  Tensor<S> mask_prompt(const Tensor<S>& tokens) const {
    Tensor<S> per_token = mul_scalar(mask_decoder_.forward(decoder_ln_.forward(tokens)), kMaskGain);
    return grid_from_token_blocks(per_token, token_grid_, block_);  // C × (G_m/√C)² -> G_m × G_m
  }

  static void zero_fill(Tensor<S>& t) {
    for (auto& v : t.mutable_data()) v = S(0);
  }

  CueConfig cfg_;
  Linear<S> score_fc1_, score_fc2_;
  Linear<S> cue_fc1_, cue_fc2_;
  Linear<S> mask_decoder_;
  Linear<S> box_fc1_, box_fc2_;
  LayerNorm<S> cue_ln_, decoder_ln_;
  Tensor<S> src_bias_;
  size_t token_grid_ = 8;
  size_t block_ = 2;
};

}  // namespace phantom
