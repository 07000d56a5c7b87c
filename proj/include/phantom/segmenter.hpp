#pragma once

// SAM-style promptable mask decoder stand-in: a frozen ViT image encoder,
// additive cue injection, box-corner and low-res mask prompts, two-way
// attention decoding, and a per-pixel head upsampled to full resolution.

#include "phantom/nn.hpp"
#include "phantom/vit.hpp"

namespace phantom {

struct SegmenterConfig {
  size_t input_size = 64;  // S
  size_t patch = 4;        // p_s, grid G = S / p_s
  size_t dim = 64;         // d_s
  size_t enc_depth = 2;
  size_t heads = 4;
  size_t dec_blocks = 2;
  size_t lora_rank = 4;
  size_t mask_grid = 16;  // G_m of the incoming mask prompt

  size_t grid() const { return input_size / patch; }
};

// One two-way attention block: prompt tokens attend the image, refine
// themselves, then the image attends the prompts.
template <class S>
class TwoWayBlock {
public:
  TwoWayBlock() = default;

  TwoWayBlock(size_t dim, size_t heads, size_t lora_rank, Rng& rng) : heads_(heads) {
    ln_t1_ = LayerNorm<S>(dim);
    ln_t2_ = LayerNorm<S>(dim);
    ln_i1_ = LayerNorm<S>(dim);
    ln_i2_ = LayerNorm<S>(dim);
    auto make = [&] { return LoraLinear<S>(dim, dim, lora_rank, rng); };
    t2i_q_ = make(); t2i_k_ = make(); t2i_v_ = make(); t2i_o_ = make();
    self_q_ = make(); self_k_ = make(); self_v_ = make(); self_o_ = make();
    i2t_q_ = make(); i2t_k_ = make(); i2t_v_ = make(); i2t_o_ = make();
    img_fc1_ = LoraLinear<S>(dim, dim * 2, lora_rank, rng);
    img_fc2_ = LoraLinear<S>(dim * 2, dim, lora_rank, rng);
  }

  void forward(Tensor<S>& tokens, Tensor<S>& image) const {
    Tensor<S> tn = ln_t1_.forward(tokens);
    Tensor<S> in = ln_i1_.forward(image);
    tokens = add(tokens, t2i_o_.forward(multi_head_cross_attention(
                             t2i_q_.forward(tn), t2i_k_.forward(in), t2i_v_.forward(in), heads_)));
    Tensor<S> ts = ln_t2_.forward(tokens);
    tokens = add(tokens, self_o_.forward(multi_head_attention(
                             self_q_.forward(ts), self_k_.forward(ts), self_v_.forward(ts), heads_,
                             /*causal=*/false)));
    Tensor<S> iq = ln_i2_.forward(image);
    Tensor<S> tk = ln_t1_.forward(tokens);
    image = add(image, i2t_o_.forward(multi_head_cross_attention(
                           i2t_q_.forward(iq), i2t_k_.forward(tk), i2t_v_.forward(tk), heads_)));
    image = add(image, img_fc2_.forward(gelu(img_fc1_.forward(image))));
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    ln_t1_.collect(prefix + ".ln_t1", out);
    ln_t2_.collect(prefix + ".ln_t2", out);
    ln_i1_.collect(prefix + ".ln_i1", out);
    ln_i2_.collect(prefix + ".ln_i2", out);
    t2i_q_.collect(prefix + ".t2i_q", out);
    t2i_k_.collect(prefix + ".t2i_k", out);
    t2i_v_.collect(prefix + ".t2i_v", out);
    t2i_o_.collect(prefix + ".t2i_o", out);
    self_q_.collect(prefix + ".self_q", out);
    self_k_.collect(prefix + ".self_k", out);
    self_v_.collect(prefix + ".self_v", out);
    self_o_.collect(prefix + ".self_o", out);
    i2t_q_.collect(prefix + ".i2t_q", out);
    i2t_k_.collect(prefix + ".i2t_k", out);
    i2t_v_.collect(prefix + ".i2t_v", out);
    i2t_o_.collect(prefix + ".i2t_o", out);
    img_fc1_.collect(prefix + ".img_fc1", out);
    img_fc2_.collect(prefix + ".img_fc2", out);
  }

private:
  size_t heads_ = 1;
  LayerNorm<S> ln_t1_, ln_t2_, ln_i1_, ln_i2_;
  LoraLinear<S> t2i_q_, t2i_k_, t2i_v_, t2i_o_;
  LoraLinear<S> self_q_, self_k_, self_v_, self_o_;
  LoraLinear<S> i2t_q_, i2t_k_, i2t_v_, i2t_o_;
  LoraLinear<S> img_fc1_, img_fc2_;
};

template <class S>
class Segmenter {
public:
  Segmenter() = default;

  Segmenter(const SegmenterConfig& cfg, Rng& rng) : cfg_(cfg) {
    VitConfig vc;
    vc.input_size = cfg.input_size;
    vc.patch = cfg.patch;
    vc.depth = cfg.enc_depth;
    vc.heads = cfg.heads;
    vc.dim = cfg.dim;
    vc.lora_rank = cfg.lora_rank;
    vc.trainable = false;  // image encoder is frozen; only the decoder adapts
    encoder_ = VitEncoder<S>(vc, rng);
    for (size_t i = 0; i < cfg.dec_blocks; ++i)
      blocks_.emplace_back(cfg.dim, cfg.heads, cfg.lora_rank, rng);
    mask_token_ = gaussian_tensor<S>({1, cfg.dim}, 0.02, rng, true);
    corner_type_ = gaussian_tensor<S>({2, cfg.dim}, 0.02, rng, true);
    pe_freq_ = gaussian_tensor<S>({cfg.dim / 2, 2}, 1.0, rng, /*requires_grad=*/false);
    mask_proj_ = Linear<S>(1, cfg.dim, rng);
    pixel_head_ = Linear<S>(cfg.dim, 1, rng);
    // Zero-started pixel head: every pixel opens at probability 0.5 instead
    // of frozen-encoder noise the optimizer would first have to cancel.
    for (auto& v : pixel_head_.weight.mutable_data()) v = S(0);
    for (auto& v : pixel_head_.bias.mutable_data()) v = S(0);
  }

  const SegmenterConfig& config() const { return cfg_; }

  // Frozen encoder producing the G×G feature grid as (G²)×d rows.
  Tensor<S> encode_image(const Image& frame) const { return encoder_.encode(frame); }

  // Cue tokens reshaped to a square grid, bilinearly resized to G×G, and
  // added elementwise to the image features.
  Tensor<S> inject_cue(const Tensor<S>& features, const Tensor<S>& cue) const {
    size_t g = cfg_.grid();
    if (features.dim(0) != g * g || features.dim(1) != cfg_.dim)
      throw std::invalid_argument("inject_cue: feature grid shape mismatch");
    size_t c = cue.dim(0);
    size_t gc = size_t(std::lround(std::sqrt(double(c))));
    if (gc * gc != c) throw std::invalid_argument("inject_cue: cue token count is not square");
    return add(features, resize_grid_bilinear(cue, gc, g));
  }

  // Foreground path: dense mask addend + 2 box-corner sparse tokens.
  // mask_logits is G_m×G_m; box is a length-4 tensor in [0,1].
  Tensor<S> segment_fg(const Tensor<S>& features, const Tensor<S>& mask_logits,
                       const Tensor<S>& box) const {
    if (box.size() != 4) throw std::invalid_argument("segment_fg: box must have 4 coordinates");
    Tensor<S> corners = reshape(box, {2, 2});  // rows (x1,y1), (x2,y2)
    Tensor<S> lo = minimum(slice_rows(corners, 0, 1), slice_rows(corners, 1, 1));
    Tensor<S> hi = maximum(slice_rows(corners, 0, 1), slice_rows(corners, 1, 1));
    if (lo.data()[0] >= hi.data()[0] || lo.data()[1] >= hi.data()[1])
      throw std::invalid_argument("segment_fg: degenerate box after normalization");
    Tensor<S> normalized = concat_rows<S>({lo, hi});
    Tensor<S> sparse = add(corner_embedding(normalized), corner_type_);
    return decode(features, mask_logits, &sparse);
  }

  // Background path: same decoder weights, dense mask addend only.
  Tensor<S> segment_bg(const Tensor<S>& features, const Tensor<S>& mask_logits) const {
    return decode(features, mask_logits, nullptr);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    encoder_.collect(prefix + ".encoder", out);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    out.push_back({prefix + ".mask_token", mask_token_});
    out.push_back({prefix + ".corner_type", corner_type_});
    out.push_back({prefix + ".pe_freq", pe_freq_});
    mask_proj_.collect(prefix + ".mask_proj", out);
    pixel_head_.collect(prefix + ".pixel_head", out);
  }

private:
  // Fourier positional encoding of 2-D points in [0,1]².
  Tensor<S> corner_embedding(const Tensor<S>& points) const {
    Tensor<S> proj = mul_scalar(matmul(points, transpose(pe_freq_)), S(2.0 * M_PI));
    return concat_cols<S>({sin_(proj), cos_(proj)});
  }

  Tensor<S> decode(const Tensor<S>& features, const Tensor<S>& mask_logits,
                   const Tensor<S>* sparse) const {
    size_t g = cfg_.grid(), gm = cfg_.mask_grid;
    if (mask_logits.size() != gm * gm)
      throw std::invalid_argument("segmenter: mask prompt grid mismatch");
    Tensor<S> dense = resize_grid_bilinear(reshape(mask_logits, {gm * gm, size_t(1)}), gm, g);
    Tensor<S> image = add(features, mask_proj_.forward(dense));
    Tensor<S> tokens =
        sparse ? concat_rows<S>({mask_token_, *sparse}) : reshape(mask_token_, {1, cfg_.dim});
    for (const auto& b : blocks_) b.forward(tokens, image);
    // The pixel head is zero-started; the fixed gain lets its logits clear
    // the decision threshold against the class-imbalanced mean BCE within
    // the short optimizer displacement budget.
    Tensor<S> logits = mul_scalar(pixel_head_.forward(image), S(64));  // G² × 1
    Tensor<S> up = resize_grid_bilinear(logits, g, cfg_.input_size);
    return sigmoid(reshape(up, {cfg_.input_size, cfg_.input_size}));
  }

  SegmenterConfig cfg_;
  VitEncoder<S> encoder_;
  std::vector<TwoWayBlock<S>> blocks_;
  Tensor<S> mask_token_;
  Tensor<S> corner_type_;
  Tensor<S> pe_freq_;   // frozen random frequencies for corner positions
  Linear<S> mask_proj_;
  Linear<S> pixel_head_;
};

}  // namespace phantom
