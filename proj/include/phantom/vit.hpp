#pragma once

// ViT-style encoders: patch embedding + learned positional embedding +
// pre-norm transformer blocks.  One encoder class serves as the clue encoder
// and, frozen, as the segmenter image encoder.

#include "phantom/image.hpp"
#include "phantom/nn.hpp"

namespace phantom {

struct VitConfig {
  size_t input_size = 64;  // S
  size_t patch = 8;
  size_t depth = 2;
  size_t heads = 4;
  size_t dim = 64;        // d_e
  size_t mlp_ratio = 4;
  size_t lora_rank = 4;
  bool trainable = true;  // adapters + norms; base attention weights stay frozen

  size_t tokens() const { return (input_size / patch) * (input_size / patch); }
  size_t grid() const { return input_size / patch; }
};

// Multi-head scaled dot-product attention over a single sequence.
template <class S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               size_t heads, bool causal) {
  size_t n = q.dim(0), d = q.dim(1);
  size_t hd = d / heads;
  S scale = S(1.0 / std::sqrt(double(hd)));
  Tensor<S> mask;
  if (causal) {
    std::vector<S> m(n * n, S(0));
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) m[i * n + j] = S(-1e9);
    mask = Tensor<S>({n, n}, std::move(m));
  }
  std::vector<Tensor<S>> outs;
  outs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * hd, hd);
    Tensor<S> kh = slice_cols(k, h * hd, hd);
    Tensor<S> vh = slice_cols(v, h * hd, hd);
    Tensor<S> scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    if (causal) scores = add(scores, mask);
    outs.push_back(matmul(softmax_rows(scores), vh));
  }
  return concat_cols(outs);
}

// Cross-attention: queries from one sequence, keys/values from another.
template <class S>
Tensor<S> multi_head_cross_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                                     size_t heads) {
  size_t d = q.dim(1);
  size_t hd = d / heads;
  S scale = S(1.0 / std::sqrt(double(hd)));
  std::vector<Tensor<S>> outs;
  outs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * hd, hd);
    Tensor<S> kh = slice_cols(k, h * hd, hd);
    Tensor<S> vh = slice_cols(v, h * hd, hd);
    Tensor<S> scores = mul_scalar(matmul(qh, transpose(kh)), scale);
    outs.push_back(matmul(softmax_rows(scores), vh));
  }
  return concat_cols(outs);
}

// Pre-norm transformer block with LoRA-adapted linears.  Base weights are
// always frozen; `trainable` controls whether the adapters and norms learn.
template <class S>
class TransformerBlock {
public:
  TransformerBlock() = default;

  TransformerBlock(size_t dim, size_t heads, size_t mlp_ratio, size_t lora_rank, Rng& rng,
                   bool trainable)
      : heads_(heads) {
    ln1_ = LayerNorm<S>(dim, trainable);
    ln2_ = LayerNorm<S>(dim, trainable);
    wq_ = LoraLinear<S>(dim, dim, lora_rank, rng);
    wk_ = LoraLinear<S>(dim, dim, lora_rank, rng);
    wv_ = LoraLinear<S>(dim, dim, lora_rank, rng);
    wo_ = LoraLinear<S>(dim, dim, lora_rank, rng);
    fc1_ = LoraLinear<S>(dim, dim * mlp_ratio, lora_rank, rng);
    fc2_ = LoraLinear<S>(dim * mlp_ratio, dim, lora_rank, rng);
    if (!trainable) {
      for (auto* l : {&wq_, &wk_, &wv_, &wo_, &fc1_, &fc2_}) {
        l->adapter_a.node()->requires_grad = false;
        l->adapter_b.node()->requires_grad = false;
      }
    }
  }

  Tensor<S> forward(const Tensor<S>& x, bool causal) const {
    Tensor<S> h = ln1_.forward(x);
    Tensor<S> attn = multi_head_attention(wq_.forward(h), wk_.forward(h), wv_.forward(h), heads_,
                                          causal);
    Tensor<S> y = add(x, wo_.forward(attn));
    Tensor<S> m = fc2_.forward(gelu(fc1_.forward(ln2_.forward(y))));
    return add(y, m);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    ln1_.collect(prefix + ".ln1", out);
    ln2_.collect(prefix + ".ln2", out);
    wq_.collect(prefix + ".wq", out);
    wk_.collect(prefix + ".wk", out);
    wv_.collect(prefix + ".wv", out);
    wo_.collect(prefix + ".wo", out);
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

private:
  size_t heads_ = 1;
  LayerNorm<S> ln1_, ln2_;
  LoraLinear<S> wq_, wk_, wv_, wo_, fc1_, fc2_;
};

template <class S>
class VitEncoder {
public:
  VitEncoder() = default;

  VitEncoder(const VitConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.input_size % cfg.patch != 0)
      throw std::invalid_argument("VitEncoder: patch must divide input size");
    if (cfg.dim % cfg.heads != 0)
      throw std::invalid_argument("VitEncoder: heads must divide dim");
    size_t patch_dim = cfg.patch * cfg.patch * 3;
    patch_embed_ = LoraLinear<S>(patch_dim, cfg.dim, cfg.lora_rank, rng);
    pos_embed_ = gaussian_tensor<S>({cfg.tokens(), cfg.dim}, 0.02, rng, cfg.trainable);
    for (size_t i = 0; i < cfg.depth; ++i)
      blocks_.emplace_back(cfg.dim, cfg.heads, cfg.mlp_ratio, cfg.lora_rank, rng, cfg.trainable);
    final_ln_ = LayerNorm<S>(cfg.dim, cfg.trainable);
    if (!cfg.trainable) {
      patch_embed_.adapter_a.node()->requires_grad = false;
      patch_embed_.adapter_b.node()->requires_grad = false;
    }
  }

  const VitConfig& config() const { return cfg_; }

  // frame must be S×S×3; returns (S/p)² × dim tokens.
  Tensor<S> encode(const Image& frame) const {
    if (frame.height != cfg_.input_size || frame.width != cfg_.input_size || frame.channels != 3)
      throw std::invalid_argument("VitEncoder: frame size mismatch");
    size_t g = cfg_.grid(), p = cfg_.patch;
    std::vector<S> patches(g * g * p * p * 3);
    for (size_t gy = 0; gy < g; ++gy)
      for (size_t gx = 0; gx < g; ++gx) {
        size_t row = gy * g + gx;
        size_t o = row * p * p * 3;
        for (size_t y = 0; y < p; ++y)
          for (size_t x = 0; x < p; ++x)
            for (size_t c = 0; c < 3; ++c)
              patches[o + (y * p + x) * 3 + c] = S(frame.at(gy * p + y, gx * p + x, c));
      }
    Tensor<S> input({g * g, p * p * 3}, std::move(patches));
    Tensor<S> tokens = add(patch_embed_.forward(input), pos_embed_);
    for (const auto& b : blocks_) tokens = b.forward(tokens, /*causal=*/false);
    return final_ln_.forward(tokens);
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    patch_embed_.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".pos_embed", pos_embed_});
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    final_ln_.collect(prefix + ".final_ln", out);
  }

private:
  VitConfig cfg_;
  LoraLinear<S> patch_embed_;
  Tensor<S> pos_embed_;
  std::vector<TransformerBlock<S>> blocks_;
  LayerNorm<S> final_ln_;
};

// The two-layer GELU MLP that lifts encoder tokens into the fusion width.
template <class S>
class ProjectionMlp {
public:
  ProjectionMlp() = default;

  ProjectionMlp(size_t d_in, size_t d_out, Rng& rng)
      : fc1_(d_in, d_out, rng), fc2_(d_out, d_out, rng) {}

  Tensor<S> forward(const Tensor<S>& tokens) const {
    return fc2_.forward(gelu(fc1_.forward(tokens)));
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    fc1_.collect(prefix + ".fc1", out);
    fc2_.collect(prefix + ".fc2", out);
  }

private:
  Linear<S> fc1_, fc2_;
};

}  // namespace phantom
