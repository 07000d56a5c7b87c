#pragma once

// The language-model stand-in: a character+coordinate-bin vocabulary, the
// fixed task prompt, causal transformer fusion of visual and text tokens,
// and decoding of the 4-slot textual location box.

#include "phantom/image.hpp"
#include "phantom/nn.hpp"
#include "phantom/vit.hpp"

#include <array>

namespace phantom {

inline constexpr const char* kTaskPrompt =
    "There are animal categories similar to the background in the image, please locate them.";

inline constexpr size_t kCoordBins = 1000;

// Fixed vocabulary: 6 specials, 96 printable characters (ASCII 32..126 plus
// newline), 1000 coordinate-bin tokens.  Ids are dense and stable.
class Vocabulary {
public:
  static constexpr size_t kBos = 0;
  static constexpr size_t kEos = 1;
  static constexpr size_t kPad = 2;
  static constexpr size_t kUnk = 3;
  static constexpr size_t kBoxOpen = 4;
  static constexpr size_t kBoxClose = 5;
  static constexpr size_t kCharBase = 6;
  static constexpr size_t kCharCount = 96;  // ASCII 32..126 + '\n'
  static constexpr size_t kBinBase = kCharBase + kCharCount;  // 102

  static constexpr size_t size() { return kBinBase + kCoordBins; }  // 1102

  static size_t char_id(char c) {
    if (c == '\n') return kCharBase + 95;
    if (c >= 32 && c <= 126) return kCharBase + size_t(c - 32);
    return kUnk;
  }

  static size_t bin_id(size_t bin) { return kBinBase + std::min(bin, kCoordBins - 1); }
  static bool is_bin(size_t id) { return id >= kBinBase && id < kBinBase + kCoordBins; }
  static size_t bin_of(size_t id) { return id - kBinBase; }

  static std::vector<size_t> tokenize(const std::string& text) {
    std::vector<size_t> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(char_id(c));
    return ids;
  }

  static std::string detokenize(const std::vector<size_t>& ids) {
    std::string out;
    for (size_t id : ids) {
      if (id == kCharBase + 95)
        out.push_back('\n');
      else if (id >= kCharBase && id < kCharBase + 95)
        out.push_back(char(32 + (id - kCharBase)));
      else
        out.push_back('?');
    }
    return out;
  }
};

// Coordinate quantization: bin k covers [k/1000, (k+1)/1000) and decodes to
// its center (k+0.5)/1000.
inline std::array<size_t, 4> box_to_tokens(const Box& box) {
  auto q = [](double c) {
    double b = std::floor(std::max(0.0, c) * double(kCoordBins));
    return Vocabulary::bin_id(size_t(std::min(b, double(kCoordBins - 1))));
  };
  return {q(box.x1), q(box.y1), q(box.x2), q(box.y2)};
}

struct FusionConfig {
  size_t depth = 4;
  size_t heads = 4;
  size_t d_model = 128;
  size_t max_seq = 1024;
  size_t mlp_ratio = 4;
  size_t lora_rank = 4;
};

template <class S>
struct FusedOutputs {
  std::vector<Tensor<S>> visual_hidden;  // last 3 layers, each N_visual × d
  Tensor<S> location_logits;             // 4 × V, rows predict x1,y1,x2,y2 bins
};

template <class S>
class FusionBackbone {
public:
  FusionBackbone() = default;

  FusionBackbone(const FusionConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.depth < 3) throw std::invalid_argument("FusionBackbone: depth must be >= 3");
    embed_ = gaussian_tensor<S>({Vocabulary::size(), cfg.d_model}, 0.02, rng, true);
    pos_embed_ = gaussian_tensor<S>({cfg.max_seq, cfg.d_model}, 0.02, rng, true);
    for (size_t i = 0; i < cfg.depth; ++i)
      blocks_.emplace_back(cfg.d_model, cfg.heads, cfg.mlp_ratio, cfg.lora_rank, rng, true);
    final_ln_ = LayerNorm<S>(cfg.d_model, true);
    classifier_ = Linear<S>(cfg.d_model, Vocabulary::size(), rng);
    // Zero-started classifier: decoding opens from the uniform distribution.
    for (auto& v : classifier_.weight.mutable_data()) v = S(0);
    for (auto& v : classifier_.bias.mutable_data()) v = S(0);
  }

  const FusionConfig& config() const { return cfg_; }

  // The classifier is zero-started (uniform distribution); the fixed gain
  // lets its logits sharpen within the short optimizer displacement budget.
  static constexpr S kLogitGain = S(64);

  // Teacher-forced fusion pass.  The sequence is
  //   [visual tokens | <bos> prompt chars <box> a1 a2 a3]
  // and location logits are read at the positions of <box>, a1, a2, a3
  // (each predicting the next coordinate bin).
  FusedOutputs<S> fuse(const Tensor<S>& visual, const std::vector<size_t>& prompt_ids,
                       const std::array<size_t, 4>& answer_bins) const {
    std::vector<size_t> text;
    text.push_back(Vocabulary::kBos);
    text.insert(text.end(), prompt_ids.begin(), prompt_ids.end());
    text.push_back(Vocabulary::kBoxOpen);
    for (size_t i = 0; i < 3; ++i) text.push_back(answer_bins[i]);
    auto [hidden, n_visual] = run(visual, text);
    FusedOutputs<S> out;
    for (size_t l = cfg_.depth - 3; l < cfg_.depth; ++l)
      out.visual_hidden.push_back(slice_rows(hidden[l], 0, n_visual));
    Tensor<S> final_h = final_ln_.forward(hidden.back());
    size_t total = final_h.dim(0);
    out.location_logits =
        mul_scalar(classifier_.forward(slice_rows(final_h, total - 4, 4)), kLogitGain);
    return out;
  }

  // Greedy autoregressive decode of the 4 coordinate bins, restricted to
  // coordinate-bin tokens.
  std::array<size_t, 4> greedy_decode(const Tensor<S>& visual,
                                      const std::vector<size_t>& prompt_ids) const {
    std::vector<size_t> text;
    text.push_back(Vocabulary::kBos);
    text.insert(text.end(), prompt_ids.begin(), prompt_ids.end());
    text.push_back(Vocabulary::kBoxOpen);
    std::array<size_t, 4> bins{};
    for (size_t step = 0; step < 4; ++step) {
      auto [hidden, n_visual] = run(visual, text);
      (void)n_visual;
      Tensor<S> final_h = final_ln_.forward(hidden.back());
      size_t total = final_h.dim(0);
      Tensor<S> logits = mul_scalar(classifier_.forward(slice_rows(final_h, total - 1, 1)),
                                    kLogitGain);
      size_t best = Vocabulary::kBinBase;
      S best_v = logits.data()[Vocabulary::kBinBase];
      for (size_t b = 1; b < kCoordBins; ++b) {
        S v = logits.data()[Vocabulary::kBinBase + b];
        if (v > best_v) {
          best_v = v;
          best = Vocabulary::kBinBase + b;
        }
      }
      bins[step] = best;
      text.push_back(best);
    }
    return bins;
  }

  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".embed", embed_});
    out.push_back({prefix + ".pos_embed", pos_embed_});
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
    final_ln_.collect(prefix + ".final_ln", out);
    classifier_.collect(prefix + ".classifier", out);
  }

private:
  // Returns per-layer block outputs over the full sequence plus the visual span length.
  std::pair<std::vector<Tensor<S>>, size_t> run(const Tensor<S>& visual,
                                                const std::vector<size_t>& text_ids) const {
    size_t n_visual = visual.dim(0);
    size_t total = n_visual + text_ids.size();
    if (total > cfg_.max_seq)
      throw CapacityError("FusionBackbone: sequence length exceeds configured maximum");
    std::vector<S> emb(text_ids.size() * cfg_.d_model);
    for (size_t i = 0; i < text_ids.size(); ++i)
      for (size_t j = 0; j < cfg_.d_model; ++j)
        emb[i * cfg_.d_model + j] = embed_.data()[text_ids[i] * cfg_.d_model + j];
    Tensor<S> text_emb = detail::make_op<S>(
        {text_ids.size(), cfg_.d_model}, std::move(emb), {embed_},
        [ids = text_ids, d = cfg_.d_model](TensorNode<S>& node) {
          auto& p = *node.parents[0];
          p.ensure_grad();
          for (size_t i = 0; i < ids.size(); ++i)
            for (size_t j = 0; j < d; ++j) p.grad[ids[i] * d + j] += node.grad[i * d + j];
        });
    Tensor<S> x = concat_rows<S>({visual, text_emb});
    x = add(x, slice_rows(pos_embed_, 0, total));
    std::vector<Tensor<S>> hidden;
    hidden.reserve(cfg_.depth);
    for (const auto& b : blocks_) {
      x = b.forward(x, /*causal=*/true);
      hidden.push_back(x);
    }
    return {std::move(hidden), n_visual};
  }

  FusionConfig cfg_;
  Tensor<S> embed_;
  Tensor<S> pos_embed_;
  std::vector<TransformerBlock<S>> blocks_;
  LayerNorm<S> final_ln_;
  Linear<S> classifier_;
};

// Greedy decode of location logits into a normalized box: argmax restricted
// to bin tokens, bin k -> (k+0.5)/1000, then sort each coordinate pair and
// clamp to [0,1].
template <class S>
Box decode_text_box(const Tensor<S>& location_logits) {
  if (location_logits.shape().size() != 2 || location_logits.dim(0) != 4)
    throw std::invalid_argument("decode_text_box: 4 logit rows required");
  size_t v = location_logits.dim(1);
  std::array<double, 4> coords{};
  for (size_t r = 0; r < 4; ++r) {
    size_t best = 0;
    S best_v = location_logits.data()[r * v + Vocabulary::kBinBase];
    for (size_t b = 1; b < kCoordBins; ++b) {
      S x = location_logits.data()[r * v + Vocabulary::kBinBase + b];
      if (x > best_v) {
        best_v = x;
        best = b;
      }
    }
    coords[r] = (double(best) + 0.5) / double(kCoordBins);
  }
  Box box{coords[0], coords[1], coords[2], coords[3]};
  if (box.x1 > box.x2) std::swap(box.x1, box.x2);
  if (box.y1 > box.y2) std::swap(box.y1, box.y2);
  box.x1 = std::clamp(box.x1, 0.0, 1.0);
  box.y1 = std::clamp(box.y1, 0.0, 1.0);
  box.x2 = std::clamp(box.x2, 0.0, 1.0);
  box.y2 = std::clamp(box.y2, 0.0, 1.0);
  return box;
}

inline Box decode_bins(const std::array<size_t, 4>& bin_ids) {
  std::array<double, 4> coords{};
  for (size_t i = 0; i < 4; ++i)
    coords[i] = (double(Vocabulary::bin_of(bin_ids[i])) + 0.5) / double(kCoordBins);
  Box box{coords[0], coords[1], coords[2], coords[3]};
  if (box.x1 > box.x2) std::swap(box.x1, box.x2);
  if (box.y1 > box.y2) std::swap(box.y1, box.y2);
  return box;
}

}  // namespace phantom
