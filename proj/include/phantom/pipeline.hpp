#pragma once

// End-to-end orchestration: run configuration, the assembled model, the
// supervised forward pass, training/inference/evaluation drivers, and the
// finite-difference check of the total objective.

#include "phantom/checkpoint.hpp"
#include "phantom/clues.hpp"
#include "phantom/cues.hpp"
#include "phantom/fusion.hpp"
#include "phantom/gradcheck.hpp"
#include "phantom/losses.hpp"
#include "phantom/metrics.hpp"
#include "phantom/segmenter.hpp"
#include "phantom/synth.hpp"

namespace phantom {

enum class AblationMode {
  kImageOnly,      // current frame only
  kImageSpatial,   // current frame + AnyRes patches
  kFull,           // temporal + spatial clues, fg + bg branches
  kNoBackground,   // full clues, background branch disabled
  kFusionChannel,  // clue tokens concatenated along channels, not sequence
};

AblationMode parse_ablation_mode(const std::string& name);
std::string ablation_mode_name(AblationMode mode);

struct RunConfig {
  // clue encoder
  size_t clue_size = 64;  // S
  size_t clue_patch = 8;
  size_t clue_depth = 2;
  size_t clue_heads = 4;
  size_t d_e = 64;
  size_t anyres_grid = 2;  // K = grid²
  // fusion backbone
  size_t d_llm = 128;
  size_t fusion_depth = 4;
  size_t fusion_heads = 4;
  size_t max_seq = 1024;
  // cue head
  size_t pool_tokens = 64;  // P
  size_t cue_tokens = 64;   // C
  size_t mask_grid = 16;    // G_m
  size_t cue_hidden = 128;
  // segmenter
  size_t seg_patch = 4;
  size_t seg_dim = 64;  // d_s
  size_t seg_depth = 2;
  size_t seg_dec_blocks = 2;
  // adaptation / optimization
  size_t lora_rank = 4;
  double lr_peak = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  double warmup_frac = 0.1;
  size_t epochs = 2;
  size_t grad_accum = 4;
  uint64_t seed = 1;
  AblationMode mode = AblationMode::kFull;
  LossWeights loss_weights;

  size_t clue_images() const {
    switch (mode) {
      case AblationMode::kImageOnly: return 1;
      case AblationMode::kImageSpatial: return 1 + anyres_grid * anyres_grid;
      default: return 4 + anyres_grid * anyres_grid;
    }
  }
};

std::string config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const std::string& json_text);
RunConfig load_config(const std::string& path);

inline ClueMode clue_mode_of(AblationMode mode) {
  switch (mode) {
    case AblationMode::kImageOnly: return ClueMode::kImageOnly;
    case AblationMode::kImageSpatial: return ClueMode::kImageSpatial;
    default: return ClueMode::kFull;
  }
}

// The assembled model.  All submodules share one parameter namespace.
template <class S>
struct PhantomModel {
  RunConfig cfg;
  VitEncoder<S> clue_encoder;
  ProjectionMlp<S> projector;
  FusionBackbone<S> fusion;
  CueHead<S> cue_head;
  Segmenter<S> segmenter;

  PhantomModel(const RunConfig& config, Rng& rng) : cfg(config) {
    VitConfig vc;
    vc.input_size = cfg.clue_size;
    vc.patch = cfg.clue_patch;
    vc.depth = cfg.clue_depth;
    vc.heads = cfg.clue_heads;
    vc.dim = cfg.d_e;
    vc.lora_rank = cfg.lora_rank;
    clue_encoder = VitEncoder<S>(vc, rng);

    size_t proj_in = cfg.mode == AblationMode::kFusionChannel ? cfg.clue_images() * cfg.d_e
                                                              : cfg.d_e;
    projector = ProjectionMlp<S>(proj_in, cfg.d_llm, rng);

    FusionConfig fc;
    fc.depth = cfg.fusion_depth;
    fc.heads = cfg.fusion_heads;
    fc.d_model = cfg.d_llm;
    fc.max_seq = cfg.max_seq;
    fc.lora_rank = cfg.lora_rank;
    fusion = FusionBackbone<S>(fc, rng);

    CueConfig cc;
    cc.d_llm = cfg.d_llm;
    cc.d_cue = cfg.seg_dim;
    cc.pool_tokens = cfg.pool_tokens;
    cc.cue_tokens = cfg.cue_tokens;
    cc.mask_grid = cfg.mask_grid;
    cc.hidden = cfg.cue_hidden;
    cc.sources = cfg.mode == AblationMode::kFusionChannel ? 1 : cfg.clue_images();
    bool has_flow = cfg.mode == AblationMode::kFull || cfg.mode == AblationMode::kNoBackground;
    cc.motion_source = has_flow ? 3 : -1;  // the flow rendering's slot in the clue bundle
    cue_head = CueHead<S>(cc, rng);

    SegmenterConfig sc;
    sc.input_size = cfg.clue_size;
    sc.patch = cfg.seg_patch;
    sc.dim = cfg.seg_dim;
    sc.enc_depth = cfg.seg_depth;
    sc.heads = cfg.clue_heads;
    sc.dec_blocks = cfg.seg_dec_blocks;
    sc.lora_rank = cfg.lora_rank;
    sc.mask_grid = cfg.mask_grid;
    segmenter = Segmenter<S>(sc, rng);
  }

  ParamList<S> params() const {
    ParamList<S> out;
    clue_encoder.collect("clue_encoder", out);
    projector.collect("projector", out);
    fusion.collect("fusion", out);
    cue_head.collect("cue_head", out);
    segmenter.collect("segmenter", out);
    return out;
  }

  // Clue images -> one visual token sequence.  Tokens are interleaved
  // position-major so that same-position tokens of different clue images sit
  // in one contiguous run; pooling the sequence then aggregates per grid
  // position.  The fusion-channel ablation instead concatenates per-image
  // tokens along the feature axis before projection.
  Tensor<S> encode_clues(const ClueBundle& bundle) const {
    std::vector<Tensor<S>> toks;
    for (const Image& im : bundle.temporal) toks.push_back(clue_encoder.encode(im));
    for (const Image& im : bundle.spatial) toks.push_back(clue_encoder.encode(im));
    if (cfg.mode == AblationMode::kFusionChannel) return projector.forward(concat_cols(toks));
    return projector.forward(interleave_rows(toks));
  }
};

template <class S>
StepTargets<S> make_targets(const Mask& gt_mask, const Box& gt_box, const RunConfig& cfg) {
  Mask gt = (gt_mask.height == cfg.clue_size && gt_mask.width == cfg.clue_size)
                ? gt_mask
                : resize_mask_area(gt_mask, cfg.clue_size, cfg.clue_size);
  Mask gt_ds = resize_mask_area(gt, cfg.mask_grid, cfg.mask_grid);
  StepTargets<S> tgt;
  tgt.box_bins = box_to_tokens(gt_box);
  tgt.gt_box = box_to_tensor<S>(gt_box);
  tgt.gt_mask = mask_to_tensor<S>(gt);
  tgt.gt_mask_ds = mask_to_tensor<S>(gt_ds);
  tgt.bg_mask = mask_to_tensor<S>(complement<S>(gt));
  tgt.bg_mask_ds = mask_to_tensor<S>(complement<S>(gt_ds));
  return tgt;
}

template <class S>
struct TrainStep {
  Tensor<S> loss;
  LossReport report;
};

// One teacher-forced supervised pass over frame t (1-indexed, t >= 3).
template <class S>
TrainStep<S> forward_step(const PhantomModel<S>& model, const std::vector<Image>& frames,
                          const Mask& gt_mask, const Box& gt_box, size_t t) {
  const RunConfig& cfg = model.cfg;
  ClueBundle bundle =
      assemble_clue_window(frames, t, cfg.clue_size, cfg.anyres_grid, clue_mode_of(cfg.mode));
  Tensor<S> visual = model.encode_clues(bundle);
  std::vector<size_t> prompt = Vocabulary::tokenize(kTaskPrompt);
  StepTargets<S> tgt = make_targets<S>(gt_mask, gt_box, cfg);
  FusedOutputs<S> fused = model.fusion.fuse(visual, prompt, tgt.box_bins);

  auto [fg, bg] = model.cue_head.aggregate_fg_bg(fused.visual_hidden);
  CueSet<S> cues = model.cue_head.gen_fg_cues(fg);
  bool with_bg = cfg.mode != AblationMode::kNoBackground;
  if (with_bg) model.cue_head.gen_bg_cues(bg, cues);

  const Image& current = frames[t - 1];
  Image frame = (current.height == cfg.clue_size && current.width == cfg.clue_size)
                    ? current
                    : resize_bilinear(current, cfg.clue_size, cfg.clue_size);
  Tensor<S> feats = model.segmenter.encode_image(frame);

  StepOutputs<S> out;
  out.location_logits = fused.location_logits;
  out.fg_box = cues.fg_box;
  out.fg_mask_prompt = cues.fg_mask;
  out.fg_pred = model.segmenter.segment_fg(model.segmenter.inject_cue(feats, cues.fg_cue),
                                           cues.fg_mask, cues.fg_box);
  if (with_bg) {
    out.bg_mask_prompt = cues.bg_mask;
    out.bg_pred = model.segmenter.segment_bg(model.segmenter.inject_cue(feats, cues.bg_cue),
                                             cues.bg_mask);
  }

  TrainStep<S> step;
  step.loss = total_loss(out, tgt, cfg.loss_weights, &step.report);
  return step;
}

template <class S>
struct FrameInference {
  SoftMask fg_mask;
  SoftMask bg_mask;  // empty when the background branch is disabled
  Box text_box;
  std::array<size_t, 4> bins{};
  Box box_prompt_fed;  // the box actually handed to the segmenter
};

// The inference procedure for one frame: decode the textual box greedily,
// then substitute it for the learned box prompt when segmenting.
template <class S>
FrameInference<S> infer_frame(const PhantomModel<S>& model, const std::vector<Image>& frames,
                              size_t t) {
  const RunConfig& cfg = model.cfg;
  ClueBundle bundle =
      assemble_clue_window(frames, t, cfg.clue_size, cfg.anyres_grid, clue_mode_of(cfg.mode));
  Tensor<S> visual = model.encode_clues(bundle);
  std::vector<size_t> prompt = Vocabulary::tokenize(kTaskPrompt);

  FrameInference<S> result;
  result.bins = model.fusion.greedy_decode(visual, prompt);
  result.text_box = decode_bins(result.bins);
  // A degenerate decoded box cannot anchor the corner prompts; widen it by
  // one bin on each side.
  double pad = 1.0 / double(kCoordBins);
  if (result.text_box.x2 - result.text_box.x1 < pad) {
    result.text_box.x1 = std::max(0.0, result.text_box.x1 - pad);
    result.text_box.x2 = std::min(1.0, result.text_box.x2 + pad);
  }
  if (result.text_box.y2 - result.text_box.y1 < pad) {
    result.text_box.y1 = std::max(0.0, result.text_box.y1 - pad);
    result.text_box.y2 = std::min(1.0, result.text_box.y2 + pad);
  }

  FusedOutputs<S> fused = model.fusion.fuse(visual, prompt, result.bins);
  auto [fg, bg] = model.cue_head.aggregate_fg_bg(fused.visual_hidden);
  CueSet<S> cues = model.cue_head.gen_fg_cues(fg);
  bool with_bg = cfg.mode != AblationMode::kNoBackground;
  if (with_bg) model.cue_head.gen_bg_cues(bg, cues);

  const Image& current = frames[t - 1];
  Image frame = (current.height == cfg.clue_size && current.width == cfg.clue_size)
                    ? current
                    : resize_bilinear(current, cfg.clue_size, cfg.clue_size);
  Tensor<S> feats = model.segmenter.encode_image(frame);

  Tensor<S> box_prompt({4}, {S(result.text_box.x1), S(result.text_box.y1), S(result.text_box.x2),
                             S(result.text_box.y2)});
  result.box_prompt_fed = Box{double(box_prompt.data()[0]), double(box_prompt.data()[1]),
                              double(box_prompt.data()[2]), double(box_prompt.data()[3])};
  Tensor<S> fg_pred = model.segmenter.segment_fg(
      model.segmenter.inject_cue(feats, cues.fg_cue), cues.fg_mask, box_prompt);
  result.fg_mask = SoftMask::make(cfg.clue_size, cfg.clue_size);
  for (size_t i = 0; i < fg_pred.size(); ++i) result.fg_mask.data[i] = float(fg_pred.data()[i]);
  if (with_bg) {
    Tensor<S> bg_pred = model.segmenter.segment_bg(
        model.segmenter.inject_cue(feats, cues.bg_cue), cues.bg_mask);
    result.bg_mask = SoftMask::make(cfg.clue_size, cfg.clue_size);
    for (size_t i = 0; i < bg_pred.size(); ++i) result.bg_mask.data[i] = float(bg_pred.data()[i]);
  }
  return result;
}

struct StepRecord {
  size_t step = 0;    // optimizer step index
  size_t micro = 0;   // micro-batch index within the run
  double lr = 0;
  LossReport losses;
};

struct RunLog {
  std::vector<StepRecord> records;
  void write_jsonl(const std::string& path) const;
};

// Linear warmup over the first warmup_frac of steps, cosine decay to zero.
double lr_schedule(size_t step, size_t total_steps, double warmup_frac, double peak);

struct TrainResult {
  RunLog log;
  std::string checkpoint_path;
};

TrainResult run_training(const RunConfig& cfg, const DatasetManifest& data,
                         const std::string& out_dir);

// Rebuilds a model from a checkpoint; the config is embedded in the file.
PhantomModel<float> load_model(const std::string& checkpoint_path);
void save_model(const PhantomModel<float>& model, const std::string& path);

struct VideoInference {
  std::vector<SoftMask> masks;  // frames 3..T
  std::vector<Box> boxes;
  bool box_prompt_matches_text_box = true;
};

VideoInference run_video_inference(const PhantomModel<float>& model,
                                   const std::vector<Image>& frames);

// Writes NNNN.pgm soft masks, boxes.jsonl, and optional overlay PPMs.
void write_inference(const VideoInference& result, const std::vector<Image>& frames,
                     const std::string& out_dir, bool overlays);

// Mean report over the given videos; optionally also per-video rows.
MetricReport run_evaluation(const PhantomModel<float>& model,
                            const std::vector<ManifestRecord>& videos,
                            std::vector<std::pair<std::string, MetricReport>>* per_video = nullptr);

// Double-precision finite-difference check of the total objective on one
// procedurally generated window.
GradCheckResult run_total_loss_gradcheck(const RunConfig& cfg, uint64_t seed, size_t samples,
                                         double fd_step);

}  // namespace phantom
