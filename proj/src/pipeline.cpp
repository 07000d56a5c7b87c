#include "phantom/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace phantom {

AblationMode parse_ablation_mode(const std::string& name) {
  if (name == "image-only") return AblationMode::kImageOnly;
  if (name == "image+spatial") return AblationMode::kImageSpatial;
  if (name == "full") return AblationMode::kFull;
  if (name == "no-background") return AblationMode::kNoBackground;
  if (name == "fusion-channel") return AblationMode::kFusionChannel;
  throw std::invalid_argument("unknown ablation mode: " + name);
}

std::string ablation_mode_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kImageOnly: return "image-only";
    case AblationMode::kImageSpatial: return "image+spatial";
    case AblationMode::kFull: return "full";
    case AblationMode::kNoBackground: return "no-background";
    case AblationMode::kFusionChannel: return "fusion-channel";
  }
  throw std::invalid_argument("unknown ablation mode");
}

std::string config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["clue_size"] = cfg.clue_size;
  j["clue_patch"] = cfg.clue_patch;
  j["clue_depth"] = cfg.clue_depth;
  j["clue_heads"] = cfg.clue_heads;
  j["d_e"] = cfg.d_e;
  j["anyres_grid"] = cfg.anyres_grid;
  j["d_llm"] = cfg.d_llm;
  j["fusion_depth"] = cfg.fusion_depth;
  j["fusion_heads"] = cfg.fusion_heads;
  j["max_seq"] = cfg.max_seq;
  j["pool_tokens"] = cfg.pool_tokens;
  j["cue_tokens"] = cfg.cue_tokens;
  j["mask_grid"] = cfg.mask_grid;
  j["cue_hidden"] = cfg.cue_hidden;
  j["seg_patch"] = cfg.seg_patch;
  j["seg_dim"] = cfg.seg_dim;
  j["seg_depth"] = cfg.seg_depth;
  j["seg_dec_blocks"] = cfg.seg_dec_blocks;
  j["lora_rank"] = cfg.lora_rank;
  j["lr_peak"] = cfg.lr_peak;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["weight_decay"] = cfg.weight_decay;
  j["warmup_frac"] = cfg.warmup_frac;
  j["epochs"] = cfg.epochs;
  j["grad_accum"] = cfg.grad_accum;
  j["seed"] = cfg.seed;
  j["mode"] = ablation_mode_name(cfg.mode);
  j["loss_weight_prompt"] = cfg.loss_weights.prompt;
  j["loss_weight_text"] = cfg.loss_weights.text;
  j["loss_weight_mask"] = cfg.loss_weights.mask;
  return j.dump();
}

RunConfig config_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw std::invalid_argument("config: malformed JSON");
  RunConfig cfg;
  cfg.clue_size = j.value("clue_size", cfg.clue_size);
  cfg.clue_patch = j.value("clue_patch", cfg.clue_patch);
  cfg.clue_depth = j.value("clue_depth", cfg.clue_depth);
  cfg.clue_heads = j.value("clue_heads", cfg.clue_heads);
  cfg.d_e = j.value("d_e", cfg.d_e);
  cfg.anyres_grid = j.value("anyres_grid", cfg.anyres_grid);
  cfg.d_llm = j.value("d_llm", cfg.d_llm);
  cfg.fusion_depth = j.value("fusion_depth", cfg.fusion_depth);
  cfg.fusion_heads = j.value("fusion_heads", cfg.fusion_heads);
  cfg.max_seq = j.value("max_seq", cfg.max_seq);
  cfg.pool_tokens = j.value("pool_tokens", cfg.pool_tokens);
  cfg.cue_tokens = j.value("cue_tokens", cfg.cue_tokens);
  cfg.mask_grid = j.value("mask_grid", cfg.mask_grid);
  cfg.cue_hidden = j.value("cue_hidden", cfg.cue_hidden);
  cfg.seg_patch = j.value("seg_patch", cfg.seg_patch);
  cfg.seg_dim = j.value("seg_dim", cfg.seg_dim);
  cfg.seg_depth = j.value("seg_depth", cfg.seg_depth);
  cfg.seg_dec_blocks = j.value("seg_dec_blocks", cfg.seg_dec_blocks);
  cfg.lora_rank = j.value("lora_rank", cfg.lora_rank);
  cfg.lr_peak = j.value("lr_peak", cfg.lr_peak);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.warmup_frac = j.value("warmup_frac", cfg.warmup_frac);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.grad_accum = j.value("grad_accum", cfg.grad_accum);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("mode")) cfg.mode = parse_ablation_mode(j["mode"].get<std::string>());
  cfg.loss_weights.prompt = j.value("loss_weight_prompt", cfg.loss_weights.prompt);
  cfg.loss_weights.text = j.value("loss_weight_text", cfg.loss_weights.text);
  cfg.loss_weights.mask = j.value("loss_weight_mask", cfg.loss_weights.mask);
  if (cfg.grad_accum == 0 || cfg.epochs == 0)
    throw std::invalid_argument("config: epochs and grad_accum must be positive");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

void RunLog::write_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("run log: cannot open " + path);
  for (const auto& r : records) {
    nlohmann::json j;
    j["step"] = r.step;
    j["micro"] = r.micro;
    j["lr"] = r.lr;
    j["l_total"] = r.losses.l_total;
    j["l_prompt"] = r.losses.l_prompt;
    j["l_text"] = r.losses.l_text;
    j["l_mask"] = r.losses.l_mask;
    j["bce"] = r.losses.bce;
    j["dice"] = r.losses.dice;
    j["l1"] = r.losses.l1;
    j["giou_loss"] = r.losses.giou_loss;
    out << j.dump() << "\n";
  }
}

double lr_schedule(size_t step, size_t total_steps, double warmup_frac, double peak) {
  if (total_steps == 0) return peak;
  size_t warmup = std::max<size_t>(1, size_t(std::llround(warmup_frac * double(total_steps))));
  if (step < warmup) return peak * double(step + 1) / double(warmup);
  if (total_steps <= warmup) return peak;
  double progress = double(step - warmup) / double(total_steps - warmup);
  return peak * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

namespace {

// The run configuration rides inside the checkpoint as a byte-per-float
// tensor so inference can rebuild the exact architecture.
NamedParam<float> config_param(const RunConfig& cfg) {
  std::string text = config_to_json(cfg);
  std::vector<float> bytes(text.size());
  for (size_t i = 0; i < text.size(); ++i) bytes[i] = float(uint8_t(text[i]));
  return {"meta.config", Tensor<float>({text.size()}, std::move(bytes))};
}

std::string decode_config_param(const Tensor<float>& t) {
  std::string text(t.size(), '\0');
  for (size_t i = 0; i < t.size(); ++i) text[i] = char(uint8_t(std::lround(t.data()[i])));
  return text;
}

}  // namespace

void save_model(const PhantomModel<float>& model, const std::string& path) {
  ParamList<float> params = model.params();
  params.push_back(config_param(model.cfg));
  save_checkpoint(params, path);
}

PhantomModel<float> load_model(const std::string& checkpoint_path) {
  ParamList<float> loaded = load_checkpoint<float>(checkpoint_path);
  const NamedParam<float>* meta = nullptr;
  for (const auto& p : loaded)
    if (p.name == "meta.config") meta = &p;
  if (!meta) throw FormatError("checkpoint: missing meta.config");
  RunConfig cfg = config_from_json(decode_config_param(meta->tensor));
  Rng rng(cfg.seed);
  PhantomModel<float> model(cfg, rng);
  ParamList<float> live = model.params();
  restore_params(loaded, live);
  return model;
}

TrainResult run_training(const RunConfig& cfg, const DatasetManifest& data,
                         const std::string& out_dir) {
  tune_allocator();
  std::vector<ManifestRecord> train = data.split("train");
  if (train.empty()) throw std::runtime_error("run_training: manifest has no train videos");
  fs::create_directories(out_dir);

  std::vector<VideoSample> videos;
  videos.reserve(train.size());
  for (const auto& r : train) videos.push_back(load_video(r));

  struct Window {
    size_t video, t;
  };
  std::vector<Window> windows;
  for (size_t v = 0; v < videos.size(); ++v)
    for (size_t t = 3; t <= videos[v].frames.size(); ++t) windows.push_back({v, t});
  if (windows.empty()) throw std::runtime_error("run_training: no trainable windows");

  Rng rng(cfg.seed);
  PhantomModel<float> model(cfg, rng);
  ParamList<float> params = model.params();
  AdamWConfig oc;
  oc.lr = cfg.lr_peak;
  oc.beta1 = cfg.beta1;
  oc.beta2 = cfg.beta2;
  oc.weight_decay = cfg.weight_decay;
  AdamW<float> opt(params, oc);

  size_t total_micro = cfg.epochs * windows.size();
  size_t total_steps = (total_micro + cfg.grad_accum - 1) / cfg.grad_accum;

  TrainResult result;
  size_t micro = 0, opt_step = 0, pending = 0;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng(cfg.seed * 0x9e37ULL + epoch + 1);
    std::vector<Window> order = windows;
    order_rng.shuffle(order.begin(), order.end());
    for (const Window& w : order) {
      const VideoSample& video = videos[w.video];
      TrainStep<float> step = forward_step(model, video.frames, video.masks[w.t - 1],
                                           video.boxes[w.t - 1], w.t);
      double lr = lr_schedule(opt_step, total_steps, cfg.warmup_frac, cfg.lr_peak);
      StepRecord rec{opt_step, micro, lr, step.report};
      result.log.records.push_back(rec);
      if (!std::isfinite(step.report.l_total)) {
        result.log.write_jsonl(out_dir + "/train_log.jsonl");
        throw NumericalError("run_training: non-finite loss at micro step " +
                             std::to_string(micro));
      }
      Tensor<float> scaled = mul_scalar(step.loss, float(1.0 / double(cfg.grad_accum)));
      scaled.backward();
      ++micro;
      ++pending;
      if (pending == cfg.grad_accum || micro == total_micro) {
        opt.set_lr(lr);
        opt.step();
        opt.zero_grad();
        pending = 0;
        ++opt_step;
      }
    }
  }

  result.checkpoint_path = out_dir + "/model.ckpt";
  save_model(model, result.checkpoint_path);
  result.log.write_jsonl(out_dir + "/train_log.jsonl");
  return result;
}

VideoInference run_video_inference(const PhantomModel<float>& model,
                                   const std::vector<Image>& frames) {
  tune_allocator();
  if (frames.size() < 3)
    throw std::invalid_argument("run_video_inference: at least 3 frames required");
  VideoInference out;
  for (size_t t = 3; t <= frames.size(); ++t) {
    FrameInference<float> fr = infer_frame(model, frames, t);
    const Box& fed = fr.box_prompt_fed;
    bool equal = float(fr.text_box.x1) == float(fed.x1) && float(fr.text_box.y1) == float(fed.y1) &&
                 float(fr.text_box.x2) == float(fed.x2) && float(fr.text_box.y2) == float(fed.y2);
    out.box_prompt_matches_text_box = out.box_prompt_matches_text_box && equal;
    out.masks.push_back(std::move(fr.fg_mask));
    out.boxes.push_back(fr.text_box);
  }
  return out;
}

namespace {

std::string box_text(const Box& b) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "[%.4f, %.4f, %.4f, %.4f]", b.x1, b.y1, b.x2, b.y2);
  return buf;
}

}  // namespace

void write_inference(const VideoInference& result, const std::vector<Image>& frames,
                     const std::string& out_dir, bool overlays) {
  fs::create_directories(out_dir);
  std::ofstream boxes(out_dir + "/boxes.jsonl");
  for (size_t i = 0; i < result.masks.size(); ++i) {
    size_t t = i + 3;
    char name[32];
    std::snprintf(name, sizeof(name), "%04zu", t);
    const SoftMask& m = result.masks[i];
    write_pgm_soft(m.data, m.height, m.width, out_dir + "/" + name + ".pgm");
    nlohmann::json j;
    j["frame"] = t;
    j["box"] = box_text(result.boxes[i]);
    boxes << j.dump() << "\n";
    if (overlays && t - 1 < frames.size()) {
      Image frame = resize_bilinear(frames[t - 1], m.height, m.width);
      for (size_t y = 0; y < m.height; ++y)
        for (size_t x = 0; x < m.width; ++x) {
          float a = 0.5f * m.at(y, x);
          frame.at(y, x, 0) = (1 - a) * frame.at(y, x, 0) + a;
          frame.at(y, x, 1) = (1 - a) * frame.at(y, x, 1);
          frame.at(y, x, 2) = (1 - a) * frame.at(y, x, 2);
        }
      write_ppm(frame, out_dir + "/" + name + "_overlay.ppm");
    }
  }
}

MetricReport run_evaluation(const PhantomModel<float>& model,
                            const std::vector<ManifestRecord>& videos,
                            std::vector<std::pair<std::string, MetricReport>>* per_video) {
  if (videos.empty()) throw std::invalid_argument("run_evaluation: no videos");
  std::vector<MetricReport> reports;
  for (const auto& rec : videos) {
    VideoSample video = load_video(rec);
    VideoInference inf = run_video_inference(model, video.frames);
    std::vector<Mask> gt(video.masks.begin() + 2, video.masks.end());
    std::vector<SoftMask> pred;
    for (size_t i = 0; i < gt.size(); ++i) {
      if (gt[i].height != inf.masks[i].height || gt[i].width != inf.masks[i].width)
        gt[i] = resize_mask_area(gt[i], inf.masks[i].height, inf.masks[i].width);
      pred.push_back(inf.masks[i]);
    }
    MetricReport r = evaluate_video(gt, pred);
    if (per_video) per_video->push_back({video.id, r});
    reports.push_back(r);
  }
  return average_reports(reports);
}

GradCheckResult run_total_loss_gradcheck(const RunConfig& cfg, uint64_t seed, size_t samples,
                                         double fd_step) {
  tune_allocator();
  SceneSpec spec;
  spec.seed = seed;
  spec.frame_size = cfg.clue_size;
  spec.frame_count = 3;
  VideoSample video = gen_sequence(spec);

  Rng rng(cfg.seed);
  PhantomModel<double> model(cfg, rng);
  ParamList<double> params = model.params();
  auto loss_fn = [&]() {
    return forward_step(model, video.frames, video.masks[2], video.boxes[2], 3).loss;
  };
  return gradcheck<double>(loss_fn, params, fd_step, samples, seed);
}

}  // namespace phantom
