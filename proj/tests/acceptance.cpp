// Acceptance gate: one pass/fail line per release criterion.  Runs the full
// default benchmark (dataset seed 11, training seed 5), so expect ~15 minutes.

#include "phantom/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace phantom;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  [" << detail << "]" << std::endl;
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

// --- criterion 1: gradient fidelity -----------------------------------------

void criterion_gradcheck() {
  auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg;  // desk preset, full mode
  // Step 2e-4: the output-head gains raise the loss curvature, so the 1e-3
  // step's O(h^2) truncation error would dominate the comparison.
  GradCheckResult r = run_total_loss_gradcheck(cfg, 3, 200, 2e-4);
  double secs = seconds_since(t0);
  bool ok = r.max_rel_error <= 1e-3 && r.checked >= 200 && secs <= 120.0;
  report("1 gradient fidelity", ok,
         fmt("max rel err %.2e over %.0f coords, %.0f s", r.max_rel_error, double(r.checked),
             secs));
}

// --- criterion 2: fg/bg decomposition ----------------------------------------

void criterion_decomposition() {
  CueConfig cc;
  cc.sources = 8;
  cc.motion_source = 3;
  Rng rng(2);
  CueHead<double> head(cc, rng);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor<double>> layers;
    for (int l = 0; l < 3; ++l)
      layers.push_back(gaussian_tensor<double>({128, cc.d_llm}, 1.0, rng));
    auto [fg, bg] = head.aggregate_fg_bg(layers);
    Tensor<double> plain;
    for (const auto& f : layers) {
      Tensor<double> p = adaptive_pool_seq(f, cc.pool_tokens);
      plain = plain.valid() ? add(plain, p) : p;
    }
    for (size_t i = 0; i < plain.size(); ++i)
      worst = std::max(worst, std::fabs(fg.data()[i] + bg.data()[i] - plain.data()[i]));
  }
  report("2 fg/bg decomposition identity", worst <= 1e-5,
         fmt("max |fg+bg-pool| = %.2e over 100 trials", worst));
}

// --- criterion 3: LoRA identity at init --------------------------------------

void criterion_lora_identity() {
  // Every adapted layer in a fresh model starts with a zero B factor, and the
  // adapted forward pass reproduces the base layer bit-for-bit at that point.
  RunConfig cfg;
  Rng rng(3);
  PhantomModel<float> model(cfg, rng);
  bool all_zero = true;
  size_t adapted = 0;
  for (const auto& p : model.params())
    if (p.name.size() > 7 && p.name.rfind(".lora_b") == p.name.size() - 7) {
      ++adapted;
      for (float v : p.tensor.data())
        if (v != 0.f) all_zero = false;
    }
  double worst = 0;
  Rng rng2(4);
  for (auto [d_in, d_out] : {std::pair<size_t, size_t>{64, 64}, {128, 128}, {64, 256}}) {
    LoraLinear<double> layer(d_in, d_out, 4, rng2);
    Tensor<double> x = gaussian_tensor<double>({5, d_in}, 1.0, rng2);
    Tensor<double> base = add_rowvec(matmul(x, transpose(layer.weight)), layer.bias);
    Tensor<double> out = layer.forward(x);
    for (size_t i = 0; i < out.size(); ++i)
      worst = std::max(worst, std::fabs(out.data()[i] - base.data()[i]));
  }
  report("3 LoRA zero-B identity", all_zero && adapted > 0 && worst <= 1e-6,
         fmt("%.0f adapted layers all-zero B, max dev %.2e", double(adapted), worst));
}

// --- criterion 4: loss oracles ------------------------------------------------

void criterion_loss_oracles() {
  Tensor<double> gt({2, 2}, {1, 1, 0, 0});
  Tensor<double> half = Tensor<double>::full({2, 2}, 0.5);
  double bce = bce_loss(gt, half).data()[0];
  double dice = dice_loss(gt, half).data()[0];
  Tensor<double> gbox({4}, {0.0, 0.0, 1.0, 1.0});
  Tensor<double> pbox({4}, {0.25, 0.25, 0.75, 0.75});
  double box = box_loss(gbox, pbox).data()[0];
  double ce = text_loss<double>({0, 5, 500, 1101}, Tensor<double>::zeros({4, 1102})).data()[0];
  double e1 = std::fabs(bce - std::log(2.0));
  double e2 = std::fabs(dice - 0.4);
  double e3 = std::fabs(box - 1.0);
  double e4 = std::fabs(ce - std::log(1102.0));
  bool ok = e1 <= 1e-4 && e2 <= 1e-4 && e3 <= 1e-4 && e4 <= 1e-4;
  report("4 loss oracles", ok,
         fmt("bce %.2e  dice %.2e  box %.2e  ce %.2e", e1, e2, e3, e4));
}

// --- criterion 5: metric oracle -----------------------------------------------

PixelMetrics brute_force_metrics(const Mask& gt, const SoftMask& pred) {
  PixelMetrics r;
  double inter = 0, gt_sum = 0, pr_sum = 0, mae = 0;
  for (size_t i = 0; i < gt.data.size(); ++i) {
    mae += std::fabs(double(pred.data[i]) - double(gt.data[i]));
    bool p = pred.data[i] >= 0.5f;
    bool g = gt.data[i] != 0;
    inter += (p && g) ? 1 : 0;
    gt_sum += g ? 1 : 0;
    pr_sum += p ? 1 : 0;
  }
  r.mae = mae / double(gt.data.size());
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

void criterion_metric_oracle() {
  Rng rng(5);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Mask gt = Mask::make(8, 8);
    SoftMask pred = SoftMask::make(8, 8);
    double density = rng.uniform(0.05, 0.95);
    for (auto& v : gt.data) v = rng.uniform() < density ? 1 : 0;
    for (auto& v : pred.data) v = rng.uniform() < 0.5 ? 1.f : 0.f;
    PixelMetrics got = pixel_metrics_frame(gt, pred);
    PixelMetrics want = brute_force_metrics(gt, pred);
    worst = std::max({worst, std::fabs(got.mae - want.mae), std::fabs(got.dice - want.dice),
                      std::fabs(got.iou - want.iou)});
  }

  double s_lo = 1, f_lo = 1, e_lo = 1, s_hi = 0, f_hi = 0, e_hi = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Mask gt = Mask::make(16, 16);
    size_t y0 = rng.uniform_index(8), x0 = rng.uniform_index(8);
    for (size_t y = y0; y < y0 + 6; ++y)
      for (size_t x = x0; x < x0 + 6; ++x) gt.at(y, x) = 1;
    SoftMask perfect = SoftMask::make(16, 16);
    SoftMask comp = SoftMask::make(16, 16);
    for (size_t i = 0; i < gt.data.size(); ++i) {
      perfect.data[i] = float(gt.data[i]);
      comp.data[i] = 1.f - float(gt.data[i]);
    }
    s_lo = std::min(s_lo, s_measure(gt, perfect));
    f_lo = std::min(f_lo, weighted_f(gt, perfect));
    e_lo = std::min(e_lo, e_measure(gt, perfect));
    s_hi = std::max(s_hi, s_measure(gt, comp));
    f_hi = std::max(f_hi, weighted_f(gt, comp));
    e_hi = std::max(e_hi, e_measure(gt, comp));
  }
  bool structural = s_lo >= 1 - 1e-3 && f_lo >= 1 - 1e-3 && e_lo >= 1 - 1e-3 && s_hi < 0.5 &&
                    f_hi < 0.5 && e_hi < 0.5;
  report("5 metric oracle", worst == 0.0 && structural,
         fmt("pixel max dev %.2e; perfect >= %.4f, complement <= %.4f", worst,
             std::min({s_lo, f_lo, e_lo}), std::max({s_hi, f_hi, e_hi})));
}

// --- criterion 6: prompt/visual causality ------------------------------------

void criterion_causality() {
  FusionConfig fc;  // desk preset dims
  fc.d_model = 128;
  fc.heads = 4;
  fc.depth = 4;
  fc.max_seq = 1024;
  Rng rng(6);
  FusionBackbone<float> fusion(fc, rng);
  Tensor<float> visual = gaussian_tensor<float>({512, 128}, 1.0f, rng);
  std::array<size_t, 4> bins{Vocabulary::bin_id(10), Vocabulary::bin_id(20),
                             Vocabulary::bin_id(30), Vocabulary::bin_id(40)};
  // Same-length prompts: a different sequence length changes GEMM blocking
  // and therefore float rounding, which is not what this criterion probes.
  FusedOutputs<float> a = fusion.fuse(visual, Vocabulary::tokenize("find the hidden animal"), bins);
  FusedOutputs<float> b = fusion.fuse(visual, Vocabulary::tokenize("spot a sneaky creature"), bins);
  double worst = 0;
  for (size_t l = 0; l < a.visual_hidden.size(); ++l)
    for (size_t i = 0; i < a.visual_hidden[l].size(); ++i)
      worst = std::max(worst, std::fabs(double(a.visual_hidden[l].data()[i]) -
                                        double(b.visual_hidden[l].data()[i])));
  report("6 prompt causality", worst <= 1e-6, fmt("max visual hidden drift %.2e", worst));
}

// --- criteria 7-10: benchmark training + inference contract -------------------

void extra_prompt_properties(const PhantomModel<float>& model, const DatasetManifest& data);

MetricReport train_and_eval(const DatasetManifest& data, AblationMode mode,
                            const std::string& out_dir, double* train_secs,
                            std::string* ckpt_path = nullptr) {
  RunConfig cfg;
  cfg.seed = 5;
  cfg.mode = mode;
  auto t0 = std::chrono::steady_clock::now();
  TrainResult tr = run_training(cfg, data, out_dir);
  if (train_secs) *train_secs = seconds_since(t0);
  if (ckpt_path) *ckpt_path = tr.checkpoint_path;
  PhantomModel<float> model = load_model(tr.checkpoint_path);
  return run_evaluation(model, data.split("val"));
}

void criteria_benchmark(const std::string& work) {
  DatasetManifest data = generate_dataset(work + "/data", 11);

  double full_secs = 0;
  std::string full_ckpt;
  MetricReport full = train_and_eval(data, AblationMode::kFull, work + "/full", &full_secs,
                                     &full_ckpt);
  bool c7 = full.m_dice >= 0.70 && full_secs <= 1800.0;
  report("7 desk-scale learning", c7,
         fmt("full mDice %.4f in %.0f s (budget 0.70 / 1800 s)", full.m_dice, full_secs));

  MetricReport img = train_and_eval(data, AblationMode::kImageOnly, work + "/image_only", nullptr);
  MetricReport spa =
      train_and_eval(data, AblationMode::kImageSpatial, work + "/image_spatial", nullptr);
  bool between = (spa.m_dice >= img.m_dice - 0.01 && spa.m_dice <= full.m_dice + 0.01);
  bool c8 = (full.m_dice - img.m_dice >= 0.03) && between;
  report("8 clue ablation trend", c8,
         fmt("image-only %.4f <= image+spatial %.4f <= full %.4f (margin %.4f)", img.m_dice,
             spa.m_dice, full.m_dice, full.m_dice - img.m_dice));

  MetricReport nb =
      train_and_eval(data, AblationMode::kNoBackground, work + "/no_background", nullptr);
  bool c9 = full.m_dice - nb.m_dice >= 0.02;
  report("9 background branch trend", c9,
         fmt("full %.4f vs no-background %.4f (margin %.4f)", full.m_dice, nb.m_dice,
             full.m_dice - nb.m_dice));

  PhantomModel<float> model = load_model(full_ckpt);
  VideoSample video = load_video(data.split("val").front());
  size_t T = video.frames.size();
  VideoInference inf = run_video_inference(model, video.frames);
  bool shape_ok = inf.masks.size() == T - 2 && inf.boxes.size() == T - 2;
  bool range_ok = true;
  for (const SoftMask& m : inf.masks) {
    if (m.height != model.cfg.clue_size || m.width != model.cfg.clue_size) shape_ok = false;
    for (float p : m.data)
      if (!(p >= 0.f && p <= 1.f)) range_ok = false;
  }
  bool c10 = shape_ok && range_ok && inf.box_prompt_matches_text_box;
  report("10 inference contract", c10,
         fmt("T=%.0f -> %.0f masks, box prompt == decoded text box: %.0f", double(T),
             double(inf.masks.size()), double(inf.box_prompt_matches_text_box)));

  extra_prompt_properties(model, data);
}

// Supplementary properties of the trained segmenter: ground-truth-derived
// prompts recover the mask almost perfectly, and the box prompt is a live
// input (translating it changes the prediction).
void extra_prompt_properties(const PhantomModel<float>& model, const DatasetManifest& data) {
  const RunConfig& cfg = model.cfg;
  std::vector<size_t> prompt = Vocabulary::tokenize(kTaskPrompt);
  double dice_sum = 0, shift_l1_min = 1e9;
  size_t frames_n = 0;
  for (const auto& rec : data.split("val")) {
    VideoSample v = load_video(rec);
    for (size_t t = 3; t <= v.frames.size(); ++t) {
      ClueBundle b = assemble_clue_window(v.frames, t, cfg.clue_size, cfg.anyres_grid,
                                          clue_mode_of(cfg.mode));
      Tensor<float> visual = model.encode_clues(b);
      StepTargets<float> tgt = make_targets<float>(v.masks[t - 1], v.boxes[t - 1], cfg);
      FusedOutputs<float> fused = model.fusion.fuse(visual, prompt, tgt.box_bins);
      auto [fg, bg] = model.cue_head.aggregate_fg_bg(fused.visual_hidden);
      CueSet<float> cues = model.cue_head.gen_fg_cues(fg);
      Tensor<float> feats = model.segmenter.encode_image(
          resize_bilinear(v.frames[t - 1], cfg.clue_size, cfg.clue_size));
      Tensor<float> inj = model.segmenter.inject_cue(feats, cues.fg_cue);
      std::vector<float> logits(tgt.gt_mask_ds.size());
      for (size_t i = 0; i < logits.size(); ++i)
        logits[i] = (tgt.gt_mask_ds.data()[i] - 0.5f) * 20.f;
      Tensor<float> gt_prompt({cfg.mask_grid, cfg.mask_grid}, std::move(logits));
      const Box& gb = v.boxes[t - 1];
      Tensor<float> gtbox({4}, {float(gb.x1), float(gb.y1), float(gb.x2), float(gb.y2)});
      Tensor<float> pred = model.segmenter.segment_fg(inj, gt_prompt, gtbox);
      double inter = 0, s = 0;
      for (size_t i = 0; i < pred.size(); ++i) {
        double pb = pred.data()[i] >= 0.5f ? 1 : 0;
        inter += pb * tgt.gt_mask.data()[i];
        s += pb + tgt.gt_mask.data()[i];
      }
      dice_sum += s > 0 ? 2 * inter / s : 1.0;
      ++frames_n;
      if (t == 3) {
        Tensor<float> shifted({4}, {float(std::min(1.0, gb.x1 + 0.5)), float(gb.y1),
                                    float(std::min(1.0, gb.x2 + 0.5)), float(gb.y2)});
        if (shifted.data()[2] - shifted.data()[0] > 1e-3) {
          Tensor<float> moved = model.segmenter.segment_fg(inj, gt_prompt, shifted);
          double l1 = 0;
          for (size_t i = 0; i < pred.size(); ++i)
            l1 += std::fabs(pred.data()[i] - moved.data()[i]);
          shift_l1_min = std::min(shift_l1_min, l1);
        }
      }
    }
  }
  double m_dice = dice_sum / double(frames_n);
  report("extra: gt-derived prompts", m_dice >= 0.9, fmt("mDice %.4f (floor 0.90)", m_dice));
  report("extra: box prompt is live", shift_l1_min > 0,
         fmt("min L1 change under half-width shift %.4f", shift_l1_min));
}

// --- criterion 11: determinism ------------------------------------------------

void criterion_determinism(const std::string& work) {
  DatasetManifest data = generate_dataset(work + "/det_data", 19, 4, 1);
  RunConfig cfg;
  cfg.seed = 23;
  TrainResult a = run_training(cfg, data, work + "/det_a");
  TrainResult b = run_training(cfg, data, work + "/det_b");
  bool losses_equal = a.log.records.size() == b.log.records.size() && !a.log.records.empty();
  if (losses_equal)
    for (size_t i = 0; i < a.log.records.size(); ++i)
      if (a.log.records[i].losses.l_total != b.log.records[i].losses.l_total)
        losses_equal = false;
  bool bytes_equal = read_bytes(a.checkpoint_path) == read_bytes(b.checkpoint_path);
  report("11 determinism", losses_equal && bytes_equal,
         fmt("loss sequences equal: %.0f, checkpoints byte-identical: %.0f",
             double(losses_equal), double(bytes_equal)));
}

}  // namespace

int main() {
  tune_allocator();
  std::string work = (fs::temp_directory_path() / "phantom_acceptance").string();
  fs::remove_all(work);
  fs::create_directories(work);

  criterion_decomposition();
  criterion_lora_identity();
  criterion_loss_oracles();
  criterion_metric_oracle();
  criterion_causality();
  criterion_gradcheck();
  criteria_benchmark(work);
  criterion_determinism(work);

  std::cout << (g_failures == 0 ? "ALL CHECKS PASSED" : "CHECKS FAILED") << " ("
            << g_failures << " failing)" << std::endl;
  return g_failures == 0 ? 0 : 1;
}
