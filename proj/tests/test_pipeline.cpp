#include "phantom/pipeline.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace phantom;

namespace {

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.clue_size = 32;
  cfg.clue_patch = 8;
  cfg.d_e = 32;
  cfg.d_llm = 64;
  cfg.fusion_depth = 3;
  cfg.max_seq = 512;
  cfg.pool_tokens = 16;
  cfg.cue_tokens = 16;
  cfg.mask_grid = 8;
  cfg.cue_hidden = 32;
  cfg.seg_dim = 32;
  cfg.epochs = 1;
  cfg.grad_accum = 2;
  return cfg;
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("run configuration round trips through json") {
  RunConfig cfg = tiny_config();
  cfg.seed = 99;
  cfg.mode = AblationMode::kNoBackground;
  cfg.lr_peak = 3e-4;
  RunConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.clue_size == cfg.clue_size);
  CHECK(back.d_llm == cfg.d_llm);
  CHECK(back.seed == 99);
  CHECK(back.mode == AblationMode::kNoBackground);
  CHECK(back.lr_peak == doctest::Approx(3e-4));
  CHECK(back.grad_accum == cfg.grad_accum);
}

TEST_CASE("ablation mode names round trip and reject unknowns") {
  for (AblationMode m : {AblationMode::kImageOnly, AblationMode::kImageSpatial,
                         AblationMode::kFull, AblationMode::kNoBackground,
                         AblationMode::kFusionChannel})
    CHECK(parse_ablation_mode(ablation_mode_name(m)) == m);
  CHECK_THROWS_AS(parse_ablation_mode("spicy"), std::invalid_argument);
}

TEST_CASE("lr schedule warms up linearly then decays to zero") {
  size_t total = 100;
  double peak = 2e-4;
  CHECK(lr_schedule(0, total, 0.1, peak) < peak * 0.2);
  CHECK(lr_schedule(5, total, 0.1, peak) == doctest::Approx(peak * 0.5).epsilon(0.1));
  CHECK(lr_schedule(10, total, 0.1, peak) == doctest::Approx(peak).epsilon(1e-6));
  CHECK(lr_schedule(99, total, 0.1, peak) < peak * 0.01);
  for (size_t s = 10; s < 99; ++s)
    CHECK(lr_schedule(s, total, 0.1, peak) >= lr_schedule(s + 1, total, 0.1, peak));
}

TEST_CASE("step targets quantize the box and complement the masks") {
  RunConfig cfg = tiny_config();
  Mask m = Mask::make(32, 32);
  for (size_t y = 8; y < 16; ++y)
    for (size_t x = 8; x < 16; ++x) m.at(y, x) = 1;
  Box b = tight_box(m);
  StepTargets<float> tgt = make_targets<float>(m, b, cfg);
  CHECK(tgt.box_bins == box_to_tokens(b));
  CHECK(tgt.gt_mask.dim(0) == 32);
  CHECK(tgt.gt_mask_ds.dim(0) == 8);
  for (size_t i = 0; i < tgt.gt_mask.size(); ++i)
    CHECK(tgt.gt_mask.data()[i] + tgt.bg_mask.data()[i] == doctest::Approx(1.0));
  for (size_t i = 0; i < tgt.gt_mask_ds.size(); ++i)
    CHECK(tgt.gt_mask_ds.data()[i] + tgt.bg_mask_ds.data()[i] == doctest::Approx(1.0));
}

TEST_CASE("supervised forward pass produces a finite decomposable loss") {
  RunConfig cfg = tiny_config();
  Rng rng(cfg.seed);
  PhantomModel<float> model(cfg, rng);
  SceneSpec spec;
  spec.seed = 21;
  spec.frame_size = 32;
  spec.frame_count = 4;
  spec.axis_min = 5;
  spec.axis_max = 8;
  VideoSample v = gen_sequence(spec);
  TrainStep<float> step = forward_step(model, v.frames, v.masks[2], v.boxes[2], 3);
  CHECK(std::isfinite(step.report.l_total));
  CHECK(step.report.l_total > 0);
  CHECK(step.report.l_total ==
        doctest::Approx(step.report.l_prompt + step.report.l_text + step.report.l_mask)
            .epsilon(1e-4));
}

TEST_CASE("video inference yields one mask per frame after the warmup window") {
  RunConfig cfg = tiny_config();
  Rng rng(7);
  PhantomModel<float> model(cfg, rng);
  SceneSpec spec;
  spec.seed = 33;
  spec.frame_size = 32;
  spec.frame_count = 6;
  spec.axis_min = 5;
  spec.axis_max = 8;
  VideoSample v = gen_sequence(spec);
  VideoInference out = run_video_inference(model, v.frames);
  REQUIRE(out.masks.size() == 4);  // T - 2
  REQUIRE(out.boxes.size() == 4);
  CHECK(out.box_prompt_matches_text_box);
  for (const SoftMask& m : out.masks) {
    CHECK(m.height == cfg.clue_size);
    CHECK(m.width == cfg.clue_size);
    for (float p : m.data) {
      CHECK(p >= 0.f);
      CHECK(p <= 1.f);
    }
  }
}

TEST_CASE("model checkpoints round trip bit-exactly") {
  RunConfig cfg = tiny_config();
  Rng rng(11);
  PhantomModel<float> model(cfg, rng);
  std::string dir = temp_dir("ckptrt");
  std::string path = dir + "/model.ckpt";
  save_model(model, path);
  PhantomModel<float> back = load_model(path);
  CHECK(back.cfg.clue_size == cfg.clue_size);
  SceneSpec spec;
  spec.seed = 5;
  spec.frame_size = 32;
  spec.frame_count = 4;
  spec.axis_min = 5;
  spec.axis_max = 8;
  VideoSample v = gen_sequence(spec);
  VideoInference a = run_video_inference(model, v.frames);
  VideoInference b = run_video_inference(back, v.frames);
  REQUIRE(a.masks.size() == b.masks.size());
  for (size_t f = 0; f < a.masks.size(); ++f) CHECK(a.masks[f].data == b.masks[f].data);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic given the seed") {
  std::string data_dir = temp_dir("traindata");
  DatasetManifest data = generate_dataset(data_dir, 3, 2, 1, 64, 4);
  RunConfig cfg = tiny_config();
  cfg.seed = 17;

  std::string out_a = temp_dir("train_a");
  std::string out_b = temp_dir("train_b");
  TrainResult a = run_training(cfg, data, out_a);
  TrainResult b = run_training(cfg, data, out_b);

  REQUIRE(a.log.records.size() == b.log.records.size());
  CHECK(!a.log.records.empty());
  for (size_t i = 0; i < a.log.records.size(); ++i)
    CHECK(a.log.records[i].losses.l_total == b.log.records[i].losses.l_total);
  CHECK(read_bytes(a.checkpoint_path) == read_bytes(b.checkpoint_path));

  std::filesystem::remove_all(data_dir);
  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
}

#ifdef PHANTOM_CLI_PATH
TEST_CASE("cli distinguishes usage errors from data errors") {
  std::string cli = PHANTOM_CLI_PATH;
  auto run = [&](const std::string& args) {
    std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
  };
  CHECK(run("--definitely-bogus") == 2);
  CHECK(run("train --data /nonexistent-dir-xyz --out /tmp/cli-test-out") == 3);
  CHECK(run("eval --ckpt /nonexistent.ckpt --data /nonexistent-dir-xyz") == 3);
}
#endif
