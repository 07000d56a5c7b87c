// Command-line front end: datagen, train, infer, eval, gradcheck, ablate.
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "phantom/pipeline.hpp"

namespace fs = std::filesystem;
using namespace phantom;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

void apply_thread_cap() {
  if (const char* env = std::getenv("PHANTOM_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) Eigen::setNbThreads(n);
  }
}

std::string manifest_path(const std::string& data) {
  if (fs::is_directory(data)) return data + "/manifest.jsonl";
  return data;
}

RunConfig build_config(const std::string& config_path, uint64_t seed, bool seed_set,
                       const std::string& mode, bool mode_set) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  if (seed_set) cfg.seed = seed;
  if (mode_set) cfg.mode = parse_ablation_mode(mode);
  return cfg;
}

std::vector<Image> load_frames_dir(const std::string& dir) {
  std::string frames_dir = fs::is_directory(dir + "/frames") ? dir + "/frames" : dir;
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(frames_dir))
    if (e.path().extension() == ".ppm") paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  std::vector<Image> frames;
  for (const auto& p : paths) frames.push_back(read_ppm(p));
  if (frames.size() < 3)
    throw std::runtime_error("need at least 3 .ppm frames in " + frames_dir);
  return frames;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  apply_thread_cap();
  CLI::App app{"Camouflaged object video segmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path, data, ckpt, out, mode = "full";
  uint64_t seed = 1;
  bool overlays = false;
  size_t train_videos = 40, val_videos = 8, frame_size = 64, frame_count = 8;
  size_t gc_samples = 200;
  double gc_step = 1e-3, gc_tolerance = 1e-3;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--mode", mode, "ablation mode");
  };

  auto* datagen = app.add_subcommand("datagen", "generate the synthetic benchmark");
  datagen->add_option("--out", out, "output dataset root")->required();
  datagen->add_option("--seed", seed, "RNG seed");
  datagen->add_option("--train-videos", train_videos, "train video count");
  datagen->add_option("--val-videos", val_videos, "validation video count");
  datagen->add_option("--size", frame_size, "frame size");
  datagen->add_option("--frames", frame_count, "frames per video");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--data", data, "dataset root or manifest path")->required();
  train->add_option("--out", out, "output directory")->required();

  auto* infer = app.add_subcommand("infer", "run inference on one video");
  infer->add_option("--ckpt", ckpt, "checkpoint path")->required();
  infer->add_option("--data", data, "video directory with .ppm frames")->required();
  infer->add_option("--out", out, "output directory")->required();
  infer->add_flag("--overlays", overlays, "also write overlay PPMs");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--data", data, "dataset root or manifest path")->required();

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(gradcheck_cmd);
  gradcheck_cmd->add_option("--samples", gc_samples, "sampled coordinates");
  gradcheck_cmd->add_option("--step", gc_step, "finite-difference step");
  gradcheck_cmd->add_option("--tolerance", gc_tolerance, "max relative error");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate every ablation mode");
  ablate->add_option("--config", config_path, "JSON run configuration");
  ablate->add_option("--seed", seed, "RNG seed");
  ablate->add_option("--data", data, "dataset root or manifest path")->required();
  ablate->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  bool seed_set = app.count_all() && (datagen->count("--seed") || train->count("--seed") ||
                                      gradcheck_cmd->count("--seed") || ablate->count("--seed"));
  bool mode_set = train->count("--mode") || gradcheck_cmd->count("--mode");

  try {
    if (*datagen) {
      DatasetManifest m =
          generate_dataset(out, seed, train_videos, val_videos, frame_size, frame_count);
      CamouflageStats stats = camouflage_stats(load_video(m.records.front()));
      std::cout << "wrote " << m.records.size() << " videos to " << out << "\n";
      std::cout << "camouflage: mean channel diff " << stats.max_channel_mean_diff
                << ", motion ratio " << stats.motion_ratio << "\n";
    } else if (*train) {
      RunConfig cfg = build_config(config_path, seed, seed_set, mode, mode_set);
      DatasetManifest m = read_manifest(manifest_path(data));
      TrainResult result = run_training(cfg, m, out);
      std::cout << "checkpoint: " << result.checkpoint_path << "\n";
      if (!result.log.records.empty())
        std::cout << "final loss: " << result.log.records.back().losses.l_total << "\n";
    } else if (*infer) {
      PhantomModel<float> model = load_model(ckpt);
      std::vector<Image> frames = load_frames_dir(data);
      VideoInference result = run_video_inference(model, frames);
      write_inference(result, frames, out, overlays);
      std::cout << "wrote " << result.masks.size() << " masks to " << out << "\n";
    } else if (*eval) {
      PhantomModel<float> model = load_model(ckpt);
      DatasetManifest m = read_manifest(manifest_path(data));
      std::vector<std::pair<std::string, MetricReport>> rows;
      MetricReport mean = run_evaluation(model, m.split("val"), &rows);
      rows.push_back({"mean", mean});
      std::cout << report_table(rows);
      std::cout << report_json(mean) << "\n";
    } else if (*gradcheck_cmd) {
      RunConfig cfg = build_config(config_path, seed, seed_set, mode, mode_set);
      GradCheckResult r = run_total_loss_gradcheck(cfg, seed, gc_samples, gc_step);
      std::cout << "checked " << r.checked << " coordinates, skipped " << r.skipped_kinks
                << " kinks, max relative error " << r.max_rel_error << "\n";
      if (r.max_rel_error > gc_tolerance) {
        std::cerr << "gradient check exceeded tolerance " << gc_tolerance << "\n";
        return kExitNumerical;
      }
    } else if (*ablate) {
      DatasetManifest m = read_manifest(manifest_path(data));
      std::vector<std::pair<std::string, MetricReport>> rows;
      for (AblationMode am :
           {AblationMode::kImageOnly, AblationMode::kImageSpatial, AblationMode::kFull,
            AblationMode::kNoBackground, AblationMode::kFusionChannel}) {
        RunConfig cfg = build_config(config_path, seed, seed_set, mode, false);
        cfg.mode = am;
        std::string run_dir = out + "/" + ablation_mode_name(am);
        TrainResult tr = run_training(cfg, m, run_dir);
        PhantomModel<float> model = load_model(tr.checkpoint_path);
        rows.push_back({ablation_mode_name(am), run_evaluation(model, m.split("val"))});
        std::cout << report_table(rows);
      }
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
