#pragma once

// Procedural camouflage video generator: an elliptical object textured from
// the same noise process as the background, separable chiefly by motion.
// Stands in for a real dataset at desk scale.

#include "phantom/clues.hpp"

namespace phantom {

struct SceneSpec {
  uint64_t seed = 0;
  size_t frame_size = 64;
  size_t frame_count = 8;
  size_t octaves = 4;
  double base_freq = 0.08;    // lattice cells per pixel at octave 0
  double axis_min = 12;       // ellipse semi-axes, pixels
  double axis_max = 18;
  double speed_min = 1.5;     // px/frame; 0 allowed for the static ablation
  double speed_max = 3.0;
  double chroma = 0.05;       // color spread around the shared luminance field
  double noise_sigma = 0.005; // per-pixel per-frame sensor noise
};

// Generated self-check statistics over one video.
struct CamouflageStats {
  double max_channel_mean_diff = 0;  // object vs background, per-channel max
  double motion_ratio = 0;           // object / background inter-frame energy
};

VideoSample gen_sequence(const SceneSpec& spec);

CamouflageStats camouflage_stats(const VideoSample& video);

struct ManifestRecord {
  std::string video_id;
  std::string split;  // "train" or "val"
  std::vector<std::string> frame_paths;
  std::vector<std::string> mask_paths;
  std::vector<Box> boxes;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(const std::string& tag) const;
};

// JSONL, one record per line.  Loading validates that every referenced file
// exists and that each box is the tight bbox of its mask.
void write_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

VideoSample load_video(const ManifestRecord& record);

// Writes <root>/<video-id>/{frames,masks}/NNNN.(ppm|pgm) plus manifest.jsonl.
// Default benchmark preset: 40 train / 8 val videos, 64×64, 8 frames.
DatasetManifest generate_dataset(const std::string& root, uint64_t seed, size_t train_videos = 40,
                                 size_t val_videos = 8, size_t frame_size = 64,
                                 size_t frame_count = 8);

}  // namespace phantom
