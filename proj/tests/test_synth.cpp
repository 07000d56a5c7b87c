#include "phantom/synth.hpp"

#include <doctest.h>

#include <cmath>
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

}  // namespace

TEST_CASE("scene generation is deterministic in the seed") {
  SceneSpec spec;
  spec.seed = 42;
  spec.frame_size = 32;
  spec.frame_count = 4;
  spec.axis_min = 5;
  spec.axis_max = 8;
  VideoSample a = gen_sequence(spec);
  VideoSample b = gen_sequence(spec);
  REQUIRE(a.frames.size() == 4);
  REQUIRE(a.masks.size() == 4);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].data == b.frames[i].data);
    CHECK(a.masks[i].data == b.masks[i].data);
  }
  spec.seed = 43;
  VideoSample c = gen_sequence(spec);
  CHECK(a.frames[0].data != c.frames[0].data);
}

TEST_CASE("boxes are the tight bounds of their masks") {
  SceneSpec spec;
  spec.seed = 5;
  spec.frame_size = 48;
  spec.frame_count = 5;
  spec.axis_min = 8;
  spec.axis_max = 12;
  VideoSample v = gen_sequence(spec);
  for (size_t f = 0; f < v.masks.size(); ++f) {
    Box want = tight_box(v.masks[f]);
    CHECK(v.boxes[f].x1 == doctest::Approx(want.x1));
    CHECK(v.boxes[f].y1 == doctest::Approx(want.y1));
    CHECK(v.boxes[f].x2 == doctest::Approx(want.x2));
    CHECK(v.boxes[f].y2 == doctest::Approx(want.y2));
    // A visible object exists in every frame.
    size_t on = 0;
    for (uint8_t px : v.masks[f].data) on += px;
    CHECK(on > 0);
  }
}

TEST_CASE("the object is camouflaged in appearance but separable by motion") {
  SceneSpec spec;
  spec.seed = 9;
  VideoSample v = gen_sequence(spec);
  CamouflageStats stats = camouflage_stats(v);
  CHECK(stats.max_channel_mean_diff < 0.12);  // object color blends in
  CHECK(stats.motion_ratio > 2.0);            // but its region moves more
}

TEST_CASE("zero velocity and zero noise yield identical frames") {
  SceneSpec spec;
  spec.seed = 12;
  spec.frame_size = 32;
  spec.frame_count = 3;
  spec.axis_min = 5;
  spec.axis_max = 8;
  spec.speed_min = 0;
  spec.speed_max = 0;
  spec.noise_sigma = 0;
  VideoSample v = gen_sequence(spec);
  for (size_t f = 1; f < v.frames.size(); ++f) {
    CHECK(v.frames[f].data == v.frames[0].data);
    CHECK(v.masks[f].data == v.masks[0].data);
  }
}

TEST_CASE("oversized objects are rejected") {
  SceneSpec spec;
  spec.frame_size = 16;  // default axes cannot fit
  CHECK_THROWS_AS(gen_sequence(spec), std::invalid_argument);
}

TEST_CASE("dataset generation round trips through the manifest") {
  std::string root = temp_dir("synthds");
  DatasetManifest manifest = generate_dataset(root, 3, 2, 1, 64, 4);
  CHECK(manifest.split("train").size() == 2);
  CHECK(manifest.split("val").size() == 1);

  DatasetManifest back = read_manifest(root + "/manifest.jsonl");
  REQUIRE(back.records.size() == 3);
  CHECK(back.records[0].video_id == manifest.records[0].video_id);

  VideoSample v = load_video(back.records[0]);
  CHECK(v.frames.size() == 4);
  CHECK(v.masks.size() == 4);
  CHECK(v.frames[0].height == 64);
  std::filesystem::remove_all(root);
}

TEST_CASE("manifest validation names the offending record") {
  std::string root = temp_dir("synthbad");
  DatasetManifest manifest = generate_dataset(root, 4, 1, 0, 64, 4);
  std::string victim = manifest.records[0].frame_paths[0];
  std::filesystem::remove(victim);
  try {
    read_manifest(root + "/manifest.jsonl");
    FAIL("expected a validation error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(manifest.records[0].video_id) != std::string::npos);
  }
  std::filesystem::remove_all(root);
}
