#include "phantom/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "phantom/nn.hpp"

namespace fs = std::filesystem;

namespace phantom {

namespace {

uint64_t hash_u64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

// Deterministic lattice value in [0,1) for one noise channel.
double lattice(uint64_t seed, size_t channel, size_t octave, int64_t ix, int64_t iy) {
  uint64_t h = seed;
  h = hash_u64(h ^ (uint64_t(channel) + 0x100));
  h = hash_u64(h ^ (uint64_t(octave) + 0x200));
  h = hash_u64(h ^ uint64_t(ix) * 0x9e3779b97f4a7c15ULL);
  h = hash_u64(h ^ uint64_t(iy) * 0xc2b2ae3d27d4eb4fULL);
  return double(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Multi-octave value noise in [0,1], smooth-interpolated lattice samples.
double value_noise(const SceneSpec& spec, size_t channel, double x, double y) {
  double total = 0, weight = 0, amp = 1.0, freq = spec.base_freq;
  for (size_t o = 0; o < spec.octaves; ++o) {
    double fx = x * freq, fy = y * freq;
    int64_t ix = int64_t(std::floor(fx)), iy = int64_t(std::floor(fy));
    double tx = smoothstep(fx - double(ix)), ty = smoothstep(fy - double(iy));
    double v00 = lattice(spec.seed, channel, o, ix, iy);
    double v10 = lattice(spec.seed, channel, o, ix + 1, iy);
    double v01 = lattice(spec.seed, channel, o, ix, iy + 1);
    double v11 = lattice(spec.seed, channel, o, ix + 1, iy + 1);
    double v = (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
    total += amp * v;
    weight += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return total / weight;
}

// Camouflage texel: one shared luminance field with a small per-channel
// spread, like natural camouflage (matched hue, varying lightness).
double texel(const SceneSpec& spec, size_t channel, double x, double y) {
  double luma = value_noise(spec, 0, x, y);
  double tint = value_noise(spec, channel + 1, x, y) - 0.5;
  return luma + spec.chroma * tint;
}

// Object texture: the same noise process, phase-shifted, in object-local
// coordinates so the texture translates rigidly with the object.
double object_texture(const SceneSpec& spec, size_t channel, double lx, double ly) {
  return texel(spec, channel, lx + 53.17, ly + 97.31);
}

bool inside_ellipse(double x, double y, double cx, double cy, double a, double b) {
  double dx = (x - cx) / a, dy = (y - cy) / b;
  return dx * dx + dy * dy <= 1.0;
}

}  // namespace

VideoSample gen_sequence(const SceneSpec& spec) {
  if (spec.frame_count < 3) throw std::invalid_argument("gen_sequence: at least 3 frames required");
  if (spec.axis_min < 2 || spec.axis_max < spec.axis_min)
    throw std::invalid_argument("gen_sequence: bad ellipse axis range");
  if (2.0 * spec.axis_max + 4.0 >= double(spec.frame_size))
    throw std::invalid_argument("gen_sequence: object larger than frame");
  if (spec.speed_min < 0 || spec.speed_max < spec.speed_min)
    throw std::invalid_argument("gen_sequence: bad speed range");

  size_t sz = spec.frame_size;
  Rng rng(spec.seed ^ 0x5eedULL);
  double a = rng.uniform(spec.axis_min, spec.axis_max);
  double b = rng.uniform(spec.axis_min, spec.axis_max);
  double speed = rng.uniform(spec.speed_min, spec.speed_max);
  double angle = rng.uniform(0.0, 2.0 * M_PI);
  double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
  double cx = rng.uniform(a + 1.5, double(sz) - a - 1.5);
  double cy = rng.uniform(b + 1.5, double(sz) - b - 1.5);

  Image background = Image::make(sz, sz, 3);
  for (size_t y = 0; y < sz; ++y)
    for (size_t x = 0; x < sz; ++x)
      for (size_t c = 0; c < 3; ++c)
        background.at(y, x, c) = float(texel(spec, c, double(x), double(y)));

  // Mean-match the object texture to the background so the object is not
  // separable by intensity.
  double bg_mean[3] = {0, 0, 0}, obj_mean[3] = {0, 0, 0};
  size_t obj_n = 0;
  for (size_t y = 0; y < sz; ++y)
    for (size_t x = 0; x < sz; ++x) {
      bool in = inside_ellipse(double(x), double(y), cx, cy, a, b);
      for (size_t c = 0; c < 3; ++c) {
        if (in)
          obj_mean[c] += object_texture(spec, c, double(x) - cx, double(y) - cy);
        else
          bg_mean[c] += background.at(y, x, c);
      }
      obj_n += in ? 1 : 0;
    }
  double offset[3];
  for (size_t c = 0; c < 3; ++c) {
    bg_mean[c] /= double(sz * sz - obj_n);
    obj_mean[c] /= double(std::max<size_t>(obj_n, 1));
    offset[c] = bg_mean[c] - obj_mean[c];
  }

  VideoSample video;
  for (size_t t = 0; t < spec.frame_count; ++t) {
    Image frame = background;
    Mask mask = Mask::make(sz, sz);
    for (size_t y = 0; y < sz; ++y)
      for (size_t x = 0; x < sz; ++x) {
        if (!inside_ellipse(double(x), double(y), cx, cy, a, b)) continue;
        mask.at(y, x) = 1;
        for (size_t c = 0; c < 3; ++c) {
          double v = object_texture(spec, c, double(x) - cx, double(y) - cy) + offset[c];
          frame.at(y, x, c) = float(std::clamp(v, 0.0, 1.0));
        }
      }
    for (auto& v : frame.data)
      v = float(std::clamp(double(v) + spec.noise_sigma * rng.normal(), 0.0, 1.0));
    video.frames.push_back(std::move(frame));
    video.boxes.push_back(tight_box(mask));
    video.masks.push_back(std::move(mask));

    cx += vx;
    cy += vy;
    if (cx - a < 0.5 || cx + a > double(sz) - 1.5) {
      vx = -vx;
      cx = std::clamp(cx, a + 0.5, double(sz) - a - 1.5);
    }
    if (cy - b < 0.5 || cy + b > double(sz) - 1.5) {
      vy = -vy;
      cy = std::clamp(cy, b + 0.5, double(sz) - b - 1.5);
    }
  }
  return video;
}

CamouflageStats camouflage_stats(const VideoSample& video) {
  CamouflageStats stats;
  double obj_sum[3] = {0, 0, 0}, bg_sum[3] = {0, 0, 0};
  size_t obj_n = 0, bg_n = 0;
  for (size_t t = 0; t < video.frames.size(); ++t) {
    const Image& f = video.frames[t];
    const Mask& m = video.masks[t];
    for (size_t y = 0; y < f.height; ++y)
      for (size_t x = 0; x < f.width; ++x) {
        bool in = m.at(y, x) != 0;
        for (size_t c = 0; c < 3; ++c) (in ? obj_sum[c] : bg_sum[c]) += f.at(y, x, c);
        (in ? obj_n : bg_n) += 1;
      }
  }
  for (size_t c = 0; c < 3; ++c) {
    double d = std::abs(obj_sum[c] / double(obj_n) - bg_sum[c] / double(bg_n));
    stats.max_channel_mean_diff = std::max(stats.max_channel_mean_diff, d);
  }

  double obj_energy = 0, bg_energy = 0;
  size_t obj_pix = 0, bg_pix = 0;
  for (size_t t = 1; t < video.frames.size(); ++t) {
    const Image& f0 = video.frames[t - 1];
    const Image& f1 = video.frames[t];
    const Mask& m0 = video.masks[t - 1];
    const Mask& m1 = video.masks[t];
    for (size_t y = 0; y < f1.height; ++y)
      for (size_t x = 0; x < f1.width; ++x) {
        double e = 0;
        for (size_t c = 0; c < 3; ++c) {
          double d = double(f1.at(y, x, c)) - double(f0.at(y, x, c));
          e += d * d;
        }
        bool moving = m0.at(y, x) || m1.at(y, x);
        (moving ? obj_energy : bg_energy) += e;
        (moving ? obj_pix : bg_pix) += 1;
      }
  }
  if (obj_pix && bg_pix && bg_energy > 0)
    stats.motion_ratio = (obj_energy / double(obj_pix)) / (bg_energy / double(bg_pix));
  return stats;
}

std::vector<ManifestRecord> DatasetManifest::split(const std::string& tag) const {
  std::vector<ManifestRecord> out;
  for (const auto& r : records)
    if (r.split == tag) out.push_back(r);
  return out;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const auto& r : manifest.records) {
    nlohmann::json j;
    j["video_id"] = r.video_id;
    j["split"] = r.split;
    j["frames"] = r.frame_paths;
    j["masks"] = r.mask_paths;
    auto& boxes = j["boxes"] = nlohmann::json::array();
    for (const auto& b : r.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    out << j.dump() << "\n";
  }
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_manifest: cannot open " + path);
  std::string base = fs::path(path).parent_path().string();
  auto resolve = [&](const std::string& p) {
    if (base.empty() || fs::path(p).is_absolute()) return p;
    return base + "/" + p;
  };

  DatasetManifest manifest;
  std::string line;
  size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("video_id") || !j.contains("frames") ||
        !j.contains("masks") || !j.contains("boxes"))
      throw std::runtime_error("read_manifest: malformed record " + std::to_string(index));
    ManifestRecord r;
    r.video_id = j["video_id"].get<std::string>();
    r.split = j.value("split", std::string("train"));
    for (const auto& p : j["frames"]) r.frame_paths.push_back(resolve(p.get<std::string>()));
    for (const auto& p : j["masks"]) r.mask_paths.push_back(resolve(p.get<std::string>()));
    for (const auto& b : j["boxes"])
      r.boxes.push_back(Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                            b.at(3).get<double>()});
    if (r.frame_paths.size() != r.mask_paths.size() || r.boxes.size() != r.mask_paths.size())
      throw std::runtime_error("read_manifest: misaligned record " + std::to_string(index));

    for (const auto& p : r.frame_paths)
      if (!fs::exists(p))
        throw std::runtime_error("read_manifest: record " + std::to_string(index) +
                                 " references missing file " + p);
    for (size_t t = 0; t < r.mask_paths.size(); ++t) {
      if (!fs::exists(r.mask_paths[t]))
        throw std::runtime_error("read_manifest: record " + std::to_string(index) +
                                 " references missing file " + r.mask_paths[t]);
      Mask m = read_pgm_mask(r.mask_paths[t]);
      Box tight = tight_box(m);
      const Box& got = r.boxes[t];
      double err = std::max({std::abs(tight.x1 - got.x1), std::abs(tight.y1 - got.y1),
                             std::abs(tight.x2 - got.x2), std::abs(tight.y2 - got.y2)});
      if (err > 1e-6)
        throw std::runtime_error("read_manifest: record " + std::to_string(index) +
                                 " box is not tight for " + r.mask_paths[t]);
    }
    manifest.records.push_back(std::move(r));
    ++index;
  }
  return manifest;
}

VideoSample load_video(const ManifestRecord& record) {
  VideoSample v;
  v.id = record.video_id;
  for (const auto& p : record.frame_paths) v.frames.push_back(read_ppm(p));
  for (const auto& p : record.mask_paths) v.masks.push_back(read_pgm_mask(p));
  v.boxes = record.boxes;
  return v;
}

DatasetManifest generate_dataset(const std::string& root, uint64_t seed, size_t train_videos,
                                 size_t val_videos, size_t frame_size, size_t frame_count) {
  DatasetManifest manifest;
  size_t total = train_videos + val_videos;
  for (size_t i = 0; i < total; ++i) {
    bool train = i < train_videos;
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%03zu", train ? "train" : "val",
                  train ? i : i - train_videos);

    SceneSpec spec;
    spec.seed = hash_u64(seed ^ (0xabcdULL + i));
    spec.frame_size = frame_size;
    spec.frame_count = frame_count;
    VideoSample video = gen_sequence(spec);

    fs::create_directories(fs::path(root) / id / "frames");
    fs::create_directories(fs::path(root) / id / "masks");
    ManifestRecord r;
    r.video_id = id;
    r.split = train ? "train" : "val";
    for (size_t t = 0; t < video.frames.size(); ++t) {
      char name[32];
      std::snprintf(name, sizeof(name), "%04zu", t + 1);
      std::string frame_rel = std::string(id) + "/frames/" + name + ".ppm";
      std::string mask_rel = std::string(id) + "/masks/" + name + ".pgm";
      write_ppm(video.frames[t], root + "/" + frame_rel);
      write_pgm_mask(video.masks[t], root + "/" + mask_rel);
      r.frame_paths.push_back(frame_rel);
      r.mask_paths.push_back(mask_rel);
      r.boxes.push_back(video.boxes[t]);
    }
    manifest.records.push_back(std::move(r));
  }
  write_manifest(manifest, root + "/manifest.jsonl");
  return read_manifest(root + "/manifest.jsonl");
}

}  // namespace phantom
