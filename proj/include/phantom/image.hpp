#pragma once

// Plain image containers and I/O: PPM (P6) frames, PGM (P5) masks,
// half-pixel bilinear resizing, and AnyRes patch splitting.

#include <cstdint>
#include <string>
#include <vector>

namespace phantom {

// H×W×C float image, row-major, values in [0,1].
struct Image {
  size_t height = 0;
  size_t width = 0;
  size_t channels = 0;
  std::vector<float> data;

  float& at(size_t y, size_t x, size_t c) { return data[(y * width + x) * channels + c]; }
  float at(size_t y, size_t x, size_t c) const { return data[(y * width + x) * channels + c]; }

  static Image make(size_t h, size_t w, size_t c, float fill = 0.f) {
    return Image{h, w, c, std::vector<float>(h * w * c, fill)};
  }
};

// H×W binary mask, values {0,1}.
struct Mask {
  size_t height = 0;
  size_t width = 0;
  std::vector<uint8_t> data;

  uint8_t& at(size_t y, size_t x) { return data[y * width + x]; }
  uint8_t at(size_t y, size_t x) const { return data[y * width + x]; }

  static Mask make(size_t h, size_t w, uint8_t fill = 0) {
    return Mask{h, w, std::vector<uint8_t>(h * w, fill)};
  }
};

// Normalized [x1,y1,x2,y2] box, coordinates in [0,1].
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);

// PGM reads map bytes {0..127} -> 0 and {128..255} -> 1.
Mask read_pgm_mask(const std::string& path);
void write_pgm_mask(const Mask& mask, const std::string& path);

// Soft masks written as round(v*255).
void write_pgm_soft(const std::vector<float>& values, size_t h, size_t w, const std::string& path);
std::vector<float> read_pgm_soft(const std::string& path, size_t& h, size_t& w);

Image resize_bilinear(const Image& img, size_t out_h, size_t out_w);

// Edge-replicate pad to a multiple of g, cut g*g equal tiles row-major.
// Tiles are returned at their native (pre-resize) size.
std::vector<Image> anyres_split(const Image& img, size_t grid);

Mask resize_mask_area(const Mask& mask, size_t out_h, size_t out_w);  // area average, 0.5 threshold

Box tight_box(const Mask& mask);  // normalized; requires a nonempty mask

}  // namespace phantom
