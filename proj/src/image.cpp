#include "phantom/image.hpp"

#include "phantom/tensor.hpp"  // FormatError

#include <cmath>
#include <fstream>
#include <sstream>

namespace phantom {

namespace {

// Reads one whitespace/comment-delimited header token from a PNM stream.
std::string pnm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(char(c));
  }
  if (tok.empty()) throw FormatError("pnm: truncated header");
  return tok;
}

void pnm_header(std::istream& is, const char* magic, size_t& w, size_t& h) {
  std::string m = pnm_token(is);
  if (m != magic) throw FormatError(std::string("pnm: wrong magic, expected ") + magic);
  w = std::stoul(pnm_token(is));
  h = std::stoul(pnm_token(is));
  size_t maxval = std::stoul(pnm_token(is));
  if (w == 0 || h == 0) throw FormatError("pnm: zero dimension");
  if (maxval != 255) throw FormatError("pnm: only 8-bit maxval 255 supported");
}

uint8_t to_byte(float v) {
  float scaled = v * 255.f;
  if (scaled < 0.f) scaled = 0.f;
  if (scaled > 255.f) scaled = 255.f;
  return uint8_t(std::floor(scaled + 0.5f));  // round half-up
}

}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("ppm: cannot open: " + path);
  size_t w, h;
  pnm_header(is, "P6", w, h);
  Image img = Image::make(h, w, 3);
  std::vector<uint8_t> raw(w * h * 3);
  is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (size_t(is.gcount()) != raw.size()) throw FormatError("ppm: truncated pixel data: " + path);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = float(raw[i]) / 255.f;
  return img;
}

void write_ppm(const Image& img, const std::string& path) {
  if (img.channels != 3) throw std::invalid_argument("write_ppm: 3-channel image required");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("ppm: cannot open for writing: " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> raw(img.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.data[i]);
  os.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!os) throw FormatError("ppm: write failed: " + path);
}

Mask read_pgm_mask(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("pgm: cannot open: " + path);
  size_t w, h;
  pnm_header(is, "P5", w, h);
  Mask mask = Mask::make(h, w);
  std::vector<uint8_t> raw(w * h);
  is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (size_t(is.gcount()) != raw.size()) throw FormatError("pgm: truncated pixel data: " + path);
  for (size_t i = 0; i < raw.size(); ++i) mask.data[i] = raw[i] >= 128 ? 1 : 0;
  return mask;
}

void write_pgm_mask(const Mask& mask, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("pgm: cannot open for writing: " + path);
  os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<uint8_t> raw(mask.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
  os.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!os) throw FormatError("pgm: write failed: " + path);
}

void write_pgm_soft(const std::vector<float>& values, size_t h, size_t w,
                    const std::string& path) {
  if (values.size() != h * w) throw std::invalid_argument("write_pgm_soft: size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("pgm: cannot open for writing: " + path);
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> raw(values.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(values[i]);
  os.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!os) throw FormatError("pgm: write failed: " + path);
}

std::vector<float> read_pgm_soft(const std::string& path, size_t& h, size_t& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("pgm: cannot open: " + path);
  pnm_header(is, "P5", w, h);
  std::vector<uint8_t> raw(w * h);
  is.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (size_t(is.gcount()) != raw.size()) throw FormatError("pgm: truncated pixel data: " + path);
  std::vector<float> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) out[i] = float(raw[i]) / 255.f;
  return out;
}

Image resize_bilinear(const Image& img, size_t out_h, size_t out_w) {
  Image out = Image::make(out_h, out_w, img.channels);
  auto ty = detail::resize_taps(img.height, out_h);
  auto tx = detail::resize_taps(img.width, out_w);
  for (size_t y = 0; y < out_h; ++y)
    for (size_t x = 0; x < out_w; ++x) {
      double wy = ty[y].w1, wx = tx[x].w1;
      for (size_t c = 0; c < img.channels; ++c) {
        double v = (1 - wy) * (1 - wx) * img.at(ty[y].i0, tx[x].i0, c) +
                   (1 - wy) * wx * img.at(ty[y].i0, tx[x].i1, c) +
                   wy * (1 - wx) * img.at(ty[y].i1, tx[x].i0, c) +
                   wy * wx * img.at(ty[y].i1, tx[x].i1, c);
        out.at(y, x, c) = float(v);
      }
    }
  return out;
}

std::vector<Image> anyres_split(const Image& img, size_t grid) {
  if (grid < 1) throw std::invalid_argument("anyres_split: grid must be >= 1");
  size_t ph = (img.height + grid - 1) / grid * grid;
  size_t pw = (img.width + grid - 1) / grid * grid;
  Image padded = Image::make(ph, pw, img.channels);
  for (size_t y = 0; y < ph; ++y)
    for (size_t x = 0; x < pw; ++x) {
      size_t sy = std::min(y, img.height - 1);
      size_t sx = std::min(x, img.width - 1);
      for (size_t c = 0; c < img.channels; ++c) padded.at(y, x, c) = img.at(sy, sx, c);
    }
  size_t th = ph / grid, tw = pw / grid;
  std::vector<Image> tiles;
  tiles.reserve(grid * grid);
  for (size_t gy = 0; gy < grid; ++gy)
    for (size_t gx = 0; gx < grid; ++gx) {
      Image tile = Image::make(th, tw, img.channels);
      for (size_t y = 0; y < th; ++y)
        for (size_t x = 0; x < tw; ++x)
          for (size_t c = 0; c < img.channels; ++c)
            tile.at(y, x, c) = padded.at(gy * th + y, gx * tw + x, c);
      tiles.push_back(std::move(tile));
    }
  return tiles;
}

Mask resize_mask_area(const Mask& mask, size_t out_h, size_t out_w) {
  Mask out = Mask::make(out_h, out_w);
  for (size_t oy = 0; oy < out_h; ++oy)
    for (size_t ox = 0; ox < out_w; ++ox) {
      size_t y0 = oy * mask.height / out_h, y1 = (oy + 1) * mask.height / out_h;
      size_t x0 = ox * mask.width / out_w, x1 = (ox + 1) * mask.width / out_w;
      y1 = std::max(y1, y0 + 1);
      x1 = std::max(x1, x0 + 1);
      double acc = 0;
      for (size_t y = y0; y < y1; ++y)
        for (size_t x = x0; x < x1; ++x) acc += mask.at(y, x);
      acc /= double((y1 - y0) * (x1 - x0));
      out.at(oy, ox) = acc >= 0.5 ? 1 : 0;
    }
  return out;
}

Box tight_box(const Mask& mask) {
  size_t ymin = mask.height, ymax = 0, xmin = mask.width, xmax = 0;
  bool any = false;
  for (size_t y = 0; y < mask.height; ++y)
    for (size_t x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        any = true;
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
      }
  if (!any) throw std::invalid_argument("tight_box: empty mask");
  return Box{double(xmin) / double(mask.width), double(ymin) / double(mask.height),
             double(xmax + 1) / double(mask.width), double(ymax + 1) / double(mask.height)};
}

}  // namespace phantom
