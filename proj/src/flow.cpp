#include "phantom/flow.hpp"

#include "phantom/tensor.hpp"  // FormatError

#include <algorithm>
#include <cmath>
#include <fstream>

namespace phantom {

namespace {

struct Gray {
  size_t h = 0, w = 0;
  std::vector<float> v;

  float at(size_t y, size_t x) const { return v[y * w + x]; }

  // Clamped bilinear sample.
  float sample(double y, double x) const {
    if (y < 0) y = 0;
    if (x < 0) x = 0;
    if (y > double(h - 1)) y = double(h - 1);
    if (x > double(w - 1)) x = double(w - 1);
    size_t y0 = size_t(y), x0 = size_t(x);
    size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    double fy = y - double(y0), fx = x - double(x0);
    return float((1 - fy) * (1 - fx) * at(y0, x0) + (1 - fy) * fx * at(y0, x1) +
                 fy * (1 - fx) * at(y1, x0) + fy * fx * at(y1, x1));
  }
};

Gray to_gray(const Image& img) {
  Gray g{img.height, img.width, std::vector<float>(img.height * img.width)};
  for (size_t y = 0; y < img.height; ++y)
    for (size_t x = 0; x < img.width; ++x)
      g.v[y * img.width + x] =
          0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
  return g;
}

// 2x downsample with a 2x2 box filter.
Gray downsample(const Gray& g) {
  size_t h = std::max<size_t>(1, g.h / 2), w = std::max<size_t>(1, g.w / 2);
  Gray out{h, w, std::vector<float>(h * w)};
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      size_t y1 = std::min(2 * y + 1, g.h - 1), x1 = std::min(2 * x + 1, g.w - 1);
      out.v[y * w + x] =
          0.25f * (g.at(2 * y, 2 * x) + g.at(2 * y, x1) + g.at(y1, 2 * x) + g.at(y1, x1));
    }
  return out;
}

// One Lucas-Kanade refinement pass at a single pyramid level; flow is updated
// in place.  Normal equations are damped so rank-deficient (textureless)
// windows yield a zero update.
void lk_refine(const Gray& prev, const Gray& next, std::vector<float>& u, std::vector<float>& v,
               const FlowConfig& cfg) {
  size_t h = prev.h, w = prev.w;
  int r = cfg.window / 2;
  std::vector<float> gx(h * w), gy(h * w);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      size_t xm = x > 0 ? x - 1 : 0, xp = std::min(x + 1, w - 1);
      size_t ym = y > 0 ? y - 1 : 0, yp = std::min(y + 1, h - 1);
      gx[y * w + x] = 0.5f * (prev.at(y, xp) - prev.at(y, xm));
      gy[y * w + x] = 0.5f * (prev.at(yp, x) - prev.at(ym, x));
    }
  std::vector<float> du(h * w, 0.f), dv(h * w, 0.f);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double a11 = cfg.damping, a12 = 0, a22 = cfg.damping, b1 = 0, b2 = 0;
      float fu = u[y * w + x], fv = v[y * w + x];
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          long yy = long(y) + dy, xx = long(x) + dx;
          if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) continue;
          float ix = gx[size_t(yy) * w + size_t(xx)];
          float iy = gy[size_t(yy) * w + size_t(xx)];
          float warped = next.sample(double(yy) + fv, double(xx) + fu);
          float it = warped - prev.at(size_t(yy), size_t(xx));
          a11 += double(ix) * ix;
          a12 += double(ix) * iy;
          a22 += double(iy) * iy;
          b1 += double(ix) * it;
          b2 += double(iy) * it;
        }
      double det = a11 * a22 - a12 * a12;
      du[y * w + x] = float((-b1 * a22 + b2 * a12) / det);
      dv[y * w + x] = float((b1 * a12 - b2 * a11) / det);
    }
  for (size_t i = 0; i < u.size(); ++i) {
    u[i] += du[i];
    v[i] += dv[i];
  }
}

std::vector<float> upsample2(const std::vector<float>& in, size_t ih, size_t iw, size_t oh,
                             size_t ow, float scale) {
  auto ty = detail::resize_taps(ih, oh);
  auto tx = detail::resize_taps(iw, ow);
  std::vector<float> out(oh * ow);
  for (size_t y = 0; y < oh; ++y)
    for (size_t x = 0; x < ow; ++x) {
      double wy = ty[y].w1, wx = tx[x].w1;
      out[y * ow + x] = scale * float((1 - wy) * (1 - wx) * in[ty[y].i0 * iw + tx[x].i0] +
                                      (1 - wy) * wx * in[ty[y].i0 * iw + tx[x].i1] +
                                      wy * (1 - wx) * in[ty[y].i1 * iw + tx[x].i0] +
                                      wy * wx * in[ty[y].i1 * iw + tx[x].i1]);
    }
  return out;
}

// 3x3 median filter, the usual cure for salt-and-pepper flow outliers from
// ill-conditioned windows.  Borders use the available neighborhood.
void median3(std::vector<float>& f, size_t h, size_t w) {
  std::vector<float> out(f.size());
  float window[9];
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          long yy = long(y) + dy, xx = long(x) + dx;
          if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(w)) continue;
          window[n++] = f[size_t(yy) * w + size_t(xx)];
        }
      std::nth_element(window, window + n / 2, window + n);
      out[y * w + x] = window[n / 2];
    }
  f = std::move(out);
}

}  // namespace

FlowField compute_optical_flow(const Image& prev, const Image& next, const FlowConfig& cfg) {
  if (prev.height != next.height || prev.width != next.width)
    throw std::invalid_argument("compute_optical_flow: frame size mismatch");
  std::vector<Gray> pyr_prev{to_gray(prev)}, pyr_next{to_gray(next)};
  for (int l = 1; l < cfg.levels; ++l) {
    if (pyr_prev.back().h < 8 || pyr_prev.back().w < 8) break;
    pyr_prev.push_back(downsample(pyr_prev.back()));
    pyr_next.push_back(downsample(pyr_next.back()));
  }
  std::vector<float> u, v;
  for (size_t l = pyr_prev.size(); l-- > 0;) {
    const Gray& p = pyr_prev[l];
    const Gray& n = pyr_next[l];
    if (u.empty()) {
      u.assign(p.h * p.w, 0.f);
      v.assign(p.h * p.w, 0.f);
    } else {
      const Gray& coarse = pyr_prev[l + 1];
      u = upsample2(u, coarse.h, coarse.w, p.h, p.w, 2.f);
      v = upsample2(v, coarse.h, coarse.w, p.h, p.w, 2.f);
    }
    for (int it = 0; it < cfg.iterations; ++it) lk_refine(p, n, u, v, cfg);
  }
  for (int pass = 0; pass < cfg.median_passes; ++pass) {
    median3(u, prev.height, prev.width);
    median3(v, prev.height, prev.width);
  }
  FlowField flow = FlowField::make(prev.height, prev.width);
  float umax = float(prev.width), vmax = float(prev.height);
  for (size_t i = 0; i < flow.u.size(); ++i) {
    flow.u[i] = std::clamp(u[i], -umax, umax);
    flow.v[i] = std::clamp(v[i], -vmax, vmax);
  }
  return flow;
}

Image flow_to_rgb(const FlowField& flow) {
  Image out = Image::make(flow.height, flow.width, 3, 1.f);
  float max_mag = 0.f;
  for (size_t i = 0; i < flow.u.size(); ++i)
    max_mag = std::max(max_mag, std::hypot(flow.u[i], flow.v[i]));
  if (max_mag <= 0.f) return out;  // no motion anywhere -> all white
  for (size_t i = 0; i < flow.u.size(); ++i) {
    double mag = std::hypot(flow.u[i], flow.v[i]);
    double sat = mag / max_mag;
    double hue = std::atan2(double(flow.v[i]), double(flow.u[i]));  // [-pi, pi]
    if (hue < 0) hue += 2 * M_PI;
    double hh = hue / (M_PI / 3.0);  // sector in [0, 6)
    int sector = int(hh) % 6;
    double f = hh - std::floor(hh);
    double p = 1.0 - sat;
    double q = 1.0 - sat * f;
    double t = 1.0 - sat * (1.0 - f);
    double r, g, b;
    switch (sector) {
      case 0: r = 1, g = t, b = p; break;
      case 1: r = q, g = 1, b = p; break;
      case 2: r = p, g = 1, b = t; break;
      case 3: r = p, g = q, b = 1; break;
      case 4: r = t, g = p, b = 1; break;
      default: r = 1, g = p, b = q; break;
    }
    out.data[3 * i + 0] = float(r);
    out.data[3 * i + 1] = float(g);
    out.data[3 * i + 2] = float(b);
  }
  return out;
}

void write_flow(const FlowField& flow, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("flow: cannot open for writing: " + path);
  os.write("PHFL", 4);
  uint32_t h = uint32_t(flow.height), w = uint32_t(flow.width);
  os.write(reinterpret_cast<const char*>(&h), 4);
  os.write(reinterpret_cast<const char*>(&w), 4);
  for (size_t i = 0; i < flow.u.size(); ++i) {
    os.write(reinterpret_cast<const char*>(&flow.u[i]), 4);
    os.write(reinterpret_cast<const char*>(&flow.v[i]), 4);
  }
  if (!os) throw FormatError("flow: write failed: " + path);
}

FlowField read_flow(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("flow: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "PHFL") throw FormatError("flow: bad magic");
  uint32_t h = 0, w = 0;
  is.read(reinterpret_cast<char*>(&h), 4);
  is.read(reinterpret_cast<char*>(&w), 4);
  if (!is) throw FormatError("flow: truncated header");
  FlowField flow = FlowField::make(h, w);
  for (size_t i = 0; i < flow.u.size(); ++i) {
    is.read(reinterpret_cast<char*>(&flow.u[i]), 4);
    is.read(reinterpret_cast<char*>(&flow.v[i]), 4);
  }
  if (!is) throw FormatError("flow: truncated payload");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("flow: trailing bytes");
  return flow;
}

}  // namespace phantom
