#include "phantom/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace phantom {

namespace {

constexpr double kEps = 1e-12;

void check_sizes(const Mask& gt, const SoftMask& pred) {
  if (gt.height != pred.height || gt.width != pred.width || gt.height == 0)
    throw std::invalid_argument("metrics: frame size mismatch");
}

double mean_of(const std::vector<float>& v) {
  double s = 0;
  for (float x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

}  // namespace

PixelMetrics pixel_metrics_frame(const Mask& gt, const SoftMask& pred) {
  check_sizes(gt, pred);
  size_t n = gt.data.size();
  double mae = 0;
  size_t inter = 0, gt_count = 0, pred_count = 0;
  for (size_t i = 0; i < n; ++i) {
    int g = gt.data[i] ? 1 : 0;
    mae += std::abs(double(pred.data[i]) - g);
    int p = pred.data[i] >= 0.5f ? 1 : 0;
    inter += size_t(g & p);
    gt_count += size_t(g);
    pred_count += size_t(p);
  }
  PixelMetrics m;
  m.mae = mae / double(n);
  size_t uni = gt_count + pred_count - inter;
  if (gt_count == 0 && pred_count == 0) {
    m.dice = m.iou = 1.0;
  } else {
    m.dice = 2.0 * double(inter) / double(gt_count + pred_count);
    m.iou = double(inter) / double(uni);
  }
  return m;
}

namespace {

// Object-aware term of the structure measure on one side (fg or bg).
double object_score(const Mask& gt, const SoftMask& pred, bool fg) {
  double sum = 0, sum_sq = 0;
  size_t count = 0;
  for (size_t i = 0; i < gt.data.size(); ++i) {
    if ((gt.data[i] != 0) != fg) continue;
    double x = fg ? pred.data[i] : 1.0 - pred.data[i];
    sum += x;
    sum_sq += x * x;
    ++count;
  }
  if (count == 0) return 0;
  double mean = sum / double(count);
  double var = sum_sq / double(count) - mean * mean;
  double sd = std::sqrt(std::max(var, 0.0));
  return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

// SSIM-style similarity of one gt/pred region.
double region_ssim(const std::vector<double>& x, const std::vector<double>& y) {
  size_t n = x.size();
  if (n == 0) return 1.0;
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double vx = 0, vy = 0, cov = 0;
  for (size_t i = 0; i < n; ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cov += (x[i] - mx) * (y[i] - my);
  }
  double denom = n > 1 ? double(n - 1) : 1.0;
  vx /= denom;
  vy /= denom;
  cov /= denom;
  double a = 4.0 * mx * my * cov;
  double b = (mx * mx + my * my) * (vx + vy);
  if (a != 0) return a / (b + kEps);
  return b == 0 ? 1.0 : 0.0;
}

double region_score(const Mask& gt, const SoftMask& pred) {
  size_t h = gt.height, w = gt.width;
  // Ground-truth centroid (1-based, rounded), as in the reference construction.
  double area = 0, cx = 0, cy = 0;
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      if (gt.at(y, x)) {
        area += 1;
        cx += double(x + 1);
        cy += double(y + 1);
      }
  size_t split_x = size_t(std::lround(cx / area));
  size_t split_y = size_t(std::lround(cy / area));
  split_x = std::clamp<size_t>(split_x, 1, w);
  split_y = std::clamp<size_t>(split_y, 1, h);

  double total = double(h * w);
  double score = 0;
  for (int q = 0; q < 4; ++q) {
    size_t x0 = (q % 2 == 0) ? 0 : split_x;
    size_t x1 = (q % 2 == 0) ? split_x : w;
    size_t y0 = (q / 2 == 0) ? 0 : split_y;
    size_t y1 = (q / 2 == 0) ? split_y : h;
    std::vector<double> px, gx;
    for (size_t y = y0; y < y1; ++y)
      for (size_t x = x0; x < x1; ++x) {
        px.push_back(pred.at(y, x));
        gx.push_back(gt.at(y, x) ? 1.0 : 0.0);
      }
    double weight = double(px.size()) / total;
    score += weight * region_ssim(px, gx);
  }
  return score;
}

}  // namespace

double s_measure(const Mask& gt, const SoftMask& pred) {
  check_sizes(gt, pred);
  size_t fg = 0;
  for (auto v : gt.data) fg += v ? 1 : 0;
  double mean_pred = mean_of(pred.data);
  if (fg == 0) return 1.0 - mean_pred;
  if (fg == gt.data.size()) return mean_pred;
  double y = double(fg) / double(gt.data.size());
  double s_obj = y * object_score(gt, pred, true) + (1.0 - y) * object_score(gt, pred, false);
  double s_reg = region_score(gt, pred);
  constexpr double alpha = 0.5;
  return std::clamp(alpha * s_obj + (1.0 - alpha) * s_reg, 0.0, 1.0);
}

namespace {

// Squared Euclidean distance to the nearest foreground pixel, plus that
// pixel's flat index.  Frames are small, so the direct scan is fine.
void distance_to_fg(const Mask& gt, std::vector<double>& dist, std::vector<size_t>& nearest) {
  size_t h = gt.height, w = gt.width;
  std::vector<std::pair<size_t, size_t>> fg_pix;
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x)
      if (gt.at(y, x)) fg_pix.emplace_back(y, x);
  dist.assign(h * w, 0.0);
  nearest.assign(h * w, 0);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      size_t idx = y * w + x;
      if (gt.data[idx]) {
        nearest[idx] = idx;
        continue;
      }
      double best = 1e30;
      size_t best_idx = 0;
      for (auto [fy, fx] : fg_pix) {
        double dy = double(fy) - double(y), dx = double(fx) - double(x);
        double d = dy * dy + dx * dx;
        if (d < best) {
          best = d;
          best_idx = fy * w + fx;
        }
      }
      dist[idx] = std::sqrt(best);
      nearest[idx] = best_idx;
    }
}

std::vector<double> gaussian_filter_7x5(const std::vector<double>& in, size_t h, size_t w) {
  // 7×7 kernel, sigma 5, separable, zero-padded borders.
  double k[7];
  double ksum = 0;
  for (int i = 0; i < 7; ++i) {
    double d = double(i - 3);
    k[i] = std::exp(-d * d / (2.0 * 25.0));
    ksum += k[i];
  }
  for (auto& v : k) v /= ksum;
  std::vector<double> tmp(h * w, 0.0), out(h * w, 0.0);
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -3; i <= 3; ++i) {
        long xx = long(x) + i;
        if (xx < 0 || xx >= long(w)) continue;
        s += k[i + 3] * in[y * w + size_t(xx)];
      }
      tmp[y * w + x] = s;
    }
  for (size_t y = 0; y < h; ++y)
    for (size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -3; i <= 3; ++i) {
        long yy = long(y) + i;
        if (yy < 0 || yy >= long(h)) continue;
        s += k[i + 3] * tmp[size_t(yy) * w + x];
      }
      out[y * w + x] = s;
    }
  return out;
}

}  // namespace

double weighted_f(const Mask& gt, const SoftMask& pred) {
  check_sizes(gt, pred);
  size_t n = gt.data.size();
  size_t fg = 0;
  for (auto v : gt.data) fg += v ? 1 : 0;
  if (fg == 0) return 0.0;

  std::vector<double> err(n);
  for (size_t i = 0; i < n; ++i)
    err[i] = std::abs(double(pred.data[i]) - (gt.data[i] ? 1.0 : 0.0));

  std::vector<double> dist;
  std::vector<size_t> nearest;
  distance_to_fg(gt, dist, nearest);

  // Background errors take the error of the nearest foreground pixel before
  // the dependency diffusion.
  std::vector<double> et = err;
  for (size_t i = 0; i < n; ++i)
    if (!gt.data[i]) et[i] = err[nearest[i]];
  std::vector<double> ea = gaussian_filter_7x5(et, gt.height, gt.width);

  std::vector<double> weighted(n);
  for (size_t i = 0; i < n; ++i) {
    double e = (gt.data[i] && ea[i] < err[i]) ? ea[i] : err[i];
    double b = gt.data[i] ? 1.0 : 2.0 - std::exp(std::log(0.5) / 5.0 * dist[i]);
    weighted[i] = e * b;
  }

  double fg_err = 0, bg_err = 0;
  for (size_t i = 0; i < n; ++i)
    (gt.data[i] ? fg_err : bg_err) += weighted[i];
  double tp_w = double(fg) - fg_err;
  double recall = 1.0 - fg_err / double(fg);
  double precision = tp_w / (kEps + tp_w + bg_err);
  if (precision + recall <= 0) return 0.0;
  double f = 2.0 * precision * recall / (kEps + precision + recall);
  return std::clamp(f, 0.0, 1.0);
}

double e_measure(const Mask& gt, const SoftMask& pred) {
  check_sizes(gt, pred);
  size_t n = gt.data.size();
  size_t fg = 0;
  for (auto v : gt.data) fg += v ? 1 : 0;
  std::vector<double> p(n);
  for (size_t i = 0; i < n; ++i) p[i] = pred.data[i] >= 0.5f ? 1.0 : 0.0;
  if (fg == 0 || fg == n) {
    double diff = 0;
    for (size_t i = 0; i < n; ++i) diff += std::abs(p[i] - (gt.data[i] ? 1.0 : 0.0));
    return 1.0 - diff / double(n);
  }
  double mg = double(fg) / double(n);
  double mp = 0;
  for (double v : p) mp += v;
  mp /= double(n);
  double e = 0;
  for (size_t i = 0; i < n; ++i) {
    double pg = (gt.data[i] ? 1.0 : 0.0) - mg;
    double pp = p[i] - mp;
    double xi = 2.0 * pg * pp / (pg * pg + pp * pp + kEps);
    e += (1.0 + xi) * (1.0 + xi) / 4.0;
  }
  return e / double(n);
}

MetricReport evaluate_video(const std::vector<Mask>& gt, const std::vector<SoftMask>& pred) {
  if (pred.empty() || gt.size() != pred.size())
    throw std::invalid_argument("evaluate_video: empty or misaligned prediction set");
  MetricReport r;
  size_t fw_frames = 0;
  for (size_t t = 0; t < gt.size(); ++t) {
    PixelMetrics m = pixel_metrics_frame(gt[t], pred[t]);
    r.mae += m.mae;
    r.m_dice += m.dice;
    r.m_iou += m.iou;
    r.s_alpha += s_measure(gt[t], pred[t]);
    r.e_phi += e_measure(gt[t], pred[t]);
    bool has_fg = std::any_of(gt[t].data.begin(), gt[t].data.end(), [](uint8_t v) { return v != 0; });
    if (has_fg) {
      r.f_w_beta += weighted_f(gt[t], pred[t]);
      ++fw_frames;
    }
  }
  double n = double(gt.size());
  r.mae /= n;
  r.m_dice /= n;
  r.m_iou /= n;
  r.s_alpha /= n;
  r.e_phi /= n;
  if (fw_frames > 0) r.f_w_beta /= double(fw_frames);
  return r;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
  MetricReport r;
  if (reports.empty()) return r;
  for (const auto& x : reports) {
    r.s_alpha += x.s_alpha;
    r.f_w_beta += x.f_w_beta;
    r.e_phi += x.e_phi;
    r.mae += x.mae;
    r.m_dice += x.m_dice;
    r.m_iou += x.m_iou;
  }
  double n = double(reports.size());
  r.s_alpha /= n;
  r.f_w_beta /= n;
  r.e_phi /= n;
  r.mae /= n;
  r.m_dice /= n;
  r.m_iou /= n;
  return r;
}

std::string report_json(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"s_alpha\": %.4f, \"f_w_beta\": %.4f, \"e_phi\": %.4f, \"mae\": %.4f, "
                "\"m_dice\": %.4f, \"m_iou\": %.4f}",
                r.s_alpha, r.f_w_beta, r.e_phi, r.mae, r.m_dice, r.m_iou);
  return buf;
}

std::string report_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %8s %8s %8s %8s %8s %8s\n", "run", "S_a", "F_wb", "E_phi",
                "M", "mDice", "mIoU");
  out += buf;
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", name.c_str(),
                  r.s_alpha, r.f_w_beta, r.e_phi, r.mae, r.m_dice, r.m_iou);
    out += buf;
  }
  return out;
}

}  // namespace phantom
