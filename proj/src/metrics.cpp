#include "cmwnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "cmwnet/errors.hpp"
#include "cmwnet/image_io.hpp"

namespace cmwnet::metrics {
namespace {

void check_pair(const SaliencyMap& s, const SaliencyMap& g) {
  if (s.rank() != 2 || g.rank() != 2 || s.shape() != g.shape()) {
    throw ShapeError("metric inputs must be matching HxW maps, got " + shape_string(s.shape()) +
                     " and " + shape_string(g.shape()));
  }
  if (s.empty()) throw ShapeError("metric inputs are empty");
  for (double v : g.values()) {
    if (v != 0.0 && v != 1.0) throw DataError("ground truth is not binary");
  }
}

struct Counts {
  std::array<std::size_t, kThresholds> fg{};
  std::array<std::size_t, kThresholds> bg{};
  std::size_t n_fg = 0, n_bg = 0;
};

Counts histogram(const SaliencyMap& s, const SaliencyMap& g) {
  Counts c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int q = quantize(s[i]);
    if (g[i] > 0.5) {
      ++c.fg[q];
      ++c.n_fg;
    } else {
      ++c.bg[q];
      ++c.n_bg;
    }
  }
  return c;
}

double mean_of(const std::vector<double>& v) {
  double sum = 0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

double e_from_counts(double tp, double fp, double fn, double tn) {
  const double n = tp + fp + fn + tn;
  const double n_fg = tp + fn, n_pos = tp + fp;
  if (n_fg == 0) return (n - n_pos) / n;
  if (n_fg == n) return n_pos / n;
  const double mu_fm = n_pos / n, mu_gt = n_fg / n;
  auto enhanced = [&](double f, double t) {
    const double af = f - mu_fm, ag = t - mu_gt;
    const double align = 2.0 * ag * af / (ag * ag + af * af + kEps);
    return (align + 1.0) * (align + 1.0) / 4.0;
  };
  const double sum = tp * enhanced(1, 1) + fp * enhanced(1, 0) + fn * enhanced(0, 1) +
                     tn * enhanced(0, 0);
  return sum / n;
}

// Nearest foreground pixel (row-major index) and its Euclidean distance for
// every pixel; ties go to the smallest index.
void nearest_foreground(const SaliencyMap& g, std::vector<std::size_t>& index,
                        std::vector<double>& dist) {
  const std::size_t h = g.dim(0), w = g.dim(1);
  constexpr long kNone = -1;
  // rep[x*h + y]: nearest foreground row in column x
  std::vector<long> rep(h * w, kNone);
  for (std::size_t x = 0; x < w; ++x) {
    long above = kNone;
    std::vector<long> up(h, kNone);
    for (std::size_t y = 0; y < h; ++y) {
      if (g[y * w + x] > 0.5) above = static_cast<long>(y);
      up[y] = above;
    }
    long below = kNone;
    for (std::size_t yi = h; yi-- > 0;) {
      if (g[yi * w + x] > 0.5) below = static_cast<long>(yi);
      const long y = static_cast<long>(yi);
      long best = up[yi];
      if (below != kNone && (best == kNone || below - y < y - best)) best = below;
      rep[x * h + yi] = best;
    }
  }
  index.assign(h * w, 0);
  dist.assign(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      if (g[p] > 0.5) {
        index[p] = p;
        continue;
      }
      std::size_t best_d2 = std::numeric_limits<std::size_t>::max();
      std::size_t best_i = 0;
      for (std::size_t xc = 0; xc < w; ++xc) {
        const long r = rep[xc * h + y];
        if (r == kNone) continue;
        const long dy = static_cast<long>(y) - r;
        const long dx = static_cast<long>(x) - static_cast<long>(xc);
        const std::size_t d2 = static_cast<std::size_t>(dx * dx + dy * dy);
        const std::size_t i = static_cast<std::size_t>(r) * w + xc;
        if (d2 < best_d2 || (d2 == best_d2 && i < best_i)) {
          best_d2 = d2;
          best_i = i;
        }
      }
      index[p] = best_i;
      dist[p] = std::sqrt(static_cast<double>(best_d2));
    }
  }
}

std::array<double, 49> gaussian_window() {
  constexpr double sigma = 5.0;
  std::array<double, 49> k{};
  double sum = 0;
  for (int i = -3; i <= 3; ++i) {
    for (int j = -3; j <= 3; ++j) {
      const double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
      k[(i + 3) * 7 + (j + 3)] = v;
      sum += v;
    }
  }
  for (double& v : k) v /= sum;
  return k;
}

struct Region {
  std::size_t y0, y1, x0, x1;
  std::size_t count() const { return (y1 - y0) * (x1 - x0); }
};

double region_similarity(const SaliencyMap& s, const SaliencyMap& g, const Region& r) {
  const std::size_t n = r.count();
  if (n == 0) return 0.0;
  const std::size_t w = s.dim(1);
  double sx = 0, sy = 0;
  for (std::size_t y = r.y0; y < r.y1; ++y) {
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      sx += s[y * w + x];
      sy += g[y * w + x];
    }
  }
  const double nd = static_cast<double>(n);
  const double mx = sx / nd, my = sy / nd;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t y = r.y0; y < r.y1; ++y) {
    for (std::size_t x = r.x0; x < r.x1; ++x) {
      const double dx = s[y * w + x] - mx, dy = g[y * w + x] - my;
      vx += dx * dx;
      vy += dy * dy;
      cxy += dx * dy;
    }
  }
  const double denom = nd - 1.0 + kEps;
  vx /= denom;
  vy /= denom;
  cxy /= denom;
  const double alpha = 4.0 * mx * my * cxy;
  const double beta = (mx * mx + my * my) * (vx + vy);
  if (alpha != 0.0) return alpha / (beta + kEps);
  if (beta == 0.0) return 1.0;
  return 0.0;
}

double object_similarity(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = mean_of(values);
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sigma = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return 2.0 * mean / (mean * mean + 1.0 + sigma + kEps);
}

}  // namespace

int quantize(double s) {
  const double v = std::round(std::clamp(s, 0.0, 1.0) * 255.0);
  return static_cast<int>(v);
}

double mae(const SaliencyMap& s, const SaliencyMap& g) {
  check_pair(s, g);
  double sum = 0;
  for (std::size_t i = 0; i < s.size(); ++i) sum += std::abs(s[i] - g[i]);
  return sum / static_cast<double>(s.size());
}

PRCurve pr_curve(const SaliencyMap& s, const SaliencyMap& g) {
  check_pair(s, g);
  const Counts c = histogram(s, g);
  if (c.n_fg == 0) throw DataError("PR curve undefined: ground truth has no foreground");
  PRCurve out{};
  std::size_t tp = 0, fp = 0;
  for (int t = kThresholds - 1; t >= 0; --t) {
    tp += c.fg[t];
    fp += c.bg[t];
    out[t].precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    out[t].recall = static_cast<double>(tp) / static_cast<double>(c.n_fg);
  }
  return out;
}

Curve f_curve(const PRCurve& pr, double beta_sq) {
  Curve f{};
  for (int t = 0; t < kThresholds; ++t) {
    const double p = pr[t].precision, r = pr[t].recall;
    const double den = beta_sq * p + r;
    f[t] = den == 0.0 ? 0.0 : (1.0 + beta_sq) * p * r / den;
  }
  return f;
}

double max_f(const PRCurve& pr, double beta_sq) {
  const Curve f = f_curve(pr, beta_sq);
  return *std::max_element(f.begin(), f.end());
}

double weighted_f(const SaliencyMap& s, const SaliencyMap& g, double beta_sq) {
  check_pair(s, g);
  const std::size_t h = g.dim(0), w = g.dim(1), n = g.size();
  std::size_t n_fg = 0;
  for (double v : g.values()) n_fg += v > 0.5;
  if (n_fg == 0) throw DataError("weighted F undefined: ground truth has no foreground");

  std::vector<double> e(n), et(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::abs(s[i] - g[i]);
  std::vector<std::size_t> nearest;
  std::vector<double> dist;
  nearest_foreground(g, nearest, dist);
  for (std::size_t i = 0; i < n; ++i) et[i] = e[nearest[i]];

  const auto k = gaussian_window();
  double sum_ew_fg = 0, sum_ew_bg = 0;
  const double decay = std::log(0.5) / 5.0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const bool fg = g[p] > 0.5;
      double ew;
      if (fg) {
        double ea = 0;
        for (int i = -3; i <= 3; ++i) {
          const long yy = static_cast<long>(y) + i;
          if (yy < 0 || yy >= static_cast<long>(h)) continue;
          for (int j = -3; j <= 3; ++j) {
            const long xx = static_cast<long>(x) + j;
            if (xx < 0 || xx >= static_cast<long>(w)) continue;
            ea += k[(i + 3) * 7 + (j + 3)] * et[static_cast<std::size_t>(yy) * w + xx];
          }
        }
        ew = ea < e[p] ? ea : e[p];
        sum_ew_fg += ew;
      } else {
        ew = e[p] * (2.0 - std::exp(decay * dist[p]));
        sum_ew_bg += ew;
      }
    }
  }
  const double tpw = static_cast<double>(n_fg) - sum_ew_fg;
  const double fpw = sum_ew_bg;
  const double recall = 1.0 - sum_ew_fg / static_cast<double>(n_fg);
  const double precision = tpw / (kEps + tpw + fpw);
  return (1.0 + beta_sq) * recall * precision / (kEps + recall + beta_sq * precision);
}

double s_object(const SaliencyMap& s, const SaliencyMap& g) {
  check_pair(s, g);
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (g[i] > 0.5) {
      fg.push_back(s[i]);
    } else {
      bg.push_back(1.0 - s[i]);
    }
  }
  const double u = static_cast<double>(fg.size()) / static_cast<double>(s.size());
  return u * object_similarity(fg) + (1.0 - u) * object_similarity(bg);
}

double s_region(const SaliencyMap& s, const SaliencyMap& g) {
  check_pair(s, g);
  const std::size_t h = g.dim(0), w = g.dim(1);
  double total = 0, sx = 0, sy = 0;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = g[y * w + x];
      total += v;
      sx += v * static_cast<double>(x + 1);
      sy += v * static_cast<double>(y + 1);
    }
  }
  std::size_t cx, cy;
  if (total == 0) {
    cx = static_cast<std::size_t>(std::round(w / 2.0));
    cy = static_cast<std::size_t>(std::round(h / 2.0));
  } else {
    cx = static_cast<std::size_t>(std::round(sx / total));
    cy = static_cast<std::size_t>(std::round(sy / total));
  }
  const double area = static_cast<double>(w * h);
  const double w1 = static_cast<double>(cx * cy) / area;
  const double w2 = static_cast<double>((w - cx) * cy) / area;
  const double w3 = static_cast<double>(cx * (h - cy)) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * region_similarity(s, g, {0, cy, 0, cx}) +
         w2 * region_similarity(s, g, {0, cy, cx, w}) +
         w3 * region_similarity(s, g, {cy, h, 0, cx}) +
         w4 * region_similarity(s, g, {cy, h, cx, w});
}

double s_measure(const SaliencyMap& s, const SaliencyMap& g, double lambda) {
  check_pair(s, g);
  const double n = static_cast<double>(s.size());
  double gt_mean = 0, pred_mean = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    gt_mean += g[i];
    pred_mean += s[i];
  }
  gt_mean /= n;
  pred_mean /= n;
  if (gt_mean == 0.0) return 1.0 - pred_mean;
  if (gt_mean == 1.0) return pred_mean;
  const double q = lambda * s_object(s, g) + (1.0 - lambda) * s_region(s, g);
  return q < 0 ? 0.0 : q;
}

double e_measure_binary(const std::vector<unsigned char>& fm, const SaliencyMap& g) {
  if (g.rank() != 2 || fm.size() != g.size() || g.empty()) {
    throw ShapeError("e_measure_binary: map size does not match ground truth");
  }
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    const bool pos = fm[i] != 0, fg = g[i] > 0.5;
    tp += pos && fg;
    fp += pos && !fg;
    fn += !pos && fg;
    tn += !pos && !fg;
  }
  return e_from_counts(static_cast<double>(tp), static_cast<double>(fp), static_cast<double>(fn),
                       static_cast<double>(tn));
}

Curve e_curve(const SaliencyMap& s, const SaliencyMap& g) {
  check_pair(s, g);
  const Counts c = histogram(s, g);
  Curve out{};
  std::size_t tp = 0, fp = 0;
  for (int t = kThresholds - 1; t >= 0; --t) {
    tp += c.fg[t];
    fp += c.bg[t];
    out[t] = e_from_counts(static_cast<double>(tp), static_cast<double>(fp),
                           static_cast<double>(c.n_fg - tp), static_cast<double>(c.n_bg - fp));
  }
  return out;
}

double max_e(const SaliencyMap& s, const SaliencyMap& g) {
  const Curve e = e_curve(s, g);
  return *std::max_element(e.begin(), e.end());
}

ImageScores evaluate_image(const SaliencyMap& s, const SaliencyMap& g, std::string id) {
  ImageScores r;
  r.id = std::move(id);
  r.mae = mae(s, g);
  r.pr = pr_curve(s, g);
  r.f = f_curve(r.pr);
  r.max_f = *std::max_element(r.f.begin(), r.f.end());
  r.weighted_f = weighted_f(s, g);
  r.s_measure = s_measure(s, g);
  r.e = e_curve(s, g);
  r.max_e = *std::max_element(r.e.begin(), r.e.end());
  return r;
}

MetricReport aggregate(std::vector<ImageScores> images) {
  if (images.empty()) throw DataError("no images to evaluate");
  MetricReport r;
  const double n = static_cast<double>(images.size());
  for (const auto& im : images) {
    r.s_measure += im.s_measure;
    r.weighted_f += im.weighted_f;
    r.mae += im.mae;
    for (int t = 0; t < kThresholds; ++t) {
      r.pr_curve[t].precision += im.pr[t].precision;
      r.pr_curve[t].recall += im.pr[t].recall;
      r.f_curve[t] += im.f[t];
      r.e_curve[t] += im.e[t];
    }
  }
  r.s_measure /= n;
  r.weighted_f /= n;
  r.mae /= n;
  for (int t = 0; t < kThresholds; ++t) {
    r.pr_curve[t].precision /= n;
    r.pr_curve[t].recall /= n;
    r.f_curve[t] /= n;
    r.e_curve[t] /= n;
  }
  r.max_f = *std::max_element(r.f_curve.begin(), r.f_curve.end());
  r.max_e = *std::max_element(r.e_curve.begin(), r.e_curve.end());
  r.images = std::move(images);
  return r;
}

json report_json(const MetricReport& r) {
  return json{{"Smeasure", r.s_measure},
              {"maxF", r.max_f},
              {"weightedF", r.weighted_f},
              {"maxE", r.max_e},
              {"MAE", r.mae}};
}

std::string curves_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "threshold,precision,recall,f\n";
  for (int t = 0; t < kThresholds; ++t) {
    os << t << ',' << r.pr_curve[t].precision << ',' << r.pr_curve[t].recall << ','
       << r.f_curve[t] << '\n';
  }
  return os.str();
}

std::string per_image_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "id,Smeasure,maxF,weightedF,maxE,MAE\n";
  for (const auto& im : r.images) {
    os << im.id << ',' << im.s_measure << ',' << im.max_f << ',' << im.weighted_f << ','
       << im.max_e << ',' << im.mae << '\n';
  }
  return os.str();
}

namespace {

std::map<std::string, std::filesystem::path> png_files(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

SaliencyMap gray_map(const io::PngImage& im, bool binarize) {
  SaliencyMap m({im.height, im.width});
  const double scale = static_cast<double>(im.max_value());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = static_cast<double>(im.samples[i]);
    m[i] = binarize ? (v >= scale * (128.0 / 255.0) ? 1.0 : 0.0) : v / scale;
  }
  return m;
}

}  // namespace

MetricReport evaluate_dataset(const std::filesystem::path& pred_dir,
                              const std::filesystem::path& gt_dir, const EvaluateOptions& options,
                              std::vector<std::string>* skipped) {
  const auto preds = png_files(pred_dir);
  const auto gts = png_files(gt_dir);
  std::vector<std::string> missing;
  for (const auto& [id, _] : preds) {
    if (!gts.count(id)) missing.push_back(id + " (no ground truth)");
  }
  for (const auto& [id, _] : gts) {
    if (!preds.count(id)) missing.push_back(id + " (no prediction)");
  }
  if (!missing.empty() && !options.skip_missing) {
    std::string msg = "unmatched files:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  if (skipped) *skipped = missing;
  std::vector<ImageScores> scores;
  for (const auto& [id, pred_path] : preds) {
    auto it = gts.find(id);
    if (it == gts.end()) continue;
    const SaliencyMap s = gray_map(io::read_png(pred_path, 1), false);
    const SaliencyMap g = gray_map(io::read_png(it->second, 1), true);
    if (s.shape() != g.shape()) {
      throw DataError("prediction " + id + " is " + shape_string(s.shape()) +
                      " but its ground truth is " + shape_string(g.shape()));
    }
    scores.push_back(evaluate_image(s, g, id));
  }
  return aggregate(std::move(scores));
}

}  // namespace cmwnet::metrics
