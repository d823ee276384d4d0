#pragma once

// Saliency evaluation: MAE, PR/F curves and max-F, weighted F, S-measure and
// E-measure. Maps are rank-2 H x W tensors; predictions in [0,1], ground
// truth in {0,1}.
//
// Threshold sweeps quantize predictions to q = round(255 S) and call a pixel
// positive at threshold tau in 0..255 when q >= tau, which for 8-bit inputs
// is exactly S >= tau/255.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "cmwnet/config.hpp"
#include "cmwnet/types.hpp"

namespace cmwnet::metrics {

inline constexpr int kThresholds = 256;
inline constexpr double kBetaSqF = 0.3;
inline constexpr double kBetaSqWeighted = 1.0;
inline constexpr double kEps = 2.220446049250313e-16;

struct PRPoint {
  double precision = 0;
  double recall = 0;
  bool operator==(const PRPoint&) const = default;
};

using PRCurve = std::array<PRPoint, kThresholds>;
using Curve = std::array<double, kThresholds>;

/// Quantization level 0..255 of a saliency value (clamped).
int quantize(double s);

double mae(const SaliencyMap& s, const SaliencyMap& g);

/// Precision is 1 at thresholds with no predicted positives. Throws
/// DataError when g has no foreground.
PRCurve pr_curve(const SaliencyMap& s, const SaliencyMap& g);

/// F_beta at every threshold, 0 where precision and recall are both 0.
Curve f_curve(const PRCurve& pr, double beta_sq = kBetaSqF);
double max_f(const PRCurve& pr, double beta_sq = kBetaSqF);

/// Weighted F-measure with a 7x7 Gaussian (sigma 5) dependency kernel and
/// distance-based background importance. Throws DataError when g has no
/// foreground.
double weighted_f(const SaliencyMap& s, const SaliencyMap& g, double beta_sq = kBetaSqWeighted);

double s_object(const SaliencyMap& s, const SaliencyMap& g);
double s_region(const SaliencyMap& s, const SaliencyMap& g);
/// lambda * S_object + (1 - lambda) * S_region, clamped at 0; mean-based
/// score when g is all background or all foreground.
double s_measure(const SaliencyMap& s, const SaliencyMap& g, double lambda = 0.5);

/// Enhanced-alignment score of a binary prediction against g.
double e_measure_binary(const std::vector<unsigned char>& fm, const SaliencyMap& g);
/// E-measure at every threshold and its maximum.
Curve e_curve(const SaliencyMap& s, const SaliencyMap& g);
double max_e(const SaliencyMap& s, const SaliencyMap& g);

struct ImageScores {
  std::string id;
  double s_measure = 0, max_f = 0, weighted_f = 0, max_e = 0, mae = 0;
  PRCurve pr{};
  Curve f{};
  Curve e{};
};

ImageScores evaluate_image(const SaliencyMap& s, const SaliencyMap& g, std::string id = {});

/// Dataset-level scores: S, weighted F and MAE are per-image means; the
/// curves are pointwise per-image means and max_f / max_e are the maxima of
/// the mean F and E curves.
struct MetricReport {
  double s_measure = 0, max_f = 0, weighted_f = 0, max_e = 0, mae = 0;
  PRCurve pr_curve{};
  Curve f_curve{};
  Curve e_curve{};
  std::vector<ImageScores> images;
};

MetricReport aggregate(std::vector<ImageScores> images);

/// Keys Smeasure, maxF, weightedF, maxE, MAE.
json report_json(const MetricReport& r);
/// Header plus 256 rows: threshold, precision, recall, f.
std::string curves_csv(const MetricReport& r);
std::string per_image_csv(const MetricReport& r);

struct EvaluateOptions {
  bool skip_missing = false;
};

/// Pairs <pred_dir>/<id>.png with <gt_dir>/<id>.png (8-bit grayscale) in
/// sorted id order. Unmatched ids abort with DataError listing them unless
/// skip_missing is set.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir,
                              const std::filesystem::path& gt_dir,
                              const EvaluateOptions& options = {},
                              std::vector<std::string>* skipped = nullptr);

}  // namespace cmwnet::metrics
