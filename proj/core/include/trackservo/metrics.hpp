#pragma once

#include <string>
#include <vector>

#include "trackservo/scene.hpp"

namespace trackservo {

struct TrackEvalResult {
  double average_jaccard = 0.0;
  std::vector<double> thresholds_px;
  std::vector<double> jaccard;
  std::vector<double> position_accuracy;
  double occlusion_accuracy = 0.0;
};

/// Query-first average Jaccard at 256x256: for each point, frames from its
/// first ground-truth-visible frame (inclusive) are scored; a true positive
/// is visible in both and within the pixel threshold.
TrackEvalResult average_jaccard(const TrackSet& pred, const TrackSet& gt,
                                const std::vector<double>& thresholds_px = {
                                    1, 2, 4, 8, 16});

/// "83.8 +- 1.7": percent success with binomial standard error, one decimal.
std::string format_rate(int successes, int trials);

struct VariantResult {
  std::string name;
  int successes = 0;
  int trials = 0;
};

std::string ablation_table(const std::vector<VariantResult>& rows);

struct PlacementStats {
  double mean_x = 0.0;
  double std_x = 0.0;  // sample std, n-1
  double mean_y = 0.0;
  double std_y = 0.0;
};

PlacementStats placement_stats(const std::vector<Vec2>& positions_mm);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Quantile of the F distribution (used by the variance-ratio test).
double f_quantile(double p, double d1, double d2);

/// One-sided variance-ratio test: true when var1 is statistically no larger
/// than var2 at the given confidence, with chi-square dof d1 and d2.
bool variance_ratio_no_larger(double var1, double d1, double var2, double d2,
                              double confidence = 0.95);

// ---------------------------------------------------------------------------
// Report emitters

std::string csv_line(const std::vector<std::string>& fields);

struct ScatterSeries {
  std::string label;
  std::string color;
  std::vector<Vec2> points;
};

/// Self-contained SVG scatter plot (placement positions, demo vs trials).
std::string render_scatter_svg(const std::vector<ScatterSeries>& series,
                               const std::string& title,
                               const std::string& x_label = "x / mm",
                               const std::string& y_label = "y / mm");

}  // namespace trackservo
