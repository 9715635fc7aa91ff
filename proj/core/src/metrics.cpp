#include "trackservo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "trackservo/errors.hpp"

namespace trackservo {

TrackEvalResult average_jaccard(const TrackSet& pred, const TrackSet& gt,
                                const std::vector<double>& thresholds_px) {
  if (pred.points() != gt.points() || pred.frames() != gt.frames() ||
      pred.point_ids != gt.point_ids) {
    throw MismatchedTracks("average_jaccard: prediction/ground-truth mismatch");
  }
  const int n = pred.points();
  const int t_count = pred.frames();

  std::vector<int> query(n, -1);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) {
      if (!gt.is_occluded(i, t)) {
        query[i] = t;
        break;
      }
    }
  }

  TrackEvalResult out;
  out.thresholds_px = thresholds_px;
  long occ_correct = 0, occ_total = 0;
  for (int i = 0; i < n; ++i) {
    if (query[i] < 0) continue;
    for (int t = query[i]; t < t_count; ++t) {
      ++occ_total;
      if (pred.is_occluded(i, t) == gt.is_occluded(i, t)) ++occ_correct;
    }
  }
  out.occlusion_accuracy = occ_total > 0 ? double(occ_correct) / occ_total : 1.0;

  for (double delta : thresholds_px) {
    long tp = 0, fp = 0, fn = 0, gt_visible = 0, within = 0;
    for (int i = 0; i < n; ++i) {
      if (query[i] < 0) continue;
      for (int t = query[i]; t < t_count; ++t) {
        const bool gv = !gt.is_occluded(i, t);
        const bool pv = !pred.is_occluded(i, t);
        bool close = false;
        if (gv && pv) {
          const double err = to_pixels(distance(pred.position(i, t), gt.position(i, t)));
          close = err < delta;
        }
        if (pv && gv && close) {
          ++tp;
        } else {
          if (pv) ++fp;
          if (gv) ++fn;
        }
        if (gv) {
          ++gt_visible;
          if (pv && close) ++within;
        }
      }
    }
    const long denom = tp + fp + fn;
    out.jaccard.push_back(denom > 0 ? double(tp) / denom : 1.0);
    out.position_accuracy.push_back(gt_visible > 0 ? double(within) / gt_visible : 1.0);
  }
  out.average_jaccard =
      out.jaccard.empty() ? 1.0 : mean_of(out.jaccard);
  return out;
}

std::string format_rate(int successes, int trials) {
  if (trials < 1) throw InvalidConfig("format_rate: needs >= 1 trial");
  const double p = static_cast<double>(successes) / trials;
  const double stderr_pct = std::sqrt(p * (1.0 - p) / trials) * 100.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f +- %.1f", p * 100.0, stderr_pct);
  return buf;
}

std::string ablation_table(const std::vector<VariantResult>& rows) {
  std::ostringstream os;
  os << "variant,success_rate\n";
  for (const auto& row : rows) {
    os << row.name << ',' << format_rate(row.successes, row.trials) << '\n';
  }
  return os.str();
}

PlacementStats placement_stats(const std::vector<Vec2>& positions_mm) {
  if (positions_mm.size() < 2) {
    throw InvalidConfig("placement_stats: needs >= 2 samples");
  }
  std::vector<double> xs, ys;
  for (const auto& p : positions_mm) {
    xs.push_back(p.x());
    ys.push_back(p.y());
  }
  PlacementStats out;
  out.mean_x = mean_of(xs);
  out.std_x = std::sqrt(sample_variance(xs));
  out.mean_y = mean_of(ys);
  out.std_y = std::sqrt(sample_variance(ys));
  return out;
}

// ---------------------------------------------------------------------------
// Incomplete beta / F quantile (continued-fraction evaluation)

namespace {

double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double f_quantile(double p, double d1, double d2) {
  if (p <= 0.0 || p >= 1.0 || d1 <= 0.0 || d2 <= 0.0) {
    throw InvalidConfig("f_quantile: bad arguments");
  }
  auto cdf = [&](double f) {
    const double x = d1 * f / (d1 * f + d2);
    return incomplete_beta(d1 / 2.0, d2 / 2.0, x);
  };
  double lo = 0.0, hi = 1.0;
  while (cdf(hi) < p) hi *= 2.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

bool variance_ratio_no_larger(double var1, double d1, double var2, double d2,
                              double confidence) {
  if (var2 <= 0.0) return var1 <= 0.0;
  const double ratio = var1 / var2;
  return ratio < f_quantile(confidence, d1, d2);
}

// ---------------------------------------------------------------------------

std::string csv_line(const std::vector<std::string>& fields) {
  std::ostringstream os;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) os << ',';
    os << fields[i];
  }
  os << '\n';
  return os.str();
}

std::string render_scatter_svg(const std::vector<ScatterSeries>& series,
                               const std::string& title, const std::string& x_label,
                               const std::string& y_label) {
  double min_x = -1, max_x = 1, min_y = -1, max_y = 1;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      if (!any) {
        min_x = max_x = p.x();
        min_y = max_y = p.y();
        any = true;
      }
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
  }
  const double pad_x = std::max(1e-6, (max_x - min_x) * 0.15 + 1e-3);
  const double pad_y = std::max(1e-6, (max_y - min_y) * 0.15 + 1e-3);
  min_x -= pad_x;
  max_x += pad_x;
  min_y -= pad_y;
  max_y += pad_y;
  const double w = 520, h = 420, ml = 60, mb = 50, mt = 40, mr = 140;
  auto sx = [&](double x) { return ml + (x - min_x) / (max_x - min_x) * (w - ml - mr); };
  auto sy = [&](double y) { return h - mb - (y - min_y) / (max_y - min_y) * (h - mt - mb); };

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
     << "' viewBox='0 0 " << w << ' ' << h << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16'>"
     << title << "</text>\n";
  os << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='"
     << h - mb << "' stroke='black'/>\n";
  os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
     << "' stroke='black'/>\n";
  os << "<text x='" << (ml + w - mr) / 2 << "' y='" << h - 12
     << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";
  os << "<text x='16' y='" << (mt + h - mb) / 2
     << "' text-anchor='middle' font-size='12' transform='rotate(-90 16 "
     << (mt + h - mb) / 2 << ")'>" << y_label << "</text>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double fx = min_x + (max_x - min_x) * tick / 4.0;
    const double fy = min_y + (max_y - min_y) * tick / 4.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof(bx), "%.2f", fx);
    std::snprintf(by, sizeof(by), "%.2f", fy);
    os << "<text x='" << sx(fx) << "' y='" << h - mb + 16
       << "' text-anchor='middle' font-size='10'>" << bx << "</text>\n";
    os << "<text x='" << ml - 6 << "' y='" << sy(fy) + 4
       << "' text-anchor='end' font-size='10'>" << by << "</text>\n";
  }
  double legend_y = mt + 10;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      os << "<circle cx='" << sx(p.x()) << "' cy='" << sy(p.y())
         << "' r='4' fill='" << s.color << "' fill-opacity='0.7'/>\n";
    }
    os << "<circle cx='" << w - mr + 16 << "' cy='" << legend_y << "' r='4' fill='"
       << s.color << "'/>\n";
    os << "<text x='" << w - mr + 26 << "' y='" << legend_y + 4
       << "' font-size='12'>" << s.label << "</text>\n";
    legend_y += 18;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace trackservo
