#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "pupiltrack/decoder.hpp"
#include "pupiltrack/errors.hpp"

namespace pupiltrack {

// Residual and predicted standard deviation per axis, in common units.
struct ResidualSample {
  double err_x = 0.0;
  double err_y = 0.0;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
};

// Mahalanobis distance under a diagonal covariance.
inline double mahalanobis(const ResidualSample& s) {
  if (!(s.sigma_x > 0.0) || !(s.sigma_y > 0.0) || !std::isfinite(s.sigma_x) || !std::isfinite(s.sigma_y)) {
    throw ValidationError("predicted sigma must be positive and finite");
  }
  const double zx = s.err_x / s.sigma_x;
  const double zy = s.err_y / s.sigma_y;
  return std::sqrt(zx * zx + zy * zy);
}

// CDF of the radial distance of a 2-D standard normal: 1 - exp(-z^2 / 2).
inline double chi2_2dof_cdf(double z) { return 1.0 - std::exp(-0.5 * z * z); }

struct CalibrationCurve {
  std::vector<double> expected;  // theoretical probability p
  std::vector<double> observed;  // fraction of samples with F(z) <= p
  double mse = 0.0;              // mean squared distance from the diagonal
};

// Reliability curve on the grid p = j / points, j = 0..points. Observed below
// expected means the predicted sigmas are too small.
inline CalibrationCurve calibration_curve(std::span<const ResidualSample> samples, int points = 100) {
  if (samples.empty()) throw ValidationError("calibration needs at least one sample");
  if (points < 1) throw ValidationError("calibration grid needs at least one interval");
  std::vector<double> f;
  f.reserve(samples.size());
  for (const auto& s : samples) f.push_back(chi2_2dof_cdf(mahalanobis(s)));
  std::sort(f.begin(), f.end());

  CalibrationCurve c;
  double sq = 0.0;
  for (int j = 0; j <= points; ++j) {
    const double p = static_cast<double>(j) / points;
    const auto below = std::upper_bound(f.begin(), f.end(), p) - f.begin();
    const double obs = static_cast<double>(below) / static_cast<double>(f.size());
    c.expected.push_back(p);
    c.observed.push_back(obs);
    sq += (obs - p) * (obs - p);
  }
  c.mse = sq / static_cast<double>(points + 1);
  return c;
}

inline std::vector<ResidualSample> residuals(std::span<const Prediction> preds, std::span<const Point2> truths) {
  if (preds.size() != truths.size()) throw ValidationError("predictions and truths differ in length");
  std::vector<ResidualSample> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].has_uncertainty()) throw ValidationError("predictions carry no uncertainty");
    out.push_back({truths[i][0] - preds[i].xy[0], truths[i][1] - preds[i].xy[1], preds[i].sigma(0),
                   preds[i].sigma(1)});
  }
  return out;
}

inline CalibrationCurve calibration_curve(std::span<const Prediction> preds, std::span<const Point2> truths,
                                          int points = 100) {
  return calibration_curve(residuals(preds, truths), points);
}

struct ConfidenceSample {
  double u = 0.0;         // predicted log-variance; lower is more confident
  double error_px = 0.0;  // L2 error
};

inline constexpr std::array<int, 10> kConfidencePercentiles = {10, 20, 30, 40, 50, 60, 70, 80, 90, 100};

inline double median(std::vector<double> v) {
  if (v.empty()) throw ValidationError("median of an empty set");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

// Median error among the p% most confident samples, p = 10..100. Samples
// tied with the last one admitted are admitted too, so equal uncertainties
// are never split.
inline std::array<double, 10> error_vs_confidence(std::span<const ConfidenceSample> samples) {
  if (samples.empty()) throw ValidationError("error_vs_confidence needs at least one sample");
  std::vector<ConfidenceSample> sorted(samples.begin(), samples.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.u < b.u; });
  std::array<double, 10> out{};
  for (std::size_t k = 0; k < kConfidencePercentiles.size(); ++k) {
    auto n = static_cast<std::size_t>(
        std::ceil(static_cast<double>(sorted.size()) * kConfidencePercentiles[k] / 100.0));
    n = std::max<std::size_t>(n, 1);
    while (n < sorted.size() && sorted[n].u == sorted[n - 1].u) ++n;
    std::vector<double> errs;
    for (std::size_t i = 0; i < n; ++i) errs.push_back(sorted[i].error_px);
    out[k] = median(std::move(errs));
  }
  return out;
}

// Confidence key is the mean log-variance over both axes.
inline std::array<double, 10> error_vs_confidence(std::span<const Prediction> preds, std::span<const Point2> truths) {
  if (preds.size() != truths.size()) throw ValidationError("predictions and truths differ in length");
  std::vector<ConfidenceSample> s;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].has_uncertainty()) throw ValidationError("predictions carry no uncertainty");
    const double ex = truths[i][0] - preds[i].xy[0];
    const double ey = truths[i][1] - preds[i].xy[1];
    s.push_back({0.5 * (preds[i].log_variance(0) + preds[i].log_variance(1)),
                 kPixelScale * std::hypot(ex, ey)});
  }
  return error_vs_confidence(s);
}

}  // namespace pupiltrack
