#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pupiltrack/calibration.hpp"

using namespace pupiltrack;

namespace {

std::vector<ResidualSample> gaussian_residuals(std::size_t n, double true_sigma, double predicted_sigma,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> e(0.0, true_sigma);
  std::vector<ResidualSample> out(n);
  for (auto& s : out) s = {e(rng), e(rng), predicted_sigma, predicted_sigma};
  return out;
}

}  // namespace

TEST(Calibration, CdfExamples) {
  EXPECT_EQ(chi2_2dof_cdf(0.0), 0.0);
  EXPECT_NEAR(chi2_2dof_cdf(std::sqrt(2.0 * std::log(2.0))), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(mahalanobis({3.0, 4.0, 1.0, 1.0}), 5.0);
  EXPECT_DOUBLE_EQ(mahalanobis({3.0, 4.0, 3.0, 2.0}), std::sqrt(5.0));
  EXPECT_THROW(mahalanobis({1.0, 1.0, 0.0, 1.0}), ValidationError);
  EXPECT_THROW(mahalanobis({1.0, 1.0, 1.0, std::nan("")}), ValidationError);
}

TEST(Calibration, MatchedSigmaIsCalibrated) {
  const auto c = calibration_curve(gaussian_residuals(100000, 0.7, 0.7, 1));
  EXPECT_LT(c.mse, 1e-3);
  EXPECT_EQ(c.expected.size(), 101u);
  EXPECT_EQ(c.observed.front(), 0.0);
  EXPECT_EQ(c.observed.back(), 1.0);
}

TEST(Calibration, OverconfidentCurveFallsBelowDiagonal) {
  const auto c = calibration_curve(gaussian_residuals(50000, 0.7, 0.35, 2));
  for (std::size_t j = 1; j + 1 < c.expected.size(); ++j) EXPECT_LT(c.observed[j], c.expected[j]);
  const auto under = calibration_curve(gaussian_residuals(50000, 0.7, 1.4, 3));
  for (std::size_t j = 1; j + 1 < under.expected.size(); ++j) EXPECT_GT(under.observed[j], under.expected[j]);
}

TEST(Calibration, FromPredictions) {
  std::vector<Prediction> preds;
  std::vector<Point2> truths;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> e(0.0, 1.0);
  for (int i = 0; i < 40000; ++i) {
    const double u = -6.0 + 0.001 * (i % 100);
    const double s = std::exp(0.5 * u);
    preds.push_back({{0.5, 0.5}, {u, 0.0}, UncertaintyVariant::shared});
    truths.push_back({0.5 + s * e(rng), 0.5 + s * e(rng)});
  }
  EXPECT_LT(calibration_curve(preds, truths).mse, 1e-3);
  preds[0].variant = UncertaintyVariant::none;
  EXPECT_THROW(calibration_curve(preds, truths), ValidationError);
}

TEST(Confidence, ConstantUncertaintyGivesGlobalMedian) {
  std::vector<ConfidenceSample> s;
  for (int i = 0; i < 101; ++i) s.push_back({1.0, static_cast<double>((i * 37) % 101)});
  for (double m : error_vs_confidence(s)) EXPECT_EQ(m, 50.0);
  EXPECT_THROW(error_vs_confidence(std::vector<ConfidenceSample>{}), ValidationError);
}

TEST(Confidence, RankCorrelatedIsNonDecreasing) {
  std::vector<ConfidenceSample> s;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    s.push_back({v, std::exp(v)});
  }
  const auto c = error_vs_confidence(s);
  for (std::size_t k = 1; k < c.size(); ++k) EXPECT_LT(c[k - 1], c[k]);
}

TEST(Confidence, HeteroscedasticMostConfidentIsBetter) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> e(0.0, 1.0);
  std::vector<Prediction> preds;
  std::vector<Point2> truths;
  for (int i = 0; i < 20000; ++i) {
    const double u = -8.0 + 4.0 * std::sin(0.001 * i);  // sigma varies over time
    const double s = std::exp(0.5 * u);
    preds.push_back({{0.5, 0.5}, {u, u}, UncertaintyVariant::per_axis});
    truths.push_back({0.5 + s * e(rng), 0.5 + s * e(rng)});
  }
  const auto c = error_vs_confidence(preds, truths);
  EXPECT_LT(c.front(), c.back());
}

TEST(Median, EvenAndOdd) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_THROW(median({}), ValidationError);
}
