#pragma once

// Sample-quality metrics.

#include "nisk/bayes.hpp"
#include "nisk/targets.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace nisk {

struct KsdConfig {
  enum class Estimator { UStat, VStat };
  double bandwidth = 0.25;
  Estimator estimator = Estimator::UStat;
  bool multi_scale = false;
  std::vector<double> scales{0.1, 0.25, 0.5};  // used when multi_scale is set

  void validate() const {
    require(bandwidth > 0.0, "KSD bandwidth must be positive");
    if (multi_scale) {
      require(!scales.empty(), "multi-scale KSD needs bandwidths");
      for (double h : scales) require(h > 0.0, "KSD bandwidths must be positive");
    }
  }
};

// Squared discrepancy estimate with the RBF Stein kernel
//   u(x, y) = k [ s_x.s_y + (s_x - s_y).(x - y) / h^2 + D / h^2 - |x - y|^2 / h^4 ],
//   k = exp(-|x - y|^2 / (2 h^2)),
// summed over bandwidths in multi-scale mode. May be negative for UStat.
inline double ksd_squared(const Matrix& samples, const TargetDensity& target, const KsdConfig& cfg = {}) {
  cfg.validate();
  require(samples.cols() >= 2, "KSD needs at least two samples");
  require_shape(samples.rows() == target.dim(), "KSD: sample dim does not match target");
  const Matrix scores = target.score_batch(samples);
  const std::vector<double> hs = cfg.multi_scale ? cfg.scales : std::vector<double>{cfg.bandwidth};
  const Eigen::Index n = samples.cols();
  const auto d = static_cast<double>(samples.rows());
  const bool ustat = cfg.estimator == KsdConfig::Estimator::UStat;

  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Eigen::Index j = ustat ? i + 1 : i; j < n; ++j) {
      const Vector diff = samples.col(i) - samples.col(j);
      const double r2 = diff.squaredNorm();
      const double ss = scores.col(i).dot(scores.col(j));
      const double cross = (scores.col(i) - scores.col(j)).dot(diff);
      double u = 0.0;
      for (double h : hs) {
        const double h2 = h * h;
        const double k = std::exp(-r2 / (2.0 * h2));
        u += k * (ss + cross / h2 + d / h2 - r2 / (h2 * h2));
      }
      row += (j == i) ? u : 2.0 * u;
    }
    total += row;
  }
  const auto nn = static_cast<double>(n);
  return ustat ? total / (nn * (nn - 1.0)) : total / (nn * nn);
}

// Reported KSD: sqrt of the clamped squared estimate.
inline double ksd(const Matrix& samples, const TargetDensity& target, const KsdConfig& cfg = {}) {
  return std::sqrt(std::max(0.0, ksd_squared(samples, target, cfg)));
}

struct MomentError {
  double mean_error = 0.0;  // L2
  double cov_error = 0.0;   // Frobenius
};

inline Vector sample_mean(const Matrix& samples) { return samples.rowwise().mean(); }

// Unbiased (n - 1) covariance.
inline Matrix sample_covariance(const Matrix& samples) {
  const Matrix centered = samples.colwise() - sample_mean(samples);
  return centered * centered.transpose() / static_cast<double>(samples.cols() - 1);
}

inline MomentError moment_error(const Matrix& samples, const Vector& reference_mean,
                                const Matrix& reference_cov) {
  require(samples.cols() >= 2, "moment_error needs at least two samples");
  require_shape(reference_mean.size() == samples.rows() && reference_cov.rows() == samples.rows() &&
                    reference_cov.cols() == samples.rows(),
                "moment_error: reference shape mismatch");
  return {(sample_mean(samples) - reference_mean).norm(),
          (sample_covariance(samples) - reference_cov).norm()};
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic_1d(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && !b.empty(), "KS statistic needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double best = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    best = std::max(best, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return best;
}

// One-sample statistic against an analytic CDF.
inline double ks_statistic_1d(std::vector<double> a, const std::function<double(double)>& cdf) {
  require(!a.empty(), "KS statistic needs non-empty samples");
  std::sort(a.begin(), a.end());
  const auto n = static_cast<double>(a.size());
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double f = cdf(a[i]);
    best = std::max({best, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return std::clamp(best, 0.0, 1.0);
}

inline std::vector<double> row_values(const Matrix& samples, Eigen::Index row = 0) {
  std::vector<double> out(static_cast<std::size_t>(samples.cols()));
  for (Eigen::Index j = 0; j < samples.cols(); ++j) out[static_cast<std::size_t>(j)] = samples(row, j);
  return out;
}

// Posterior-predictive accuracy: mean of sigmoid(w.x) over posterior samples
// (last coordinate, log alpha, ignored), thresholded at 0.5; ties predict 1.
inline double bayes_test_accuracy(const Matrix& posterior_samples, const Dataset& test) {
  require(test.size() > 0, "test split is empty");
  require(posterior_samples.cols() >= 1, "need at least one posterior sample");
  require_shape(posterior_samples.rows() == test.dim() + 1,
                "posterior samples must have dim d + 1");
  const Matrix w = posterior_samples.topRows(test.dim());
  const Matrix logits = w.transpose() * test.features;  // S x N
  long correct = 0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    // sorted summation keeps the average independent of sample order
    std::vector<double> probs(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index s = 0; s < logits.rows(); ++s) probs[static_cast<std::size_t>(s)] = sigmoid(logits(s, i));
    std::sort(probs.begin(), probs.end());
    double p = 0.0;
    for (double v : probs) p += v;
    p /= static_cast<double>(probs.size());
    const double predicted = p >= 0.5 ? 1.0 : 0.0;
    if (predicted == test.labels(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace nisk
