#pragma once

// Un-normalized target densities log q(x) with their analytic scores.

#include "nisk/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace nisk {

class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual int dim() const = 0;
  virtual std::string name() const = 0;

  double log_density(const Vector& x) const {
    check(x);
    return log_density_at(x);
  }

  // grad_x log q(x)
  Vector score(const Vector& x) const {
    check(x);
    return score_at(x);
  }

  // Jacobian of the score (Hessian of log q).
  Matrix hessian(const Vector& x) const {
    check(x);
    return hessian_at(x);
  }

  // div_x score = trace of the Hessian.
  double laplacian(const Vector& x) const {
    check(x);
    return laplacian_at(x);
  }

  Vector grad_laplacian(const Vector& x) const {
    check(x);
    return grad_laplacian_at(x);
  }

  Matrix score_batch(const Matrix& xs) const {
    Matrix out(xs.rows(), xs.cols());
    for (Eigen::Index j = 0; j < xs.cols(); ++j) out.col(j) = score(xs.col(j));
    return out;
  }

  // Independent exact draws (D x n) where a direct sampler exists.
  virtual std::optional<Matrix> sample_exact(Eigen::Index, Rng&) const { return std::nullopt; }

  struct Moments {
    Vector mean;
    Matrix cov;
  };
  virtual std::optional<Moments> exact_moments() const { return std::nullopt; }

  static constexpr double kHessianStep = 1e-4;
  static constexpr double kLaplacianGradStep = 1e-3;

 protected:
  virtual double log_density_at(const Vector& x) const = 0;
  virtual Vector score_at(const Vector& x) const = 0;

  // Central differences of the score, symmetrized.
  virtual Matrix hessian_at(const Vector& x) const {
    const int d = dim();
    Matrix h(d, d);
    for (int j = 0; j < d; ++j) {
      Vector xp = x, xm = x;
      xp(j) += kHessianStep;
      xm(j) -= kHessianStep;
      h.col(j) = (score_at(xp) - score_at(xm)) / (2.0 * kHessianStep);
    }
    return 0.5 * (h + h.transpose());
  }

  virtual double laplacian_at(const Vector& x) const { return hessian_at(x).trace(); }

  virtual Vector grad_laplacian_at(const Vector& x) const {
    Vector g(dim());
    for (int j = 0; j < dim(); ++j) {
      Vector xp = x, xm = x;
      xp(j) += kLaplacianGradStep;
      xm(j) -= kLaplacianGradStep;
      g(j) = (laplacian_at(xp) - laplacian_at(xm)) / (2.0 * kLaplacianGradStep);
    }
    return g;
  }

 private:
  void check(const Vector& x) const {
    require_shape(x.size() == dim(), name() + ": expected dimension " + std::to_string(dim()) +
                                         ", got " + std::to_string(x.size()));
    require(x.allFinite(), name() + ": non-finite input");
  }

  friend class ScaledTarget;
};

using TargetPtr = std::shared_ptr<const TargetDensity>;

// Isotropic Gaussian N(mean, variance * I).
class Gaussian final : public TargetDensity {
 public:
  Gaussian(Vector mean, double variance) : mean_(std::move(mean)), var_(variance) {
    require(var_ > 0.0, "gaussian variance must be positive");
    require(mean_.size() > 0, "gaussian dimension must be positive");
  }
  static Gaussian standard(int d) { return {Vector::Zero(d), 1.0}; }

  int dim() const override { return static_cast<int>(mean_.size()); }
  std::string name() const override { return "gauss"; }
  const Vector& mean() const { return mean_; }
  double variance() const { return var_; }

  std::optional<Matrix> sample_exact(Eigen::Index n, Rng& rng) const override {
    return Matrix((std::sqrt(var_) * rng.normal_matrix(dim(), n)).colwise() + mean_);
  }
  std::optional<Moments> exact_moments() const override {
    return Moments{mean_, var_ * Matrix::Identity(dim(), dim())};
  }

 protected:
  double log_density_at(const Vector& x) const override {
    return -0.5 * (x - mean_).squaredNorm() / var_;
  }
  Vector score_at(const Vector& x) const override { return -(x - mean_) / var_; }
  Matrix hessian_at(const Vector&) const override {
    return -Matrix::Identity(dim(), dim()) / var_;
  }
  double laplacian_at(const Vector&) const override { return -dim() / var_; }
  Vector grad_laplacian_at(const Vector&) const override { return Vector::Zero(dim()); }

 private:
  Vector mean_;
  double var_;
};

// log q = -x1^2/(2 s^2) - (x2 + b x1^2 - s^2 b)^2 / 2
class Banana final : public TargetDensity {
 public:
  explicit Banana(double b = 0.5, double s = 2.0) : b_(b), s_(s) {
    require(s_ > 0.0, "banana scale must be positive");
  }
  int dim() const override { return 2; }
  std::string name() const override { return "banana"; }

  // x1 ~ N(0, s^2), x2 | x1 ~ N(s^2 b - b x1^2, 1)
  std::optional<Matrix> sample_exact(Eigen::Index n, Rng& rng) const override {
    Matrix z = rng.normal_matrix(2, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double x1 = s_ * z(0, j);
      z(0, j) = x1;
      z(1, j) = z(1, j) + s_ * s_ * b_ - b_ * x1 * x1;
    }
    return z;
  }
  std::optional<Moments> exact_moments() const override {
    Matrix cov = Matrix::Zero(2, 2);
    cov(0, 0) = s_ * s_;
    cov(1, 1) = 1.0 + 2.0 * b_ * b_ * std::pow(s_, 4);
    return Moments{Vector::Zero(2), cov};
  }

 protected:
  double u(const Vector& x) const { return x(1) + b_ * x(0) * x(0) - s_ * s_ * b_; }
  double log_density_at(const Vector& x) const override {
    const double v = u(x);
    return -x(0) * x(0) / (2.0 * s_ * s_) - 0.5 * v * v;
  }
  Vector score_at(const Vector& x) const override {
    const double v = u(x);
    Vector g(2);
    g << -x(0) / (s_ * s_) - 2.0 * b_ * x(0) * v, -v;
    return g;
  }
  Matrix hessian_at(const Vector& x) const override {
    const double v = u(x);
    Matrix h(2, 2);
    h << -1.0 / (s_ * s_) - 2.0 * b_ * v - 4.0 * b_ * b_ * x(0) * x(0), -2.0 * b_ * x(0),
        -2.0 * b_ * x(0), -1.0;
    return h;
  }
  double laplacian_at(const Vector& x) const override { return hessian_at(x).trace(); }
  Vector grad_laplacian_at(const Vector& x) const override {
    Vector g(2);
    g << -12.0 * b_ * b_ * x(0), -2.0 * b_;
    return g;
  }

 private:
  double b_, s_;
};

// log q = -x1^4/4 + a x1^2/2 - x2^2/2; modes at x1 = +-sqrt(a).
class DoubleWell final : public TargetDensity {
 public:
  explicit DoubleWell(double a = 4.0) : a_(a) {}
  int dim() const override { return 2; }
  std::string name() const override { return "double_well"; }

 protected:
  double log_density_at(const Vector& x) const override {
    const double x2 = x(0) * x(0);
    return -0.25 * x2 * x2 + 0.5 * a_ * x2 - 0.5 * x(1) * x(1);
  }
  Vector score_at(const Vector& x) const override {
    Vector g(2);
    g << -x(0) * x(0) * x(0) + a_ * x(0), -x(1);
    return g;
  }
  Matrix hessian_at(const Vector& x) const override {
    Matrix h = Matrix::Zero(2, 2);
    h(0, 0) = -3.0 * x(0) * x(0) + a_;
    h(1, 1) = -1.0;
    return h;
  }
  double laplacian_at(const Vector& x) const override { return -3.0 * x(0) * x(0) + a_ - 1.0; }
  Vector grad_laplacian_at(const Vector& x) const override {
    Vector g(2);
    g << -6.0 * x(0), 0.0;
    return g;
  }

 private:
  double a_;
};

// Mixture of isotropic Gaussians sharing one variance.
class GaussianMixture final : public TargetDensity {
 public:
  GaussianMixture(std::vector<Vector> means, double variance, Vector weights,
                  std::string name = "mixture")
      : means_(std::move(means)), var_(variance), weights_(std::move(weights)),
        name_(std::move(name)) {
    require(!means_.empty(), "mixture needs at least one component");
    require(var_ > 0.0, "mixture variance must be positive");
    require(weights_.size() == static_cast<Eigen::Index>(means_.size()),
            "mixture weights must match component count");
    require((weights_.array() > 0.0).all(), "mixture weights must be positive");
    require(std::abs(weights_.sum() - 1.0) < 1e-12, "mixture weights must sum to 1");
    for (const auto& m : means_) require(m.size() == means_[0].size(), "mixture means differ in dim");
  }

  // Equal-weight modes on a circle.
  static GaussianMixture ring(int modes, double radius, double variance, std::string name) {
    std::vector<Vector> means;
    for (int k = 0; k < modes; ++k) {
      const double t = 2.0 * std::numbers::pi * k / modes;
      Vector m(2);
      m << radius * std::cos(t), radius * std::sin(t);
      means.push_back(m);
    }
    return {means, variance, Vector::Constant(modes, 1.0 / modes), std::move(name)};
  }

  int dim() const override { return static_cast<int>(means_[0].size()); }
  std::string name() const override { return name_; }
  const std::vector<Vector>& means() const { return means_; }
  double variance() const { return var_; }
  const Vector& weights() const { return weights_; }

  std::optional<Matrix> sample_exact(Eigen::Index n, Rng& rng) const override {
    Matrix out(dim(), n);
    const double sd = std::sqrt(var_);
    for (Eigen::Index j = 0; j < n; ++j) {
      double u = rng.uniform();
      std::size_t k = 0;
      while (k + 1 < means_.size() && u >= weights_(static_cast<Eigen::Index>(k))) {
        u -= weights_(static_cast<Eigen::Index>(k));
        ++k;
      }
      for (Eigen::Index i = 0; i < dim(); ++i) out(i, j) = means_[k](i) + sd * rng.normal();
    }
    return out;
  }
  std::optional<Moments> exact_moments() const override {
    Vector mu = Vector::Zero(dim());
    Matrix second = var_ * Matrix::Identity(dim(), dim());
    for (std::size_t k = 0; k < means_.size(); ++k) {
      const double w = weights_(static_cast<Eigen::Index>(k));
      mu += w * means_[k];
      second += w * means_[k] * means_[k].transpose();
    }
    return Moments{mu, second - mu * mu.transpose()};
  }

  // Index of the most responsible component.
  int nearest_mode(const Vector& x) const {
    Eigen::Index k = 0;
    responsibilities(x).maxCoeff(&k);
    return static_cast<int>(k);
  }

  Vector responsibilities(const Vector& x) const {
    Vector logits(static_cast<Eigen::Index>(means_.size()));
    for (std::size_t k = 0; k < means_.size(); ++k)
      logits(static_cast<Eigen::Index>(k)) =
          std::log(weights_(static_cast<Eigen::Index>(k))) - 0.5 * (x - means_[k]).squaredNorm() / var_;
    const double top = logits.maxCoeff();
    Vector r = (logits.array() - top).exp();
    return r / r.sum();
  }

 protected:
  double log_density_at(const Vector& x) const override {
    double top = -std::numeric_limits<double>::infinity();
    std::vector<double> logits;
    for (std::size_t k = 0; k < means_.size(); ++k) {
      logits.push_back(std::log(weights_(static_cast<Eigen::Index>(k))) -
                       0.5 * (x - means_[k]).squaredNorm() / var_);
      top = std::max(top, logits.back());
    }
    double acc = 0.0;
    for (double l : logits) acc += std::exp(l - top);
    return top + std::log(acc);
  }
  Vector score_at(const Vector& x) const override {
    const Vector r = responsibilities(x);
    Vector g = Vector::Zero(dim());
    for (std::size_t k = 0; k < means_.size(); ++k)
      g += r(static_cast<Eigen::Index>(k)) * (means_[k] - x);
    return g / var_;
  }

 private:
  std::vector<Vector> means_;
  double var_;
  Vector weights_;
  std::string name_;
};

// log q = -(|x| - r0)^2 / (2 w^2) + c cos(k atan2(x2, x1))
class RingWave final : public TargetDensity {
 public:
  RingWave(double r0 = 3.0, double width = 0.5, int k = 6, double c = 1.0,
           std::string name = "ring_wave")
      : r0_(r0), w_(width), k_(k), c_(c), name_(std::move(name)) {
    require(w_ > 0.0, "ring width must be positive");
  }
  int dim() const override { return 2; }
  std::string name() const override { return name_; }

 protected:
  double log_density_at(const Vector& x) const override {
    const double r = x.norm();
    const double t = std::atan2(x(1), x(0));
    return -(r - r0_) * (r - r0_) / (2.0 * w_ * w_) + c_ * std::cos(k_ * t);
  }
  Vector score_at(const Vector& x) const override {
    const double r = x.norm();
    Vector g = Vector::Zero(2);
    if (r < 1e-12) return g;
    const double t = std::atan2(x(1), x(0));
    g = -(r - r0_) / (w_ * w_) * x / r;
    Vector dtheta(2);
    dtheta << -x(1) / (r * r), x(0) / (r * r);
    g += -c_ * k_ * std::sin(k_ * t) * dtheta;
    return g;
  }

 private:
  double r0_, w_;
  int k_;
  double c_;
  std::string name_;
};

// 1D Student-t with nu degrees of freedom.
class StudentT final : public TargetDensity {
 public:
  explicit StudentT(double nu = 2.0) : nu_(nu) {
    require(nu_ > 0.0, "student_t requires nu > 0");
  }
  int dim() const override { return 1; }
  std::string name() const override { return "student_t"; }
  double nu() const { return nu_; }

  std::optional<Matrix> sample_exact(Eigen::Index n, Rng& rng) const override {
    std::student_t_distribution<double> t(nu_);
    Matrix out(1, n);
    for (Eigen::Index j = 0; j < n; ++j) out(0, j) = t(rng.engine());
    return out;
  }
  std::optional<Moments> exact_moments() const override {
    if (nu_ <= 2.0) return std::nullopt;
    return Moments{Vector::Zero(1), Matrix::Constant(1, 1, nu_ / (nu_ - 2.0))};
  }

 protected:
  double log_density_at(const Vector& x) const override {
    return -0.5 * (nu_ + 1.0) * std::log1p(x(0) * x(0) / nu_);
  }
  Vector score_at(const Vector& x) const override {
    return Vector::Constant(1, -(nu_ + 1.0) * x(0) / (nu_ + x(0) * x(0)));
  }
  Matrix hessian_at(const Vector& x) const override {
    const double t = x(0) * x(0);
    return Matrix::Constant(1, 1, -(nu_ + 1.0) * (nu_ - t) / ((nu_ + t) * (nu_ + t)));
  }
  double laplacian_at(const Vector& x) const override { return hessian_at(x)(0, 0); }
  Vector grad_laplacian_at(const Vector& x) const override {
    const double v = x(0);
    const double t = nu_ + v * v;
    return Vector::Constant(1, 2.0 * (nu_ + 1.0) * v * (3.0 * nu_ - v * v) / (t * t * t));
  }

 private:
  double nu_;
};

// c * log q(x) for a constant c > 0: tempering (c = beta) or the per-noise
// energy E_sigma = E / sigma (c = 1 / sigma).
class ScaledTarget : public TargetDensity {
 public:
  ScaledTarget(TargetPtr base, double factor) : base_(std::move(base)), factor_(factor) {
    require(base_ != nullptr, "scaled target needs a base");
    require(factor_ > 0.0, "target scale factor must be positive");
  }
  int dim() const override { return base_->dim(); }
  std::string name() const override { return base_->name(); }
  double factor() const { return factor_; }
  const TargetDensity& base() const { return *base_; }

 protected:
  double log_density_at(const Vector& x) const override {
    return factor_ * base_->log_density_at(x);
  }
  Vector score_at(const Vector& x) const override { return factor_ * base_->score_at(x); }
  Matrix hessian_at(const Vector& x) const override { return factor_ * base_->hessian_at(x); }
  double laplacian_at(const Vector& x) const override { return factor_ * base_->laplacian_at(x); }
  Vector grad_laplacian_at(const Vector& x) const override {
    return factor_ * base_->grad_laplacian_at(x);
  }

 private:
  TargetPtr base_;
  double factor_;
};

// Toy energy-based model: E(x) = -log q(x), E_sigma(x) = E(x) / sigma.
class AnalyticEnergy {
 public:
  explicit AnalyticEnergy(TargetPtr base) : base_(std::move(base)) {
    require(base_ != nullptr, "energy needs a base target");
  }

  int dim() const { return base_->dim(); }
  double energy(const Vector& x) const { return -base_->log_density(x); }
  double energy(const Vector& x, double sigma) const {
    require(sigma > 0.0, "noise level must be positive");
    return energy(x) / sigma;
  }
  // grad_x log q_sigma = score / sigma
  Vector score(const Vector& x, double sigma) const {
    require(sigma > 0.0, "noise level must be positive");
    return base_->score(x) / sigma;
  }
  std::shared_ptr<const ScaledTarget> at_noise(double sigma) const {
    require(sigma > 0.0, "noise level must be positive");
    return std::make_shared<ScaledTarget>(base_, 1.0 / sigma);
  }
  const TargetPtr& base() const { return base_; }

 private:
  TargetPtr base_;
};

struct TargetSpec {
  std::string name;
  std::map<std::string, double> params;
};

namespace detail {

inline double take(std::map<std::string, double>& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  if (it == p.end()) return fallback;
  const double v = it->second;
  p.erase(it);
  return v;
}

}  // namespace detail

// t1: two-mode mixture at +-(2, 0), variance 0.5
// t2: eight-mode ring mixture, radius 3, variance 0.3
// t3: RingWave(r0 = 3, w = 0.5, k = 6)
inline TargetPtr make_target(const TargetSpec& spec) {
  auto p = spec.params;
  TargetPtr out;
  try {
    if (spec.name == "gauss") {
      const double d = detail::take(p, "dim", 2.0);
      if (d < 1 || d != std::floor(d)) throw ConfigError("gauss: dim must be a positive integer");
      const double mean = detail::take(p, "mean", 0.0);
      const double var = detail::take(p, "var", 1.0);
      if (var <= 0.0) throw ConfigError("gauss: var must be positive");
      out = std::make_shared<Gaussian>(Vector::Constant(static_cast<int>(d), mean), var);
    } else if (spec.name == "banana") {
      const double b = detail::take(p, "b", 0.5);
      const double s = detail::take(p, "s", 2.0);
      if (s <= 0.0) throw ConfigError("banana: s must be positive");
      out = std::make_shared<Banana>(b, s);
    } else if (spec.name == "double_well") {
      out = std::make_shared<DoubleWell>(detail::take(p, "a", 4.0));
    } else if (spec.name == "t1") {
      std::vector<Vector> means{Vector::Zero(2), Vector::Zero(2)};
      means[0](0) = 2.0;
      means[1](0) = -2.0;
      out = std::make_shared<GaussianMixture>(means, 0.5, Vector::Constant(2, 0.5), "t1");
    } else if (spec.name == "t2") {
      out = std::make_shared<GaussianMixture>(GaussianMixture::ring(8, 3.0, 0.3, "t2"));
    } else if (spec.name == "t3") {
      out = std::make_shared<RingWave>(3.0, 0.5, 6, 1.0, "t3");
    } else if (spec.name == "ring_wave") {
      const double r0 = detail::take(p, "r0", 3.0);
      const double w = detail::take(p, "w", 0.5);
      const double k = detail::take(p, "k", 6.0);
      const double c = detail::take(p, "c", 1.0);
      if (w <= 0.0) throw ConfigError("ring_wave: w must be positive");
      if (k != std::floor(k)) throw ConfigError("ring_wave: k must be an integer");
      out = std::make_shared<RingWave>(r0, w, static_cast<int>(k), c);
    } else if (spec.name == "student_t") {
      const double nu = detail::take(p, "nu", 2.0);
      if (!(nu > 0.0)) throw ConfigError("student_t: nu must be > 0");
      out = std::make_shared<StudentT>(nu);
    } else {
      throw ConfigError("unknown target '" + spec.name + "'");
    }
  } catch (const PreconditionError& e) {
    throw ConfigError(spec.name + ": " + e.what());
  }
  if (!p.empty()) throw ConfigError(spec.name + ": unknown target parameter '" + p.begin()->first + "'");
  return out;
}

}  // namespace nisk
