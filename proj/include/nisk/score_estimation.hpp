#pragma once

// Score estimation from samples: exact, sliced and denoising score matching.

#include "nisk/diffcore.hpp"
#include "nisk/optim.hpp"
#include "nisk/targets.hpp"

#include <memory>
#include <string>
#include <vector>

namespace nisk {

// Score values plus the input derivatives needed by the Fisher objective,
// for a batch of points (columns).
struct ScoreDerivatives {
  Matrix score;                  // D x B
  std::vector<Matrix> jacobian;  // B entries, each D x D
  Vector divergence;             // B
  Matrix grad_divergence;        // D x B
};

// Anything that can stand in for a sampler score s(x): a trained network or
// an analytic oracle.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  virtual int dim() const = 0;
  virtual Matrix score(const Matrix& x) const = 0;
  virtual ScoreDerivatives derivatives(const Matrix& x) const = 0;
  virtual bool differentiable() const { return true; }
};

// Analytic score of a target density used as a score model.
class TargetScore final : public ScoreModel {
 public:
  explicit TargetScore(TargetPtr target) : target_(std::move(target)) {}
  int dim() const override { return target_->dim(); }
  Matrix score(const Matrix& x) const override { return target_->score_batch(x); }
  ScoreDerivatives derivatives(const Matrix& x) const override {
    ScoreDerivatives out;
    out.score = score(x);
    out.divergence.resize(x.cols());
    out.grad_divergence.resize(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const Vector xj = x.col(j);
      out.jacobian.push_back(target_->hessian(xj));
      out.divergence(j) = target_->laplacian(xj);
      out.grad_divergence.col(j) = target_->grad_laplacian(xj);
    }
    return out;
  }

 private:
  TargetPtr target_;
};

enum class SigmaMode { Plain, Scaled };

// Square network s_phi; Scaled mode evaluates S(x) / sigma.
class ScoreNet {
 public:
  ScoreNet() = default;
  ScoreNet(Mlp net, SigmaMode mode = SigmaMode::Plain) : net_(std::move(net)), mode_(mode) {
    require_shape(net_.input_dim() == net_.output_dim(), "score network must be square");
  }

  int dim() const { return net_.input_dim(); }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  SigmaMode mode() const { return mode_; }

  double factor(double sigma) const {
    if (mode_ == SigmaMode::Plain) return 1.0;
    require(sigma > 0.0, "scaled score network needs sigma > 0");
    return 1.0 / sigma;
  }

  Matrix eval(const Matrix& x, double sigma = 1.0) const {
    return factor(sigma) * mlp_forward(net_, x);
  }

 private:
  Mlp net_;
  SigmaMode mode_ = SigmaMode::Plain;
};

// One-hot direction matrix: row d set to `value` for every column.
inline Matrix basis_rows(Eigen::Index rows, Eigen::Index cols, Eigen::Index d, double value = 1.0) {
  Matrix e = Matrix::Zero(rows, cols);
  e.row(d).setConstant(value);
  return e;
}

// ScoreNet evaluated at a fixed sigma, parameters treated as constants.
class BoundScore final : public ScoreModel {
 public:
  BoundScore(const ScoreNet& net, double sigma = 1.0) : net_(net), sigma_(sigma) {}

  int dim() const override { return net_.dim(); }
  bool differentiable() const override { return net_.net().activation().smooth(); }
  Matrix score(const Matrix& x) const override { return net_.eval(x, sigma_); }

  ScoreDerivatives derivatives(const Matrix& x) const override {
    const Mlp& mlp = net_.net();
    const double c = net_.factor(sigma_);
    const Eigen::Index d_dim = x.rows();
    const Eigen::Index batch = x.cols();
    ScoreDerivatives out;
    const auto primal = primal_tape(mlp, x);
    out.score = c * primal->output;
    out.jacobian = jacobian_input_batch(mlp, *primal);
    for (auto& j : out.jacobian) j *= c;
    out.divergence = Vector::Zero(batch);
    out.grad_divergence = Matrix::Zero(d_dim, batch);
    const Matrix zero = Matrix::Zero(d_dim, batch);
    for (Eigen::Index d = 0; d < d_dim; ++d) {
      const Matrix e = basis_rows(d_dim, batch, d);
      const TangentTape tape = forward_tangent(mlp, primal, e);
      out.divergence += tape.output_tangent.row(d).transpose();
      out.grad_divergence += vjp_tangent(mlp, tape, zero, e, false).inputs;
    }
    out.divergence *= c;
    out.grad_divergence *= c;
    return out;
  }

 private:
  const ScoreNet& net_;
  double sigma_;
};

enum class SmObjective { ExactSM, SlicedSM, DenoisingSM };

struct SmConfig {
  SmObjective objective = SmObjective::ExactSM;
  int n_probes = 1;
  int steps_per_phase = 2;
  AdamConfig optimizer{1e-4, 0.9, 0.99, 1e-8};

  void validate() const {
    require(steps_per_phase >= 1, "steps_per_phase must be >= 1");
    require(optimizer.lr > 0.0, "score learning rate must be positive");
    require(n_probes >= 1, "n_probes must be >= 1");
  }
};

struct LossGrad {
  double loss = 0.0;
  ParamGrad grad;
};

// mean_i [ |s(x_i)|^2 + 2 div s(x_i) ] with the exact trace.
inline LossGrad sm_loss(const ScoreNet& s, const Matrix& batch, double sigma = 1.0) {
  const Mlp& net = s.net();
  require_shape(net.input_dim() == net.output_dim(), "sm_loss needs a square network");
  require_shape(batch.rows() == net.input_dim(), "sm_loss: batch dimension mismatch");
  const double c = s.factor(sigma);
  const Eigen::Index d_dim = batch.rows();
  const auto b = static_cast<double>(batch.cols());
  LossGrad out;
  out.grad = ParamGrad::Zero(static_cast<Eigen::Index>(net.param_count()));
  double trace_sum = 0.0;
  const auto primal = primal_tape(net, batch);
  for (Eigen::Index d = 0; d < d_dim; ++d) {
    const Matrix e = basis_rows(d_dim, batch.cols(), d);
    const TangentTape tape = forward_tangent(net, primal, e);
    trace_sum += tape.output_tangent.row(d).sum();
    Matrix value_cot = Matrix::Zero(d_dim, batch.cols());
    if (d == 0) {
      value_cot = (2.0 * c * c / b) * tape.output;
      out.loss += c * c * tape.output.squaredNorm() / b;
    }
    out.grad += vjp_tangent(net, tape, value_cot, (2.0 * c / b) * e).params;
  }
  out.loss += 2.0 * c * trace_sum / b;
  return out;
}

// Sliced variant: the trace is replaced by v^T J v with Rademacher probes.
inline LossGrad ssm_loss(const ScoreNet& s, const Matrix& batch, int n_probes, std::uint64_t seed,
                         double sigma = 1.0) {
  require(n_probes >= 1, "ssm_loss needs n_probes >= 1");
  const Mlp& net = s.net();
  require_shape(net.input_dim() == net.output_dim(), "ssm_loss needs a square network");
  require_shape(batch.rows() == net.input_dim(), "ssm_loss: batch dimension mismatch");
  const double c = s.factor(sigma);
  const auto b = static_cast<double>(batch.cols());
  Rng rng(seed, 0x73736d);
  LossGrad out;
  out.grad = ParamGrad::Zero(static_cast<Eigen::Index>(net.param_count()));
  double quad_sum = 0.0;
  const auto primal = primal_tape(net, batch);
  for (int k = 0; k < n_probes; ++k) {
    const Matrix v = rng.rademacher_matrix(batch.rows(), batch.cols());
    const TangentTape tape = forward_tangent(net, primal, v);
    quad_sum += v.cwiseProduct(tape.output_tangent).sum();
    Matrix value_cot = Matrix::Zero(batch.rows(), batch.cols());
    if (k == 0) {
      value_cot = (2.0 * c * c / b) * tape.output;
      out.loss += c * c * tape.output.squaredNorm() / b;
    }
    out.grad += vjp_tangent(net, tape, value_cot, (2.0 * c / (b * n_probes)) * v).params;
  }
  out.loss += 2.0 * c * quad_sum / (b * n_probes);
  return out;
}

// sigma^2-weighted denoising loss: mean sigma^2 |s(x~) + (x~ - x)/sigma^2|^2,
// x~ = x + sigma * eps.
inline LossGrad dsm_loss(const ScoreNet& s, const Matrix& clean, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw PreconditionError("dsm_loss: sigma must be positive");
  const Mlp& net = s.net();
  require_shape(clean.rows() == net.input_dim(), "dsm_loss: batch dimension mismatch");
  const double c = s.factor(sigma);
  const auto b = static_cast<double>(clean.cols());
  Rng rng(seed, 0x64736d);
  const Matrix eps = rng.normal_matrix(clean.rows(), clean.cols());
  const Matrix noisy = clean + sigma * eps;
  const ForwardTape tape = forward_tape(net, noisy);
  const Matrix resid = c * tape.output + eps / sigma;
  LossGrad out;
  out.loss = sigma * sigma * resid.squaredNorm() / b;
  out.grad = vjp(net, tape, (2.0 * sigma * sigma * c / b) * resid).params;
  return out;
}

inline LossGrad score_objective(const ScoreNet& s, const Matrix& batch, const SmConfig& cfg,
                                double sigma, std::uint64_t seed) {
  switch (cfg.objective) {
    case SmObjective::ExactSM: return sm_loss(s, batch, sigma);
    case SmObjective::SlicedSM: return ssm_loss(s, batch, cfg.n_probes, seed, sigma);
    case SmObjective::DenoisingSM: return dsm_loss(s, batch, sigma, seed);
  }
  return {};
}

// cfg.steps_per_phase optimizer steps on one detached sampler batch.
// Returns the loss observed before each step.
inline std::vector<double> score_phase(ScoreNet& s, Adam& opt, const Matrix& sampler_batch,
                                       const SmConfig& cfg, double sigma = 1.0,
                                       std::uint64_t seed = 0) {
  cfg.validate();
  std::vector<double> losses;
  for (int step = 0; step < cfg.steps_per_phase; ++step) {
    const LossGrad lg = score_objective(s, sampler_batch, cfg, sigma,
                                        seed * 1000003ULL + static_cast<std::uint64_t>(step));
    losses.push_back(lg.loss);
    opt.step(s.net(), lg.grad);
  }
  return losses;
}

}  // namespace nisk
