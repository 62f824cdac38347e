#pragma once

// Training of implicit samplers x = g_theta(z):
//   KL training      grad = E[(s_p(x) - s_q(x)) dx/dtheta]
//   Fisher training  grad of E 1/2 [|s_q|^2 - |s_p|^2 + 2 div(s_q - s_p)] through x only
// alternated with score estimation of the sampler's own distribution.

#include "nisk/diffcore.hpp"
#include "nisk/optim.hpp"
#include "nisk/score_estimation.hpp"
#include "nisk/targets.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nisk {

struct LatentSpec {
  int dim = 2;

  // i.i.d. N(0, I) draws, one sample per column.
  Matrix draw(Eigen::Index n, Rng& rng) const { return rng.normal_matrix(dim, n); }
};

class GeneratorNet {
 public:
  GeneratorNet() = default;
  explicit GeneratorNet(Mlp net) : net_(std::move(net)), latent_{net_.input_dim()} {}

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const LatentSpec& latent() const { return latent_; }
  int data_dim() const { return net_.output_dim(); }

  Matrix sample(Eigen::Index n, Rng& rng) const { return mlp_forward(net_, latent_.draw(n, rng)); }

 private:
  Mlp net_;
  LatentSpec latent_;
};

namespace detail {

inline void check_dims(const GeneratorNet& g, const ScoreModel& s, const TargetDensity& target,
                       const Matrix& z) {
  require_shape(g.data_dim() == target.dim(), "sampler output dim " + std::to_string(g.data_dim()) +
                                                   " does not match target dim " +
                                                   std::to_string(target.dim()));
  require_shape(s.dim() == target.dim(), "score model dim does not match target");
  require_shape(z.rows() == g.latent().dim, "latent batch has wrong dimension");
  require(z.cols() >= 1, "latent batch is empty");
}

inline Matrix pushforward(const ForwardTape& tape, const Matrix* perturbation) {
  if (perturbation == nullptr) return tape.output;
  require_shape(perturbation->rows() == tape.output.rows() && perturbation->cols() == tape.output.cols(),
                "perturbation shape mismatch");
  return tape.output + *perturbation;
}

}  // namespace detail

// Surrogate whose theta-gradient is Grad^KL: loss = mean <sg(s_p(x) - s_q(x)), x>.
// `perturbation`, when given, is added to g(z) before scoring (noise-annealed runs).
inline LossGrad kl_surrogate_loss(const GeneratorNet& g, const ScoreModel& s,
                                  const TargetDensity& target, const Matrix& z,
                                  const Matrix* perturbation = nullptr) {
  detail::check_dims(g, s, target, z);
  const ForwardTape tape = forward_tape(g.net(), z, true);
  const Matrix x = detail::pushforward(tape, perturbation);
  const Matrix cot = s.score(x) - target.score_batch(x);
  const auto b = static_cast<double>(z.cols());
  LossGrad out;
  out.loss = cot.cwiseProduct(x).sum() / b;
  out.grad = vjp(g.net(), tape, cot / b).params;
  return out;
}

// Per-sample x-gradient of the Fisher integrand
//   1/2 [ |s_q|^2 - |s|^2 + 2 div(s_q - s) ]
// with s parameter-detached: H_q s_q - J^T s + grad div s_q - grad div s.
struct FisherTerms {
  Vector value;  // integrand per sample
  Matrix grad_x; // D x B
};

inline FisherTerms fisher_terms(const ScoreModel& s, const TargetDensity& target, const Matrix& x) {
  const ScoreDerivatives sd = s.derivatives(x);
  FisherTerms out{Vector(x.cols()), Matrix(x.rows(), x.cols())};
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Vector xj = x.col(j);
    const Vector sq = target.score(xj);
    const Matrix hq = target.hessian(xj);
    const Vector sp = sd.score.col(j);
    const Matrix& jp = sd.jacobian[static_cast<std::size_t>(j)];
    out.value(j) =
        0.5 * (sq.squaredNorm() - sp.squaredNorm() + 2.0 * (target.laplacian(xj) - sd.divergence(j)));
    out.grad_x.col(j) = hq.transpose() * sq - jp.transpose() * sp + target.grad_laplacian(xj) -
                        sd.grad_divergence.col(j);
  }
  return out;
}

inline LossGrad fisher_surrogate_loss(const GeneratorNet& g, const ScoreModel& s,
                                      const TargetDensity& target, const Matrix& z,
                                      const Matrix* perturbation = nullptr) {
  detail::check_dims(g, s, target, z);
  if (!s.differentiable())
    throw PreconditionError("Fisher training needs an everywhere-differentiable score network "
                            "(LeakyRelu rejected)");
  const ForwardTape tape = forward_tape(g.net(), z, true);
  const Matrix x = detail::pushforward(tape, perturbation);
  const FisherTerms terms = fisher_terms(s, target, x);
  const auto b = static_cast<double>(z.cols());
  LossGrad out;
  out.loss = terms.value.mean();
  out.grad = vjp(g.net(), tape, terms.grad_x / b).params;
  return out;
}

struct FisherSteinConfig {
  double lambda = 1.0;
};

// theta-gradient of the Stein objective E[<s_q, f> + div f - lambda |f|^2]
// with the optimal test function f = (s_q - s) / (2 lambda) substituted.
inline ParamGrad fisher_stein_gradient(const GeneratorNet& g, const ScoreModel& s,
                                       const TargetDensity& target, const Matrix& z,
                                       const FisherSteinConfig& cfg) {
  if (!(cfg.lambda > 0.0)) throw PreconditionError("Fisher-Stein lambda must be positive");
  detail::check_dims(g, s, target, z);
  if (!s.differentiable())
    throw PreconditionError("Fisher-Stein gradient needs a differentiable score network");
  const double lam = cfg.lambda;
  const ForwardTape tape = forward_tape(g.net(), z, true);
  const Matrix& x = tape.output;
  const ScoreDerivatives sd = s.derivatives(x);
  Matrix grad_x(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Vector xj = x.col(j);
    const Vector sq = target.score(xj);
    const Matrix hq = target.hessian(xj);
    const Vector f = (sq - sd.score.col(j)) / (2.0 * lam);
    const Matrix jf = (hq - sd.jacobian[static_cast<std::size_t>(j)]) / (2.0 * lam);
    const Vector grad_div_f = (target.grad_laplacian(xj) - sd.grad_divergence.col(j)) / (2.0 * lam);
    // d/dx <s_q, f>  +  d/dx div f  -  lambda d/dx |f|^2
    grad_x.col(j) = hq.transpose() * f + jf.transpose() * sq + grad_div_f - 2.0 * lam * jf.transpose() * f;
  }
  return vjp(g.net(), tape, grad_x / static_cast<double>(z.cols())).params;
}

// Monte Carlo estimate of E_{x ~ p_theta}[d log p_theta(x) / d(a, b)] for the
// affine family x = a z + b, z ~ N(0, 1).
struct VanishingTermEstimate {
  Vector mean;        // (d/da, d/db)
  Vector std_error;   // per-component standard error of the mean
  double max_abs() const { return mean.cwiseAbs().maxCoeff(); }
};

inline VanishingTermEstimate vanishing_term_check(double a, double b, std::size_t n_samples,
                                                  std::uint64_t seed) {
  require(a != 0.0, "affine family needs a != 0");
  require(n_samples >= 2, "need at least two samples");
  Rng rng(seed, 0x766e);
  double sum_a = 0.0, sum_b = 0.0, sq_a = 0.0, sq_b = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x = a * rng.normal() + b;
    const double r = x - b;
    const double da = r * r / (a * a * a) - 1.0 / a;
    const double db = r / (a * a);
    sum_a += da;
    sum_b += db;
    sq_a += da * da;
    sq_b += db * db;
  }
  const auto n = static_cast<double>(n_samples);
  VanishingTermEstimate est{Vector(2), Vector(2)};
  est.mean << sum_a / n, sum_b / n;
  const double var_a = (sq_a - n * est.mean(0) * est.mean(0)) / (n - 1.0);
  const double var_b = (sq_b - n * est.mean(1) * est.mean(1)) / (n - 1.0);
  est.std_error << std::sqrt(var_a / n), std::sqrt(var_b / n);
  return est;
}

enum class TrainMethod { KL, Fisher };

struct AnnealSchedule {
  enum class Mode { None, Temper, NoiseScale };
  Mode mode = Mode::None;
  double beta0 = 0.2;
  int warmup_iters = 0;
  double sigma_min = 0.3;
  double sigma_max = 3.0;

  // Linear ramp from beta0 to 1 over warmup_iters, then 1.
  double beta(int t) const {
    if (mode != Mode::Temper || t >= warmup_iters || warmup_iters <= 0) return 1.0;
    return beta0 + (1.0 - beta0) * static_cast<double>(t) / static_cast<double>(warmup_iters);
  }

  void validate() const {
    if (mode == Mode::Temper) {
      require(beta0 > 0.0 && beta0 <= 1.0, "temper beta0 must lie in (0, 1]");
      require(warmup_iters >= 0, "temper warmup must be non-negative");
    }
    if (mode == Mode::NoiseScale)
      require(sigma_min > 0.0 && sigma_min <= sigma_max, "noise range must satisfy 0 < min <= max");
  }
};

struct TrainConfig {
  TrainMethod method = TrainMethod::KL;
  int max_iters = 1000;
  int batch = 256;
  AdamConfig sampler_optimizer{2e-4, 0.9, 0.99, 1e-8};
  SmConfig score;
  AnnealSchedule anneal;
  std::uint64_t seed = 0;
  int eval_every = 0;  // 0 disables the evaluation hook

  void validate() const {
    require(max_iters >= 1, "max_iters must be >= 1");
    require(batch >= 2, "batch must be >= 2");
    require(sampler_optimizer.lr > 0.0, "sampler learning rate must be positive");
    score.validate();
    anneal.validate();
  }
};

struct IterationRecord {
  int iter = 0;
  double sm_loss = 0.0;       // last score-phase loss
  double sampler_loss = 0.0;
  double beta_or_sigma = 1.0;
  double wallclock_ms = 0.0;

  bool same_values(const IterationRecord& o) const {
    return iter == o.iter && sm_loss == o.sm_loss && sampler_loss == o.sampler_loss &&
           beta_or_sigma == o.beta_or_sigma;
  }
};

struct RunReport {
  std::vector<IterationRecord> iterations;
  long score_updates = 0;
  long sampler_updates = 0;
  bool aborted = false;
  int abort_iter = -1;
  std::string diagnostic;
};

// Target snapshot for iteration t (fixed targets ignore t; minibatch
// posteriors draw a fresh batch).
using TargetSource = std::function<TargetPtr(int)>;
using EvalHook = std::function<void(int, const GeneratorNet&, const ScoreNet&)>;

inline RunReport train(GeneratorNet& g, ScoreNet& s, const TargetSource& source,
                       const TrainConfig& cfg, const EvalHook& on_eval = {}) {
  cfg.validate();
  require_shape(s.dim() == g.data_dim(), "score network and sampler dims differ");
  if (cfg.method == TrainMethod::Fisher && !s.net().activation().smooth())
    throw PreconditionError("Fisher training needs a differentiable score network activation");
  const bool noisy = cfg.anneal.mode == AnnealSchedule::Mode::NoiseScale;
  if (noisy)
    require(s.mode() == SigmaMode::Scaled, "noise-scale annealing needs a Scaled score network");

  Adam score_opt(cfg.score.optimizer);
  Adam sampler_opt(cfg.sampler_optimizer);
  Rng rng(cfg.seed, 0x747261696e);
  RunReport report;
  const auto start = std::chrono::steady_clock::now();

  for (int t = 0; t < cfg.max_iters; ++t) {
    TargetPtr target = source(t);
    double level = 1.0;
    if (noisy) {
      level = rng.uniform(cfg.anneal.sigma_min, cfg.anneal.sigma_max);
      target = std::make_shared<ScaledTarget>(target, 1.0 / level);
    } else if (cfg.anneal.mode == AnnealSchedule::Mode::Temper) {
      level = cfg.anneal.beta(t);
      if (level != 1.0) target = std::make_shared<ScaledTarget>(target, level);
    }
    require_shape(target->dim() == g.data_dim(), "target dim does not match sampler");

    // score estimation on a detached sampler batch
    Matrix detached = g.sample(cfg.batch, rng);
    if (!detached.allFinite()) {
      report.aborted = true;
      report.abort_iter = t;
      report.diagnostic = "non-finite sampler output at iteration " + std::to_string(t);
      return report;
    }
    if (noisy && cfg.score.objective != SmObjective::DenoisingSM)
      detached += level * rng.normal_matrix(detached.rows(), detached.cols());
    const std::uint64_t phase_seed = rng.next_u64();
    const std::vector<double> sm = score_phase(s, score_opt, detached, cfg.score, level, phase_seed);
    report.score_updates += static_cast<long>(sm.size());

    // sampler update on a fresh batch
    const Matrix z = g.latent().draw(cfg.batch, rng);
    std::optional<Matrix> noise;
    if (noisy) noise = level * rng.normal_matrix(g.data_dim(), cfg.batch);
    const BoundScore bound(s, noisy ? level : 1.0);
    const LossGrad lg = cfg.method == TrainMethod::KL
                            ? kl_surrogate_loss(g, bound, *target, z, noise ? &*noise : nullptr)
                            : fisher_surrogate_loss(g, bound, *target, z, noise ? &*noise : nullptr);

    IterationRecord rec;
    rec.iter = t;
    rec.sm_loss = sm.empty() ? 0.0 : sm.back();
    rec.sampler_loss = lg.loss;
    rec.beta_or_sigma = level;
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    report.iterations.push_back(rec);

    if (!std::isfinite(rec.sm_loss) || !std::isfinite(rec.sampler_loss) || !lg.grad.allFinite() ||
        !s.net().params().allFinite()) {
      report.aborted = true;
      report.abort_iter = t;
      report.diagnostic = "non-finite loss or gradient at iteration " + std::to_string(t) +
                          " (sm_loss=" + std::to_string(rec.sm_loss) +
                          ", sampler_loss=" + std::to_string(rec.sampler_loss) + ")";
      return report;
    }
    sampler_opt.step(g.net(), lg.grad);
    ++report.sampler_updates;

    if (on_eval && cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0) on_eval(t + 1, g, s);
  }
  return report;
}

inline RunReport train(GeneratorNet& g, ScoreNet& s, TargetPtr target, const TrainConfig& cfg,
                       const EvalHook& on_eval = {}) {
  return train(g, s, [target](int) { return target; }, cfg, on_eval);
}

}  // namespace nisk
