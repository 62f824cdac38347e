#include "oracles.hpp"

#include "nisk/sampler_training.hpp"

#include <gtest/gtest.h>

using namespace nisk;

namespace {

// x = a z + b as a single linear layer; params are [a, b].
GeneratorNet affine(double a, double b) {
  Mlp net({1, 1}, Activation::gelu());
  net.weight(0)(0, 0) = a;
  net.bias(0)(0) = b;
  return GeneratorNet(net);
}

// Exact score of the affine sampler's law N(b, a^2).
TargetScore affine_score(double a, double b) {
  return TargetScore(std::make_shared<Gaussian>(Vector::Constant(1, b), a * a));
}

TargetPtr normal1(double mu) { return std::make_shared<Gaussian>(Vector::Constant(1, mu), 1.0); }

double gauss_kl(double a, double b, double mu) {
  return 0.5 * (a * a + (b - mu) * (b - mu) - 1.0 - std::log(a * a));
}

struct MeanSe {
  double mean, se;
};

MeanSe mean_se(const std::vector<double>& v) {
  double s = 0.0, sq = 0.0;
  for (double x : v) {
    s += x;
    sq += x * x;
  }
  const double n = static_cast<double>(v.size());
  const double m = s / n;
  return {m, std::sqrt((sq / n - m * m) / n)};
}

const char* const kZoo2d[] = {"gauss", "banana", "double_well", "t1", "t2", "t3"};

}  // namespace

TEST(KlSurrogate, MatchedScoreIsFixedPoint) {
  Rng rng(1);
  for (const char* name : kZoo2d) {
    const TargetPtr t = make_target({name, {}});
    const GeneratorNet g(oracle::random_net({3, 8, 2}, Activation::gelu(), 4));
    const Matrix z = rng.normal_matrix(3, 32);
    const TargetScore oracle_score(t);
    const LossGrad lg = kl_surrogate_loss(g, oracle_score, *t, z);
    EXPECT_EQ(lg.grad.cwiseAbs().maxCoeff(), 0.0) << name;
    EXPECT_EQ(lg.loss, 0.0);
  }
}

TEST(KlSurrogate, AffineGaussianClosedForm) {
  const double a = 1.5, b = 0.5, mu = -0.3;
  const GeneratorNet g = affine(a, b);
  const TargetScore sp = affine_score(a, b);
  const TargetPtr t = normal1(mu);
  const int n = 100000;
  const Matrix z = Rng(2).normal_matrix(1, n);
  const Vector grad = kl_surrogate_loss(g, sp, *t, z).grad;

  // per-sample terms c * dx/da, c * dx/db with c = s_p(x) - s_q(x)
  std::vector<double> ga(n), gb(n);
  for (int i = 0; i < n; ++i) {
    const double x = a * z(0, i) + b;
    const double c = -(x - b) / (a * a) + (x - mu);
    ga[i] = c * z(0, i);
    gb[i] = c;
  }
  const MeanSe ma = mean_se(ga), mb = mean_se(gb);
  EXPECT_NEAR(grad(0), ma.mean, 1e-10);
  EXPECT_NEAR(grad(1), mb.mean, 1e-10);
  EXPECT_LT(std::abs(grad(0) - (a - 1.0 / a)), 3.0 * ma.se);
  EXPECT_LT(std::abs(grad(1) - (b - mu)), 3.0 * mb.se);
}

TEST(KlSurrogate, MatchesFiniteDifferenceOfTrueKl) {
  const double a = 1.5, b = 0.5, mu = 0.0;
  const Matrix z = Rng(3).normal_matrix(1, 100000);
  const Vector grad = kl_surrogate_loss(affine(a, b), affine_score(a, b), *normal1(mu), z).grad;
  Vector p(2);
  p << a, b;
  const Vector fd = oracle::central_grad([&](const Vector& q) { return gauss_kl(q(0), q(1), mu); }, p, 1e-6);
  EXPECT_LT((grad - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff(), 1e-2);
}

TEST(KlSurrogate, GradientOfFrozenCotangentSurrogate) {
  // theta-gradient with the score frozen equals d/dtheta mean <c, g_theta(z)>, c held fixed
  const TargetPtr t = make_target({"banana", {}});
  const GeneratorNet g(oracle::random_net({2, 6, 2}, Activation::tanh(), 5));
  const ScoreNet s(oracle::random_net({2, 6, 2}, Activation::gelu(), 6));
  const BoundScore bs(s, 1.0);
  const Matrix z = Rng(4).normal_matrix(2, 7);
  const Matrix x = mlp_forward(g.net(), z);
  const Matrix c = s.eval(x) - t->score_batch(x);
  Mlp probe = g.net();
  const Vector fd = oracle::central_grad(
      [&](const Vector& p) {
        probe.set_params(p);
        return c.cwiseProduct(mlp_forward(probe, z)).sum() / 7.0;
      },
      g.net().params(), 1e-6);
  EXPECT_LT(oracle::rel_err(kl_surrogate_loss(g, bs, *t, z).grad, fd), 1e-7);
}

TEST(KlSurrogate, DimensionMismatchRejected) {
  const GeneratorNet g(oracle::random_net({2, 4, 3}, Activation::gelu(), 1));
  const TargetPtr t = make_target({"banana", {}});
  const TargetScore s(t);
  EXPECT_THROW(kl_surrogate_loss(g, s, *t, Matrix::Zero(2, 4)), ShapeError);
  const GeneratorNet g2(oracle::random_net({2, 4, 2}, Activation::gelu(), 1));
  EXPECT_THROW(kl_surrogate_loss(g2, s, *t, Matrix::Zero(3, 4)), ShapeError);
}

TEST(FisherSurrogate, MatchedScoreIsFixedPoint) {
  Rng rng(5);
  for (const char* name : kZoo2d) {
    const TargetPtr t = make_target({name, {}});
    const GeneratorNet g(oracle::random_net({2, 8, 2}, Activation::gelu(), 7));
    const Matrix z = rng.normal_matrix(2, 16);
    const TargetScore oracle_score(t);
    EXPECT_EQ(fisher_surrogate_loss(g, oracle_score, *t, z).grad.cwiseAbs().maxCoeff(), 0.0) << name;
    EXPECT_EQ(fisher_stein_gradient(g, oracle_score, *t, z, {0.7}).cwiseAbs().maxCoeff(), 0.0) << name;
  }
}

TEST(FisherSurrogate, AffineGaussianClosedForm) {
  // x = a z, target N(0,1), D_F(a) = 1/2 (1/a - a)^2, dD_F/da = a - 1/a^3
  for (double a : {0.7, 1.6}) {
    const Matrix z = Rng(6).normal_matrix(1, 100000);
    const Vector grad = fisher_surrogate_loss(affine(a, 0.0), affine_score(a, 0.0), *normal1(0.0), z).grad;
    const double want = a - 1.0 / (a * a * a);
    EXPECT_LT(std::abs(grad(0) - want) / std::abs(want), 5e-2) << a;
    EXPECT_LT(std::abs(grad(1)), 0.05);
  }
}

TEST(FisherSurrogate, MatchesFiniteDifferenceOfMonteCarloDivergence) {
  const double a = 1.6;
  const Matrix z = Rng(7).normal_matrix(1, 100000);
  // Monte Carlo Fisher divergence with the family's own score, common random numbers
  auto fisher_mc = [&](double aa) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
      const double x = aa * z(0, i);
      const double r = -x / (aa * aa) + x;
      s += 0.5 * r * r;
    }
    return s / static_cast<double>(z.cols());
  };
  const double fd = (fisher_mc(a + 1e-5) - fisher_mc(a - 1e-5)) / 2e-5;
  const Vector grad = fisher_surrogate_loss(affine(a, 0.0), affine_score(a, 0.0), *normal1(0.0), z).grad;
  EXPECT_LT(std::abs(grad(0) - fd) / std::abs(fd), 5e-2);
}

TEST(FisherSurrogate, GradientIsDerivativeOfReportedLossThroughSamples) {
  // mixtures and the ring take third derivatives by differencing, hence the looser band
  for (auto [name, tol] : {std::pair{"banana", 1e-6}, std::pair{"double_well", 1e-6}, std::pair{"t2", 1e-3},
                           std::pair{"t3", 1e-3}}) {
    const TargetPtr t = make_target({name, {}});
    const GeneratorNet g(oracle::random_net({2, 5, 2}, Activation::tanh(), 8));
    const ScoreNet s(oracle::random_net({2, 6, 2}, Activation::gelu(), 9));
    const BoundScore bs(s, 1.0);
    const Matrix z = Rng(8).normal_matrix(2, 5);
    GeneratorNet probe = g;
    const Vector fd = oracle::central_grad(
        [&](const Vector& p) {
          probe.net().set_params(p);
          return fisher_surrogate_loss(probe, bs, *t, z).loss;
        },
        g.net().params(), 1e-5);
    EXPECT_LT(oracle::rel_err(fisher_surrogate_loss(g, bs, *t, z).grad, fd), tol) << name;
  }
}

TEST(FisherSurrogate, LeakyReluScoreRejected) {
  const TargetPtr t = make_target({"banana", {}});
  const GeneratorNet g(oracle::random_net({2, 4, 2}, Activation::gelu(), 1));
  const ScoreNet s(oracle::random_net({2, 4, 2}, Activation::leaky_relu(0.2), 2));
  const BoundScore bs(s, 1.0);
  const Matrix z = Matrix::Ones(2, 3);
  EXPECT_THROW(fisher_surrogate_loss(g, bs, *t, z), PreconditionError);
  EXPECT_THROW(fisher_stein_gradient(g, bs, *t, z, {1.0}), PreconditionError);
  EXPECT_NO_THROW(kl_surrogate_loss(g, bs, *t, z));
}

TEST(FisherStein, TwoLambdaTimesSteinEqualsFisherOnRandomConfigs) {
  Rng pick(10);
  for (int k = 0; k < 50; ++k) {
    const char* name = kZoo2d[k % 6];
    const TargetPtr t = make_target({name, {}});
    const Activation act = k % 2 == 0 ? Activation::gelu() : Activation::tanh();
    const GeneratorNet g(oracle::random_net({2, 7, 2}, act, 100 + k));
    const ScoreNet s(oracle::random_net({2, 9, 9, 2}, Activation::gelu(), 200 + k),
                     k % 3 == 0 ? SigmaMode::Scaled : SigmaMode::Plain);
    const BoundScore bs(s, k % 3 == 0 ? 0.6 : 1.0);
    const Matrix z = pick.normal_matrix(2, 6);
    const double lambda = pick.uniform(0.05, 5.0);
    const Vector stein = fisher_stein_gradient(g, bs, *t, z, {lambda});
    const Vector fisher = fisher_surrogate_loss(g, bs, *t, z).grad;
    EXPECT_LT(oracle::rel_err(2.0 * lambda * stein, fisher), 1e-8) << name << " lambda " << lambda;
  }
}

TEST(FisherStein, DoublingLambdaHalvesGradient) {
  const TargetPtr t = make_target({"t1", {}});
  const GeneratorNet g(oracle::random_net({2, 7, 2}, Activation::gelu(), 11));
  const ScoreNet s(oracle::random_net({2, 8, 2}, Activation::gelu(), 12));
  const BoundScore bs(s, 1.0);
  const Matrix z = Rng(11).normal_matrix(2, 9);
  // powers of two scale without rounding
  EXPECT_EQ(fisher_stein_gradient(g, bs, *t, z, {1.0}), 2.0 * fisher_stein_gradient(g, bs, *t, z, {2.0}));
  const Vector a = fisher_stein_gradient(g, bs, *t, z, {0.3});
  const Vector b = fisher_stein_gradient(g, bs, *t, z, {0.6});
  EXPECT_LT((a - 2.0 * b).cwiseAbs().maxCoeff(), 1e-13 * a.cwiseAbs().maxCoeff());
}

TEST(FisherStein, LambdaMustBePositive) {
  const TargetPtr t = make_target({"gauss", {}});
  const GeneratorNet g(oracle::random_net({2, 4, 2}, Activation::gelu(), 1));
  const TargetScore s(t);
  for (double lam : {0.0, -1.0, std::nan("")})
    EXPECT_THROW(fisher_stein_gradient(g, s, *t, Matrix::Ones(2, 2), {lam}), PreconditionError);
}

TEST(VanishingTerm, WithinCltBand) {
  for (auto [a, b] : {std::pair{1.0, 0.0}, std::pair{2.0, -1.0}}) {
    const VanishingTermEstimate est = vanishing_term_check(a, b, 1000000, 3);
    for (int k = 0; k < 2; ++k) EXPECT_LT(std::abs(est.mean(k)), 4.0 * est.std_error(k)) << a << "," << b;
  }
  EXPECT_THROW(vanishing_term_check(0.0, 1.0, 10, 1), PreconditionError);
}

TEST(AnnealSchedule, TemperRampIsMonotoneAndSaturates) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    AnnealSchedule a;
    a.mode = AnnealSchedule::Mode::Temper;
    a.beta0 = rng.uniform(0.01, 1.0);
    a.warmup_iters = static_cast<int>(rng.uniform(0.0, 500.0));
    a.validate();
    double prev = 0.0;
    for (int t = 0; t < 700; ++t) {
      const double beta = a.beta(t);
      EXPECT_GE(beta, prev);
      EXPECT_GT(beta, 0.0);
      EXPECT_LE(beta, 1.0);
      if (t >= a.warmup_iters) EXPECT_EQ(beta, 1.0);
      prev = beta;
    }
    if (a.warmup_iters > 0) EXPECT_EQ(a.beta(0), a.beta0);
  }
  AnnealSchedule bad;
  bad.mode = AnnealSchedule::Mode::Temper;
  bad.beta0 = 0.0;
  EXPECT_THROW(bad.validate(), PreconditionError);
  bad.beta0 = 1.5;
  EXPECT_THROW(bad.validate(), PreconditionError);
  EXPECT_EQ(AnnealSchedule{}.beta(0), 1.0);
}

namespace {

struct Nets {
  GeneratorNet g;
  ScoreNet s;
};

Nets small_nets(int d, std::uint64_t seed, Activation score_act = Activation::gelu(),
                SigmaMode mode = SigmaMode::Plain) {
  return {GeneratorNet(Mlp::glorot({d, 8, d}, Activation::gelu(), seed)),
          ScoreNet(Mlp::glorot({d, 8, d}, score_act, seed + 1), mode)};
}

}  // namespace

TEST(Train, SingleIterationCounters) {
  for (TrainMethod m : {TrainMethod::KL, TrainMethod::Fisher}) {
    Nets n = small_nets(2, 1);
    TrainConfig cfg;
    cfg.method = m;
    cfg.max_iters = 1;
    cfg.batch = 8;
    cfg.score.steps_per_phase = 3;
    const Vector g0 = n.g.net().params();
    const RunReport r = train(n.g, n.s, make_target({"banana", {}}), cfg);
    EXPECT_EQ(r.score_updates, 3);
    EXPECT_EQ(r.sampler_updates, 1);
    ASSERT_EQ(r.iterations.size(), 1u);
    EXPECT_FALSE(r.aborted);
    EXPECT_NE(n.g.net().params(), g0);
  }
}

TEST(Train, SameSeedIsBitIdentical) {
  for (auto mode : {AnnealSchedule::Mode::None, AnnealSchedule::Mode::Temper, AnnealSchedule::Mode::NoiseScale}) {
    TrainConfig cfg;
    cfg.max_iters = 15;
    cfg.batch = 16;
    cfg.seed = 42;
    cfg.anneal.mode = mode;
    cfg.anneal.warmup_iters = 10;
    const SigmaMode sm = mode == AnnealSchedule::Mode::NoiseScale ? SigmaMode::Scaled : SigmaMode::Plain;
    if (sm == SigmaMode::Scaled) cfg.score.objective = SmObjective::DenoisingSM;
    Nets a = small_nets(2, 3, Activation::gelu(), sm), b = small_nets(2, 3, Activation::gelu(), sm);
    const TargetPtr t = make_target({"t1", {}});
    const RunReport ra = train(a.g, a.s, t, cfg), rb = train(b.g, b.s, t, cfg);
    ASSERT_EQ(ra.iterations.size(), rb.iterations.size());
    for (std::size_t i = 0; i < ra.iterations.size(); ++i) EXPECT_TRUE(ra.iterations[i].same_values(rb.iterations[i]));
    EXPECT_EQ(a.g.net().params(), b.g.net().params());
    EXPECT_EQ(a.s.net().params(), b.s.net().params());

    Nets c = small_nets(2, 3, Activation::gelu(), sm);
    cfg.seed = 43;
    train(c.g, c.s, t, cfg);
    EXPECT_NE(a.g.net().params(), c.g.net().params());
  }
}

TEST(Train, RecordsTemperLevels) {
  Nets n = small_nets(2, 4);
  TrainConfig cfg;
  cfg.max_iters = 10;
  cfg.batch = 4;
  cfg.anneal.mode = AnnealSchedule::Mode::Temper;
  cfg.anneal.beta0 = 0.2;
  cfg.anneal.warmup_iters = 5;
  const RunReport r = train(n.g, n.s, make_target({"t2", {}}), cfg);
  for (int t = 0; t < 10; ++t) EXPECT_EQ(r.iterations[t].beta_or_sigma, cfg.anneal.beta(t));
  EXPECT_EQ(r.iterations[0].beta_or_sigma, 0.2);
}

TEST(Train, NoiseScaleDrawsLevelsInRange) {
  Nets n = small_nets(2, 5, Activation::gelu(), SigmaMode::Scaled);
  TrainConfig cfg;
  cfg.max_iters = 30;
  cfg.batch = 4;
  cfg.anneal.mode = AnnealSchedule::Mode::NoiseScale;
  const RunReport r = train(n.g, n.s, make_target({"t3", {}}), cfg);
  for (const auto& it : r.iterations) {
    EXPECT_GE(it.beta_or_sigma, 0.3);
    EXPECT_LE(it.beta_or_sigma, 3.0);
  }
}

TEST(Train, EvalHookCadence) {
  Nets n = small_nets(2, 6);
  TrainConfig cfg;
  cfg.max_iters = 10;
  cfg.batch = 4;
  cfg.eval_every = 4;
  std::vector<int> seen;
  train(n.g, n.s, make_target({"gauss", {}}), cfg, [&](int t, const GeneratorNet&, const ScoreNet&) { seen.push_back(t); });
  EXPECT_EQ(seen, (std::vector<int>{4, 8}));
}

TEST(Train, NonFiniteAbortsWithIterationIndex) {
  Nets n = small_nets(2, 7);
  n.g.net().bias(1)(0) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.max_iters = 5;
  cfg.batch = 4;
  const RunReport r = train(n.g, n.s, make_target({"gauss", {}}), cfg);
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.abort_iter, 0);
  EXPECT_EQ(r.sampler_updates, 0);
  EXPECT_NE(r.diagnostic.find("iteration 0"), std::string::npos);
}

TEST(Train, ConfigurationErrors) {
  const TargetPtr t = make_target({"banana", {}});
  {
    Nets n = small_nets(2, 8, Activation::leaky_relu(0.2));
    TrainConfig cfg;
    cfg.method = TrainMethod::Fisher;
    EXPECT_THROW(train(n.g, n.s, t, cfg), PreconditionError);
  }
  {
    Nets n = small_nets(2, 8);
    TrainConfig cfg;
    cfg.anneal.mode = AnnealSchedule::Mode::NoiseScale;
    EXPECT_THROW(train(n.g, n.s, t, cfg), PreconditionError);
  }
  {
    Nets n = small_nets(2, 8);
    TrainConfig cfg;
    cfg.max_iters = 0;
    EXPECT_THROW(train(n.g, n.s, t, cfg), PreconditionError);
    cfg.max_iters = 1;
    cfg.batch = 1;
    EXPECT_THROW(train(n.g, n.s, t, cfg), PreconditionError);
  }
  {
    Nets n = small_nets(3, 8);
    EXPECT_THROW(train(n.g, n.s, t, TrainConfig{}), ShapeError);
  }
}

TEST(Train, KlMovesOneDimensionalSamplerTowardTarget) {
  GeneratorNet g(Mlp::glorot({1, 16, 1}, Activation::gelu(), 9));
  ScoreNet s(Mlp::glorot({1, 32, 32, 1}, Activation::gelu(), 10));
  TrainConfig cfg;
  cfg.max_iters = 1500;
  cfg.batch = 128;
  cfg.sampler_optimizer.lr = 2e-3;
  cfg.score.optimizer.lr = 2e-3;
  cfg.score.steps_per_phase = 2;
  const TargetPtr t = std::make_shared<Gaussian>(Vector::Constant(1, 2.0), 0.5);
  const RunReport r = train(g, s, t, cfg);
  ASSERT_FALSE(r.aborted) << r.diagnostic;
  Rng rng(11);
  const Matrix x = g.sample(20000, rng);
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  EXPECT_NEAR(mean, 2.0, 0.1);
  EXPECT_NEAR(var, 0.5, 0.15);
}
