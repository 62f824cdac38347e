// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include "oracles.hpp"

#include "nisk/baselines.hpp"
#include "nisk/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>

using namespace nisk;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fail]");
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  if (!o.pass) ++failures;
  std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

template <class F>
void criterion(int id, const std::string& title, F&& body) {
  Outcome o;
  try {
    body(o);
  } catch (const std::exception& e) {
    o.check(false, std::string("exception: ") + e.what());
  }
  report(id, title, o);
}

struct MeanSe {
  double mean, se;
};

MeanSe mean_se(const Eigen::ArrayXd& v) {
  const double n = static_cast<double>(v.size());
  const double m = v.mean();
  return {m, std::sqrt(((v - m).square().sum() / (n - 1.0)) / n)};
}

// Batch-means standard error for a correlated chain.
MeanSe batch_mean_se(const Eigen::ArrayXd& v, int batches = 50) {
  const Eigen::Index len = v.size() / batches;
  Eigen::ArrayXd means(batches);
  for (int b = 0; b < batches; ++b) means(b) = v.segment(b * len, len).mean();
  return mean_se(means);
}

// ---- config runs, shared between criteria and rerun for determinism

const fs::path kConfigs = NISK_CONFIG_DIR;
const fs::path kOut = fs::temp_directory_path() / "nisk_acceptance";

struct Run {
  RunResult result;
  fs::path dir;
  double seconds = 0.0;
  std::map<std::string, double> metric;
};

std::map<std::string, Run> runs;

const Run& run(const std::string& config, std::optional<Method> method = {}) {
  const std::string key = config + (method ? "." + method_name(*method) : "");
  if (auto it = runs.find(key); it != runs.end()) return it->second;
  Run r;
  r.dir = kOut / key;
  fs::remove_all(r.dir);
  const auto t0 = std::chrono::steady_clock::now();
  r.result = run_config_file((kConfigs / (config + ".toml")).string(), r.dir.string(), method);
  r.seconds = seconds_since(t0);
  if (r.result.exit_code != exit_code::ok)
    throw std::runtime_error(key + " exited " + std::to_string(r.result.exit_code) + ": " + r.result.message);
  for (const MetricRecord& m : r.result.metrics) r.metric[m.name] = m.value;
  return runs.emplace(key, std::move(r)).first->second;
}

double metric(const Run& r, const std::string& name) {
  const auto it = r.metric.find(name);
  if (it == r.metric.end()) throw std::runtime_error("missing metric " + name + " in " + r.dir.string());
  return it->second;
}

// x = a z + b as a single linear layer
GeneratorNet affine(double a, double b) {
  Mlp net({1, 1}, Activation::gelu());
  net.weight(0)(0, 0) = a;
  net.bias(0)(0) = b;
  return GeneratorNet(net);
}

TargetScore gauss_score(double mean, double var) {
  return TargetScore(std::make_shared<Gaussian>(Vector::Constant(1, mean), var));
}

}  // namespace

int main() {
  fs::create_directories(kOut);

  criterion(1, "gradient engine vs central differences", [](Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const Activation acts[] = {Activation::gelu(), Activation::tanh(), Activation::leaky_relu(0.2)};
    Rng arch(7);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const int din = 1 + static_cast<int>(arch.next_u64() % 4);
      const int dout = 1 + static_cast<int>(arch.next_u64() % 3);
      const int h = 3 + static_cast<int>(arch.next_u64() % 10);
      const Mlp net = oracle::random_net({din, h, h, dout}, acts[trial % 3], 500 + trial);
      Rng rng(trial);
      const Vector x = rng.normal_matrix(din, 1).col(0);
      const Vector u = rng.normal_matrix(dout, 1).col(0);
      const Vector fdp = oracle::param_grad(net, [&](const Mlp& m) { return u.dot(mlp_forward(m, x)); }, 1e-6);
      const Matrix fdj = oracle::central_jacobian([&](const Vector& v) { return mlp_forward(net, v); }, x, 1e-6);
      worst = std::max({worst, oracle::rel_err(vjp_params(net, x, u), fdp), oracle::rel_err(jacobian_input(net, x), fdj)});
    }
    const double secs = seconds_since(t0);
    o.check(worst < 1e-5, "max rel err " + fmt(worst));
    o.check(secs < 5.0, fmt(secs) + "s");
  });

  criterion(2, "vanishing term within 4 sigma at 1e6 draws", [](Outcome& o) {
    for (auto [a, b] : {std::pair{1.0, 0.0}, std::pair{1.7, -0.4}}) {
      const VanishingTermEstimate est = vanishing_term_check(a, b, 1000000, 11);
      for (int k = 0; k < 2; ++k)
        o.check(std::abs(est.mean(k)) < 4.0 * est.std_error(k),
                "|E| " + fmt(std::abs(est.mean(k))) + " vs 4se " + fmt(4.0 * est.std_error(k)));
    }
  });

  criterion(3, "KL surrogate vs closed form, 10 configs at B=1e5", [](Outcome& o) {
    Rng pick(31);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
      const double a = pick.uniform(0.5, 2.0), b = pick.uniform(-1.0, 1.0), mu = pick.uniform(-1.0, 1.0);
      const Matrix z = Rng(300 + k).normal_matrix(1, 100000);
      const Vector grad = kl_surrogate_loss(affine(a, b), gauss_score(b, a * a),
                                            Gaussian(Vector::Constant(1, mu), 1.0), z).grad;
      // per-sample surrogate terms for the standard error
      const Eigen::ArrayXd zz = z.row(0).transpose().array();
      const Eigen::ArrayXd c = -zz / a + (a * zz + b - mu);
      const MeanSe sa = mean_se(c * zz), sb = mean_se(c);
      const double ra = std::abs(grad(0) - (a - 1.0 / a)) / sa.se;
      const double rb = std::abs(grad(1) - (b - mu)) / sb.se;
      worst = std::max({worst, ra, rb});
    }
    o.check(worst < 3.0, "max |err|/se " + fmt(worst));
  });

  criterion(4, "Fisher surrogate vs closed-form scale family", [](Outcome& o) {
    int k = 0;
    for (double a : {0.6, 0.8, 1.3, 1.8}) {
      const Matrix z = Rng(40 + k++).normal_matrix(1, 100000);
      const Vector grad = fisher_surrogate_loss(affine(a, 0.0), gauss_score(0.0, a * a),
                                                Gaussian(Vector::Zero(1), 1.0), z).grad;
      const double want = a - 1.0 / (a * a * a);
      const double rel = std::abs(grad(0) - want) / std::abs(want);
      o.check(rel < 5e-2, "a=" + fmt(a) + " rel " + fmt(rel));
    }
  });

  criterion(5, "2 lambda Stein gradient equals Fisher gradient", [](Outcome& o) {
    const auto t0 = std::chrono::steady_clock::now();
    const char* zoo[] = {"gauss", "banana", "double_well", "t1", "t2", "t3"};
    Rng pick(55);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
      const TargetPtr t = make_target({zoo[k % 6], {}});
      const GeneratorNet g(oracle::random_net({2, 8, 2}, k % 2 ? Activation::tanh() : Activation::gelu(), 600 + k));
      const ScoreNet s(oracle::random_net({2, 10, 10, 2}, Activation::gelu(), 700 + k),
                       k % 3 == 0 ? SigmaMode::Scaled : SigmaMode::Plain);
      const BoundScore bs(s, k % 3 == 0 ? 0.5 : 1.0);
      const Matrix z = pick.normal_matrix(2, 8);
      const double lambda = pick.uniform(0.05, 5.0);
      const Vector stein = fisher_stein_gradient(g, bs, *t, z, {lambda});
      const Vector fisher = fisher_surrogate_loss(g, bs, *t, z).grad;
      worst = std::max(worst, oracle::rel_err(2.0 * lambda * stein, fisher));
    }
    const double secs = seconds_since(t0);
    o.check(worst < 1e-8, "max rel err " + fmt(worst));
    o.check(secs < 30.0, fmt(secs) + "s");
  });

  criterion(6, "KL training on Gaussian target", [](Outcome& o) {
    const Run& r = run("gauss_kl");
    o.check(metric(r, "mean_error") < 0.1, "mean " + fmt(metric(r, "mean_error")));
    o.check(metric(r, "cov_error") < 0.15, "cov " + fmt(metric(r, "cov_error")));
    o.check(metric(r, "ksd") < 0.05, "ksd " + fmt(metric(r, "ksd")));
    o.check(r.result.report["train"]["sampler_updates"] == 5000, "5000 iters");
    o.check(r.seconds < 180.0, fmt(r.seconds) + "s");
  });

  criterion(7, "KL with temper annealing beats HMC on banana and t2", [](Outcome& o) {
    for (const std::string name : {"banana_kl", "t2_kl"}) {
      const Run& kl = run(name);
      const Run& hmc = run(name, Method::Hmc);
      const double a = metric(kl, "ksd"), b = metric(hmc, "ksd");
      o.check(a < b, name + " ksd " + fmt(a) + " < hmc " + fmt(b));
    }
    const double cover = metric(run("t2_kl"), "min_mode_fraction");
    o.check(cover >= 0.05, "min mode fraction " + fmt(cover));
  });

  criterion(8, "Fisher training on StudentT(2)", [](Outcome& o) {
    const Run& r = run("student_t_fisher");
    o.check(metric(r, "ks") < 0.1, "ks " + fmt(metric(r, "ks")));
    o.check(r.seconds < 300.0, fmt(r.seconds) + "s");
  });

  criterion(9, "score estimation", [](Outcome& o) {
    ScoreNet s(Mlp::glorot({1, 32, 32, 1}, Activation::gelu(), 9));
    SmConfig cfg;
    cfg.optimizer.lr = 1e-3;
    cfg.steps_per_phase = 1;
    Adam opt(cfg.optimizer);
    Rng rng(90);
    for (int step = 0; step < 2000; ++step) score_phase(s, opt, rng.normal_matrix(1, 256), cfg, 1.0, step);
    const Matrix held = Rng(91).normal_matrix(1, 5000);
    const double err = (s.eval(held) + held).squaredNorm() / 5000.0;
    o.check(err < 0.05, "held-out err " + fmt(err));

    const ScoreNet r(oracle::random_net({3, 12, 12, 3}, Activation::gelu(), 92));
    const Matrix x = Rng(93).normal_matrix(3, 8);
    const double exact = sm_loss(r, x).loss;
    Eigen::ArrayXd diff(10000);
    for (int k = 0; k < diff.size(); ++k) diff(k) = ssm_loss(r, x, 1, 9000 + k).loss - exact;
    const MeanSe d = mean_se(diff);
    o.check(std::abs(d.mean) < 3.0 * d.se, "sliced - exact " + fmt(d.mean) + " (3se " + fmt(3.0 * d.se) + ")");
  });

  criterion(10, "HMC baseline", [](Outcome& o) {
    const TargetPtr t = make_target({"gauss", {}});
    HmcConfig cfg;
    cfg.step_size = 0.8;
    cfg.n_leapfrog = 10;
    cfg.n_samples = 10000;
    cfg.seed = 10;
    const HmcResult h = hmc_sample(*t, cfg);
    o.check(h.acceptance_rate >= 0.6 && h.acceptance_rate <= 0.99, "acceptance " + fmt(h.acceptance_rate));
    for (int i = 0; i < 2; ++i) {
      const Eigen::ArrayXd xi = h.samples.row(i).transpose().array();
      const MeanSe m = batch_mean_se(xi), v = batch_mean_se(xi.square());
      o.check(std::abs(m.mean) < 3.0 * m.se, "mean" + std::to_string(i) + " " + fmt(m.mean));
      o.check(std::abs(v.mean - 1.0) < 3.0 * v.se, "E[x" + std::to_string(i) + "^2] " + fmt(v.mean));
    }
    Rng rng(100);
    double worst = 0.0;
    for (const char* name : {"gauss", "banana", "double_well", "t1", "t2", "t3"}) {
      const TargetPtr z = make_target({name, {}});
      for (int k = 0; k < 5; ++k) {
        const Vector x = rng.normal_matrix(2, 1).col(0), p = rng.normal_matrix(2, 1).col(0);
        const LeapfrogResult f = leapfrog(*z, x, p, 0.05, 20);
        const LeapfrogResult b = leapfrog(*z, f.x, -f.p, 0.05, 20);
        worst = std::max({worst, (b.x - x).cwiseAbs().maxCoeff(), (b.p + p).cwiseAbs().maxCoeff()});
      }
    }
    o.check(worst < 1e-10, "reversibility " + fmt(worst));
  });

  criterion(11, "Bayesian logistic regression parity with Langevin", [](Outcome& o) {
    const Run& kl = run("covertype_kl");
    const Run& lang = run("covertype_kl", Method::Langevin);
    const double a = metric(kl, "test_accuracy"), b = metric(lang, "test_accuracy");
    o.check(std::abs(a - b) <= 0.02, "kl " + fmt(a) + " langevin " + fmt(b));
  });

  criterion(12, "NFE accounting", [](Outcome& o) {
    const Run& kl = run("gauss_kl");
    const Run& lang = run("covertype_kl", Method::Langevin);
    const long per = kl.result.report["nfe"]["per_sample"];
    const long lper = lang.result.report["nfe"]["per_sample"];
    const LangevinConfig d = LangevinConfig::geometric();
    const long expect = static_cast<long>(d.noise_levels.size()) * d.steps_per_level;
    o.check(per == 1, "sampler " + std::to_string(per));
    o.check(expect == 200 && lper == expect, "langevin " + std::to_string(lper));
    o.check(lper >= 100 * per, "ratio " + std::to_string(lper / std::max(1L, per)));
  });

  criterion(13, "same seed reruns are byte-identical", [](Outcome& o) {
    std::vector<std::pair<std::string, fs::path>> done;
    for (const auto& [key, r] : runs) done.emplace_back(key, r.dir);
    for (const auto& [key, dir] : done) {
      const auto dot = key.find('.');
      const std::string config = key.substr(0, dot);
      const std::optional<Method> method =
          dot == std::string::npos ? std::nullopt : std::optional(parse_method(key.substr(dot + 1)));
      const fs::path again = dir.string() + ".rerun";
      fs::remove_all(again);
      const RunResult r = run_config_file((kConfigs / (config + ".toml")).string(), again.string(), method);
      bool same = r.exit_code == exit_code::ok;
      for (const char* f : {"samples.csv", "metrics.jsonl"})
        same = same && read_text((dir / f).string()) == read_text((again / f).string());
      o.check(same, key);
    }
    o.check(!done.empty(), std::to_string(done.size()) + " runs");
  });

  std::printf("%d of 13 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
