#pragma once

// Config-driven experiment runner behind the CLI.

#include "nisk/baselines.hpp"
#include "nisk/bayes.hpp"
#include "nisk/checkpoint.hpp"
#include "nisk/config.hpp"
#include "nisk/evaluation.hpp"
#include "nisk/io.hpp"
#include "nisk/sampler_training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

namespace nisk {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config = 2;
inline constexpr int runtime = 3;
}  // namespace exit_code

// Random stream tags, fixed so reruns line up.
namespace stream {
inline constexpr std::uint64_t init = 0x696e6974;
inline constexpr std::uint64_t final_draw = 0x66696e;
inline constexpr std::uint64_t coverage = 0x636f76;
inline constexpr std::uint64_t oracle = 0x6f7261;
inline constexpr std::uint64_t periodic = 0x706572;
inline constexpr std::uint64_t posterior = 0x706f73;
}  // namespace stream

struct Problem {
  TargetPtr target;  // fixed target (full posterior in the Bayesian case)
  TargetSource source;
  std::optional<DatasetSplit> split;
  std::shared_ptr<BayesLogisticPosterior> posterior;
};

inline Problem build_problem(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  Problem p;
  if (!cfg.bayes()) {
    p.target = make_target(cfg.target);
    TargetPtr t = p.target;
    p.source = [t](int) { return t; };
    return p;
  }
  std::string path = cfg.data.path;
  if (path.empty()) {
    path = (out_dir / "synthetic_covertype.csv").string();
    write_synthetic_covertype(path, static_cast<std::size_t>(cfg.data.synthetic_rows), cfg.data.seed,
                              cfg.data.synthetic_features);
  }
  CovertypeOptions opts;
  opts.train_fraction = cfg.data.train_fraction;
  opts.seed = cfg.data.seed;
  opts.max_rows = static_cast<std::size_t>(cfg.data.max_rows);
  p.split = load_covertype(path, opts);
  const auto n = static_cast<std::size_t>(p.split->train.size());
  p.posterior = std::make_shared<BayesLogisticPosterior>(
      p.split->train, std::min<std::size_t>(static_cast<std::size_t>(cfg.data.minibatch), n),
      Rng(cfg.seed, stream::posterior).next_u64());
  p.target = p.posterior->full_posterior();
  auto post = p.posterior;
  p.source = [post](int) -> TargetPtr { return post->posterior_minibatch(); };
  return p;
}

// Fraction of draws assigned to each mixture component.
inline std::vector<double> mode_fractions(const GaussianMixture& mix, const Matrix& draws) {
  std::vector<double> counts(mix.means().size(), 0.0);
  for (Eigen::Index j = 0; j < draws.cols(); ++j)
    counts[static_cast<std::size_t>(mix.nearest_mode(draws.col(j)))] += 1.0;
  for (double& c : counts) c /= static_cast<double>(std::max<Eigen::Index>(1, draws.cols()));
  return counts;
}

using DrawFn = std::function<Matrix(Eigen::Index)>;

// Final metrics for one sample set, in a fixed order.
inline std::vector<MetricRecord> evaluate_run(const ExperimentConfig& cfg, const Problem& prob,
                                              const Matrix& samples, const std::string& hash,
                                              const DrawFn& more_draws) {
  std::vector<MetricRecord> out;
  const long n = samples.cols();
  const TargetDensity& target = *prob.target;
  auto add = [&](const std::string& name, double v, long count) {
    out.emplace_back(name, v, count, cfg.seed, hash);
  };
  if (cfg.bayes()) {
    const long k = std::min<long>(n, cfg.eval.posterior_samples);
    if (k >= 1) add("test_accuracy", bayes_test_accuracy(samples.leftCols(k), prob.split->test), k);
    return out;
  }
  if (cfg.eval.ksd && n >= 2) {
    const long k = cfg.eval.ksd_samples > 0 ? std::min<long>(n, cfg.eval.ksd_samples) : n;
    if (k >= 2) add("ksd", ksd(samples.leftCols(k), target, cfg.eval.ksd_config), k);
  }
  if (cfg.eval.moments && n >= 2) {
    if (auto m = target.exact_moments()) {
      const MomentError e = moment_error(samples, m->mean, m->cov);
      add("mean_error", e.mean_error, n);
      add("cov_error", e.cov_error, n);
    }
  }
  if (cfg.eval.ks && target.dim() == 1 && n >= 1) {
    Rng rng(cfg.seed, stream::oracle);
    if (auto oracle = target.sample_exact(cfg.eval.ks_oracle_samples, rng))
      add("ks", ks_statistic_1d(row_values(samples), row_values(*oracle)), n);
  }
  if (cfg.eval.coverage_samples > 0) {
    if (const auto* mix = dynamic_cast<const GaussianMixture*>(&target)) {
      const Matrix draws = more_draws ? more_draws(cfg.eval.coverage_samples) : samples;
      const std::vector<double> f = mode_fractions(*mix, draws);
      add("min_mode_fraction", *std::min_element(f.begin(), f.end()), draws.cols());
    }
  }
  return out;
}

struct RunResult {
  int exit_code = exit_code::ok;
  std::string message;
  Matrix samples;
  std::vector<MetricRecord> metrics;
  nlohmann::ordered_json report;
};

inline std::string iteration_json(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["sm_loss"] = std::isfinite(r.sm_loss) ? nlohmann::ordered_json(r.sm_loss) : nlohmann::ordered_json(nullptr);
  j["sampler_loss"] =
      std::isfinite(r.sampler_loss) ? nlohmann::ordered_json(r.sampler_loss) : nlohmann::ordered_json(nullptr);
  j["beta_or_sigma"] = r.beta_or_sigma;
  j["wallclock_ms"] = r.wallclock_ms;
  return j.dump() + "\n";
}

// Executes one experiment and writes samples.csv, metrics.jsonl, report.json,
// run_log.jsonl and checkpoints under cfg.output_dir.
inline RunResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  RunResult res;
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  const std::string hash = cfg.hash();
  const std::string metrics_path = (out / "metrics.jsonl").string();
  write_text(metrics_path, "");

  Problem prob = build_problem(cfg, out);
  const int d = prob.target->dim();
  nlohmann::ordered_json& rep = res.report;
  rep["config_hash"] = hash;
  rep["seed"] = cfg.seed;
  rep["method"] = method_name(cfg.method);
  rep["target"] = cfg.target.name;
  rep["dim"] = d;

  long nfe_total = 0;
  long nfe_per_sample = 0;
  DrawFn more;
  std::vector<MetricRecord> periodic;
  const Eigen::Index n = cfg.eval.n_samples;

  if (cfg.method == Method::KL || cfg.method == Method::Fisher) {
    Rng init(cfg.seed, stream::init);
    const std::uint64_t gseed = init.next_u64();
    const std::uint64_t sseed = init.next_u64();
    std::vector<int> gdims{cfg.latent_dim > 0 ? cfg.latent_dim : d};
    gdims.insert(gdims.end(), cfg.sampler.hidden.begin(), cfg.sampler.hidden.end());
    gdims.push_back(d);
    std::vector<int> sdims{d};
    sdims.insert(sdims.end(), cfg.score.hidden.begin(), cfg.score.hidden.end());
    sdims.push_back(d);
    const bool noisy = cfg.train.anneal.mode == AnnealSchedule::Mode::NoiseScale;
    GeneratorNet g(Mlp::glorot(gdims, cfg.sampler.activation, gseed));
    ScoreNet s(Mlp::glorot(sdims, cfg.score.activation, sseed), noisy ? SigmaMode::Scaled : SigmaMode::Plain);

    TrainConfig tc = cfg.train;
    const bool want_hook = (cfg.eval.every > 0 && !cfg.bayes()) || cfg.checkpoint_every > 0;
    tc.eval_every = want_hook ? 1 : 0;
    if (cfg.checkpoint_every > 0) fs::create_directories(out / "checkpoints");
    EvalHook hook = [&](int t, const GeneratorNet& gen, const ScoreNet& sn) {
      if (cfg.eval.every > 0 && !cfg.bayes() && t % cfg.eval.every == 0) {
        Rng r(cfg.seed, stream::periodic + static_cast<std::uint64_t>(t));
        const Matrix xs = gen.sample(cfg.eval.periodic_samples, r);
        if (xs.allFinite())
          periodic.emplace_back("ksd", ksd(xs, *prob.target, cfg.eval.ksd_config), xs.cols(), cfg.seed, hash, t);
      }
      if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0) {
        save_checkpoint(gen.net(), (out / "checkpoints" / ("sampler_" + std::to_string(t) + ".nisk")).string());
        save_checkpoint(sn.net(), (out / "checkpoints" / ("score_" + std::to_string(t) + ".nisk")).string());
      }
    };
    const RunReport tr = train(g, s, prob.source, tc, hook);
    {
      std::string log;
      for (const auto& r : tr.iterations) log += iteration_json(r);
      write_text((out / "run_log.jsonl").string(), log);
    }
    append_metrics(metrics_path, periodic);
    save_checkpoint(g.net(), (out / "sampler.nisk").string());
    save_checkpoint(s.net(), (out / "score.nisk").string());
    rep["train"] = {{"iterations", tr.iterations.size()},
                    {"score_updates", tr.score_updates},
                    {"sampler_updates", tr.sampler_updates},
                    {"score_mode", noisy ? "scaled" : "plain"},
                    {"aborted", tr.aborted}};
    if (tr.aborted) {
      rep["diagnostic"] = tr.diagnostic;
      rep["wallclock_ms"] =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      write_text((out / "report.json").string(), rep.dump(2) + "\n");
      res.exit_code = exit_code::runtime;
      res.message = "training aborted: " + tr.diagnostic;
      return res;
    }
    Rng fin(cfg.seed, stream::final_draw);
    res.samples = g.sample(n, fin);
    nfe_total = n;  // one generator pass per draw
    nfe_per_sample = 1;
    more = [g, seed = cfg.seed](Eigen::Index m) {
      Rng r(seed, stream::coverage);
      return g.sample(m, r);
    };
  } else if (cfg.method == Method::Hmc) {
    HmcConfig hc = cfg.hmc;
    hc.n_samples = static_cast<int>(n);
    hc.init = Vector::Zero(d);
    const HmcResult hr = hmc_sample(*prob.target, hc);
    res.samples = hr.samples;
    nfe_total = hr.nfe;
    nfe_per_sample = n > 0 ? hr.nfe / static_cast<long>(n) : 0;  // burn-in amortized
    rep["hmc"] = {{"acceptance_rate", hr.acceptance_rate}, {"warning", hr.warning.value_or("")}};
  } else {
    const LangevinSpec& l = cfg.langevin;
    LangevinConfig lc = LangevinConfig::geometric(l.levels, l.sigma_max, l.sigma_min, l.steps_per_level,
                                                  l.base_step, static_cast<int>(std::max<Eigen::Index>(1, n)),
                                                  cfg.seed);
    lc.init_std = l.init_std;
    const LangevinResult lr = annealed_langevin(AnalyticEnergy(prob.target), lc);
    res.samples = lr.samples.leftCols(n);
    nfe_per_sample = lr.nfe_per_sample;
    nfe_total = nfe_per_sample * static_cast<long>(n);
  }

  if (!res.samples.allFinite()) {
    write_samples_csv((out / "samples.csv").string(), res.samples);
    res.exit_code = exit_code::runtime;
    res.message = "non-finite samples produced";
    rep["diagnostic"] = res.message;
    write_text((out / "report.json").string(), rep.dump(2) + "\n");
    return res;
  }
  write_samples_csv((out / "samples.csv").string(), res.samples);

  res.metrics = evaluate_run(cfg, prob, res.samples, hash, more);
  res.metrics.emplace_back("nfe_per_sample", static_cast<double>(nfe_per_sample), n, cfg.seed, hash);
  res.metrics.emplace_back("nfe_total", static_cast<double>(nfe_total), n, cfg.seed, hash);
  if (rep.contains("hmc"))
    res.metrics.emplace_back("hmc_acceptance", rep["hmc"]["acceptance_rate"].get<double>(), n, cfg.seed, hash);
  append_metrics(metrics_path, res.metrics);
  res.metrics.insert(res.metrics.begin(), periodic.begin(), periodic.end());

  rep["n_samples"] = n;
  rep["nfe"] = {{"total", nfe_total}, {"per_sample", nfe_per_sample}};
  nlohmann::ordered_json m;
  for (const auto& r : res.metrics)
    if (!r.iter) m[r.name] = r.value;
  rep["metrics"] = m;
  rep["wallclock_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  write_text((out / "report.json").string(), rep.dump(2) + "\n");
  return res;
}

// Exit code plus message for a config file, translating exceptions.
inline RunResult run_config_file(const std::string& path, const std::optional<std::string>& output_dir = {},
                                 std::optional<Method> method_override = {}) {
  RunResult res;
  ExperimentConfig cfg;
  try {
    cfg = load_config(path);
    if (output_dir) cfg.output_dir = *output_dir;
    if (method_override) cfg.method = *method_override;
  } catch (const ConfigError& e) {
    res.exit_code = exit_code::config;
    res.message = std::string("config error: ") + e.what();
    return res;
  }
  try {
    return run_experiment(cfg);
  } catch (const ConfigError& e) {
    res.exit_code = exit_code::config;
    res.message = std::string("config error: ") + e.what();
  } catch (const std::exception& e) {
    res.exit_code = exit_code::runtime;
    res.message = std::string("runtime error: ") + e.what();
  }
  return res;
}

struct SampleResult {
  Matrix samples;
  long nfe = 0;
};

// n draws from a saved generator; the stream matches run_experiment's final draw.
inline SampleResult sample_checkpoint(const std::string& path, Eigen::Index n, std::uint64_t seed) {
  require(n >= 0, "sample count must be non-negative");
  const GeneratorNet g(load_checkpoint(path));
  Rng rng(seed, stream::final_draw);
  SampleResult out;
  out.samples = n > 0 ? g.sample(n, rng) : Matrix(g.data_dim(), 0);
  out.nfe = static_cast<long>(n);
  return out;
}

// "name" or "name:key=value,key=value"
inline TargetSpec parse_target_spec(const std::string& text) {
  TargetSpec spec;
  const auto colon = text.find(':');
  spec.name = text.substr(0, colon);
  if (spec.name.empty()) throw ConfigError("target spec needs a name");
  if (colon == std::string::npos) return spec;
  std::stringstream ss(text.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("target parameter '" + item + "' needs key=value");
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    char* end = nullptr;
    const double v = std::strtod(val.c_str(), &end);
    if (val.empty() || end != val.c_str() + val.size())
      throw ConfigError("target parameter '" + key + "': cannot parse '" + val + "'");
    spec.params[key] = v;
  }
  return spec;
}

enum class EvalMetric { Ksd, Ks, Moments };

struct EvalOptions {
  KsdConfig ksd;
  std::optional<std::string> oracle_path;  // 1D oracle samples for --ks
  int oracle_samples = 10000;              // exact target draws when no oracle file
  std::uint64_t seed = 0;
};

// Computes the requested metrics in order and appends them to metrics_path.
inline std::vector<MetricRecord> eval_samples_file(const std::string& samples_path, const TargetSpec& spec,
                                                   const std::vector<EvalMetric>& metrics,
                                                   const EvalOptions& opts, const std::string& metrics_path) {
  const std::string bytes = read_text(samples_path);
  const Matrix xs = read_samples_csv(samples_path);
  const TargetPtr target = make_target(spec);
  require_shape(xs.rows() == target->dim(), "samples have dimension " + std::to_string(xs.rows()) +
                                                 " but target '" + spec.name + "' has dimension " +
                                                 std::to_string(target->dim()));
  nlohmann::ordered_json id;
  id["samples"] = fnv1a_hex(bytes);
  id["target"] = spec.name;
  for (const auto& [k, v] : spec.params) id["params"][k] = format_double(v);
  id["seed"] = opts.seed;
  id["bandwidth"] = format_double(opts.ksd.bandwidth);
  const std::string hash = fnv1a_hex(id.dump());
  const long n = xs.cols();

  std::vector<MetricRecord> out;
  for (EvalMetric m : metrics) {
    switch (m) {
      case EvalMetric::Ksd:
        out.emplace_back("ksd", ksd(xs, *target, opts.ksd), n, opts.seed, hash);
        break;
      case EvalMetric::Ks: {
        require_shape(xs.rows() == 1, "--ks needs 1D samples");
        Matrix oracle;
        if (opts.oracle_path) {
          oracle = read_samples_csv(*opts.oracle_path);
          require_shape(oracle.rows() == 1, "oracle samples must be 1D");
        } else {
          Rng rng(opts.seed, stream::oracle);
          auto draws = target->sample_exact(opts.oracle_samples, rng);
          if (!draws) throw ConfigError("--ks: target '" + spec.name + "' has no exact sampler; pass --oracle");
          oracle = *draws;
        }
        out.emplace_back("ks", ks_statistic_1d(row_values(xs), row_values(oracle)), n, opts.seed, hash);
        break;
      }
      case EvalMetric::Moments: {
        auto mom = target->exact_moments();
        if (!mom) throw ConfigError("--moments: target '" + spec.name + "' has no closed-form moments");
        const MomentError e = moment_error(xs, mom->mean, mom->cov);
        out.emplace_back("mean_error", e.mean_error, n, opts.seed, hash);
        out.emplace_back("cov_error", e.cov_error, n, opts.seed, hash);
        break;
      }
    }
  }
  append_metrics(metrics_path, out);
  return out;
}

// One worker per run, up to `jobs` at a time; runs share nothing.
inline std::vector<RunResult> sweep(const std::vector<std::string>& configs, int jobs) {
  std::vector<RunResult> results(configs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) results[i] = run_config_file(configs[i]);
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(configs.size())));
  std::vector<std::thread> pool;
  for (int k = 0; k < n; ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  return results;
}

}  // namespace nisk
