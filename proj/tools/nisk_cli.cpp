// nisk: train implicit samplers, run baselines, evaluate sample files.

#include "nisk/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int report(const nisk::RunResult& r, const std::string& label) {
  if (r.exit_code != nisk::exit_code::ok) {
    std::cerr << label << ": " << r.message << "\n";
    return r.exit_code;
  }
  std::cout << label << ": ok";
  if (r.report.contains("metrics"))
    for (const auto& [k, v] : r.report["metrics"].items()) std::cout << " " << k << "=" << v.dump();
  std::cout << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural implicit samplers"};
  app.require_subcommand(1);

  std::string run_config;
  std::optional<std::string> run_out;
  auto* run = app.add_subcommand("run", "train or sample per a TOML config");
  run->add_option("config", run_config, "config file")->required();
  run->add_option("--out", run_out, "override output_dir");

  std::string ckpt;
  long n_draws = 1000;
  std::uint64_t sample_seed = 0;
  std::string sample_out = "samples.csv";
  auto* sample = app.add_subcommand("sample", "draw from a sampler checkpoint");
  sample->add_option("checkpoint", ckpt, "sampler checkpoint (.nisk)")->required();
  sample->add_option("-n,--n", n_draws, "number of draws")->check(CLI::NonNegativeNumber);
  sample->add_option("--seed", sample_seed, "random seed");
  sample->add_option("-o,--out", sample_out, "output CSV");

  std::string eval_samples, eval_target = "gauss", eval_metrics = "metrics.jsonl";
  std::optional<std::string> oracle;
  double bandwidth = 0.25;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "metrics for a samples.csv");
  eval->add_option("samples", eval_samples, "samples CSV")->required();
  eval->add_option("--target", eval_target, "name[:key=value,...]");
  eval->add_option("-o,--out", eval_metrics, "metrics.jsonl to append to");
  eval->add_option("--oracle", oracle, "1D oracle samples CSV for --ks");
  eval->add_option("--bandwidth", bandwidth, "KSD RBF bandwidth")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "seed for oracle draws");
  auto* f_ksd = eval->add_flag("--ksd", "kernelized Stein discrepancy");
  auto* f_ks = eval->add_flag("--ks", "two-sample KS statistic (1D)");
  auto* f_mom = eval->add_flag("--moments", "mean and covariance error");

  std::string base_config, base_method = "hmc";
  std::optional<std::string> base_out;
  auto* baseline = app.add_subcommand("baseline", "run an MCMC baseline on a config's target");
  baseline->add_option("config", base_config, "config file")->required();
  baseline->add_option("--method", base_method, "hmc or langevin")
      ->check(CLI::IsMember({"hmc", "langevin"}));
  baseline->add_option("--out", base_out, "override output_dir");

  std::vector<std::string> sweep_configs;
  int jobs = 0;
  auto* sweep = app.add_subcommand("sweep", "run several configs in parallel");
  sweep->add_option("configs", sweep_configs, "config files")->required();
  sweep->add_option("-j,--jobs", jobs, "workers (default: hardware threads)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : nisk::exit_code::config;
  }

  try {
    if (*run) return report(nisk::run_config_file(run_config, run_out), run_config);

    if (*baseline)
      return report(nisk::run_config_file(base_config, base_out, nisk::parse_method(base_method)), base_config);

    if (*sample) {
      const nisk::SampleResult r = nisk::sample_checkpoint(ckpt, n_draws, sample_seed);
      nisk::write_samples_csv(sample_out, r.samples);
      nlohmann::ordered_json j{{"n", n_draws}, {"nfe", r.nfe}, {"out", sample_out}};
      std::cout << j.dump() << "\n";
      return 0;
    }

    if (*eval) {
      std::vector<nisk::EvalMetric> order;
      for (const CLI::Option* opt : eval->parse_order()) {
        if (opt == f_ksd) order.push_back(nisk::EvalMetric::Ksd);
        else if (opt == f_ks) order.push_back(nisk::EvalMetric::Ks);
        else if (opt == f_mom) order.push_back(nisk::EvalMetric::Moments);
      }
      if (order.empty()) throw nisk::ConfigError("eval: pass at least one of --ksd, --ks, --moments");
      nisk::EvalOptions opts;
      opts.ksd.bandwidth = bandwidth;
      opts.oracle_path = oracle;
      opts.seed = eval_seed;
      const auto records =
          nisk::eval_samples_file(eval_samples, nisk::parse_target_spec(eval_target), order, opts, eval_metrics);
      for (const auto& r : records) std::cout << r.to_json_line();
      return 0;
    }

    if (*sweep) {
      const int workers = jobs > 0 ? jobs : static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
      const auto results = nisk::sweep(sweep_configs, workers);
      int worst = 0;
      for (std::size_t i = 0; i < results.size(); ++i)
        worst = std::max(worst, report(results[i], sweep_configs[i]));
      return worst;
    }
  } catch (const nisk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return nisk::exit_code::config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return nisk::exit_code::runtime;
  }
  return 0;
}
