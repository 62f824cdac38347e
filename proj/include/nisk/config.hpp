#pragma once

// Experiment configuration: TOML in, validated ExperimentConfig out.
// Unknown keys are errors.

#include "nisk/baselines.hpp"
#include "nisk/evaluation.hpp"
#include "nisk/io.hpp"
#include "nisk/sampler_training.hpp"
#include "nisk/targets.hpp"

#include <toml.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <set>
#include <string>
#include <vector>

namespace nisk {

enum class Method { KL, Fisher, Hmc, Langevin };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::KL: return "kl";
    case Method::Fisher: return "fisher";
    case Method::Hmc: return "hmc";
    case Method::Langevin: return "langevin";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "kl") return Method::KL;
  if (s == "fisher") return Method::Fisher;
  if (s == "hmc") return Method::Hmc;
  if (s == "langevin") return Method::Langevin;
  throw ConfigError("method: expected kl|fisher|hmc|langevin, got '" + s + "'");
}

struct NetSpec {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::gelu();
};

struct LangevinSpec {
  int levels = 10;
  double sigma_max = 3.0;
  double sigma_min = 0.3;
  int steps_per_level = 20;
  double base_step = 0.01;
  double init_std = 1.0;
};

struct EvalSpec {
  int n_samples = 1000;            // size of the emitted samples.csv
  bool ksd = true;
  int ksd_samples = 0;             // leading columns used for KSD; 0 = all
  KsdConfig ksd_config;
  bool moments = true;             // against exact moments, when the target has them
  bool ks = false;                 // 1D two-sample KS against exact target draws
  int ks_oracle_samples = 10000;
  int coverage_samples = 0;        // mixture mode coverage; 0 disables
  int posterior_samples = 100;     // Bayesian predictive accuracy
  int every = 0;                   // periodic in-training KSD; 0 disables
  int periodic_samples = 500;
};

struct DataSpec {
  std::string path;                // empty: synthetic fallback
  int synthetic_rows = 5000;
  int synthetic_features = 54;
  double train_fraction = 0.8;
  int max_rows = 0;
  int minibatch = 500;
  std::uint64_t seed = 0;          // synthetic rows and the train/test split
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  Method method = Method::KL;
  std::string output_dir = "out";
  TargetSpec target{"gauss", {}};
  int latent_dim = 0;  // 0: same as the target
  NetSpec sampler;
  NetSpec score;
  TrainConfig train;
  double warmup_fraction = 0.3;
  int checkpoint_every = 0;
  HmcConfig hmc;
  LangevinSpec langevin;
  EvalSpec eval;
  DataSpec data;

  bool bayes() const { return target.name == "bayes_logistic"; }

  // Everything that determines the outputs, output_dir excluded.
  nlohmann::ordered_json canonical() const;
  std::string hash() const { return fnv1a_hex(canonical().dump()); }
};

namespace detail {

inline Activation parse_activation(const std::string& name, double slope) {
  if (name == "gelu") return Activation::gelu();
  if (name == "tanh") return Activation::tanh();
  if (name == "leaky_relu") return Activation::leaky_relu(slope);
  throw ConfigError("activation: expected gelu|tanh|leaky_relu, got '" + name + "'");
}

// Tracks which keys of one table were read; leftovers are unknown keys.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string prefix) : table_(table), prefix_(std::move(prefix)) {}

  bool has(const std::string& key) const { return table_ != nullptr && table_->contains(key); }

  double number(const std::string& key, double fallback) {
    const toml::node* n = node(key);
    if (n == nullptr) return fallback;
    if (auto v = n->value_exact<double>()) return *v;
    if (auto v = n->value_exact<std::int64_t>()) return static_cast<double>(*v);
    throw ConfigError(where(key) + ": expected a number");
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const toml::node* n = node(key);
    if (n == nullptr) return fallback;
    if (auto v = n->value_exact<std::int64_t>()) return *v;
    throw ConfigError(where(key) + ": expected an integer");
  }

  int count(const std::string& key, int fallback, int lo) {
    const std::int64_t v = integer(key, fallback);
    if (v < lo || v > 1'000'000'000) throw ConfigError(where(key) + ": must be >= " + std::to_string(lo));
    return static_cast<int>(v);
  }

  bool boolean(const std::string& key, bool fallback) {
    const toml::node* n = node(key);
    if (n == nullptr) return fallback;
    if (auto v = n->value_exact<bool>()) return *v;
    throw ConfigError(where(key) + ": expected true or false");
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const toml::node* n = node(key);
    if (n == nullptr) return fallback;
    if (auto v = n->value_exact<std::string>()) return *v;
    throw ConfigError(where(key) + ": expected a string");
  }

  std::vector<int> int_list(const std::string& key, std::vector<int> fallback) {
    const toml::node* n = node(key);
    if (n == nullptr) return fallback;
    const toml::array* arr = n->as_array();
    if (arr == nullptr) throw ConfigError(where(key) + ": expected an array of integers");
    std::vector<int> out;
    for (const auto& el : *arr) {
      auto v = el.value_exact<std::int64_t>();
      if (!v || *v < 1 || *v > 100000) throw ConfigError(where(key) + ": entries must be positive integers");
      out.push_back(static_cast<int>(*v));
    }
    return out;
  }

  std::vector<double> number_list(const std::string& key, std::vector<double> fallback) {
    const toml::node* n = node(key);
    if (n == nullptr) return fallback;
    const toml::array* arr = n->as_array();
    if (arr == nullptr) throw ConfigError(where(key) + ": expected an array of numbers");
    std::vector<double> out;
    for (const auto& el : *arr) {
      if (auto v = el.value_exact<double>()) out.push_back(*v);
      else if (auto i = el.value_exact<std::int64_t>()) out.push_back(static_cast<double>(*i));
      else throw ConfigError(where(key) + ": entries must be numbers");
    }
    return out;
  }

  // Remaining numeric keys (target parameters).
  std::map<std::string, double> rest_numbers() {
    std::map<std::string, double> out;
    if (table_ == nullptr) return out;
    for (const auto& [k, v] : *table_) {
      const std::string key(k.str());
      if (used_.count(key)) continue;
      out[key] = number(key, 0.0);
    }
    return out;
  }

  void finish() const {
    if (table_ == nullptr) return;
    for (const auto& [k, v] : *table_) {
      const std::string key(k.str());
      if (!used_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
    }
  }

  std::string where(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  const toml::node* node(const std::string& key) {
    used_.insert(key);
    if (table_ == nullptr) return nullptr;
    return table_->get(key);
  }

  const toml::table* table_;
  std::string prefix_;
  std::set<std::string> used_;
};

inline const toml::table* section(const toml::table& root, const std::string& name) {
  const toml::node* n = root.get(name);
  if (n == nullptr) return nullptr;
  if (!n->is_table()) throw ConfigError("'" + name + "' must be a table");
  return n->as_table();
}

inline NetSpec read_net(TableReader& r, const NetSpec& fallback) {
  NetSpec out;
  out.hidden = r.int_list("hidden", fallback.hidden);
  const double slope = r.number("slope", 0.2);
  out.activation = parse_activation(r.string("activation", fallback.activation.name()), slope);
  return out;
}

inline SmObjective parse_objective(const std::string& s) {
  if (s == "exact") return SmObjective::ExactSM;
  if (s == "sliced") return SmObjective::SlicedSM;
  if (s == "denoising") return SmObjective::DenoisingSM;
  throw ConfigError("score.objective: expected exact|sliced|denoising, got '" + s + "'");
}

inline std::string objective_name(SmObjective o) {
  switch (o) {
    case SmObjective::ExactSM: return "exact";
    case SmObjective::SlicedSM: return "sliced";
    case SmObjective::DenoisingSM: return "denoising";
  }
  return "?";
}

inline std::string anneal_name(AnnealSchedule::Mode m) {
  switch (m) {
    case AnnealSchedule::Mode::None: return "none";
    case AnnealSchedule::Mode::Temper: return "temper";
    case AnnealSchedule::Mode::NoiseScale: return "noise";
  }
  return "?";
}

inline std::optional<std::uint64_t> seed_from_env() {
  const char* env = std::getenv("NISK_SEED");
  if (env == nullptr || *env == '\0') return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || *env == '-') throw ConfigError("NISK_SEED must be a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

}  // namespace detail

inline ExperimentConfig parse_config_toml(const std::string& text, const std::string& source = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }

  ExperimentConfig cfg;
  static const std::set<std::string> sections{"target", "sampler", "score", "train", "eval",
                                              "hmc",    "langevin", "data"};
  detail::TableReader top(&root, "");
  cfg.seed = static_cast<std::uint64_t>(top.integer("seed", 0));
  if (top.integer("seed", 0) < 0) throw ConfigError("seed must be non-negative");
  cfg.method = parse_method(top.string("method", "kl"));
  cfg.output_dir = top.string("output_dir", "out");
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (sections.count(key) == 0 && key != "seed" && key != "method" && key != "output_dir")
      throw ConfigError("unknown config key '" + key + "'");
  }

  {
    detail::TableReader r(detail::section(root, "target"), "target");
    cfg.target.name = r.string("name", "gauss");
    cfg.target.params = r.rest_numbers();
    r.finish();
    if (cfg.bayes()) {
      if (!cfg.target.params.empty())
        throw ConfigError("target: bayes_logistic takes its settings from [data]");
    } else {
      make_target(cfg.target);  // validates name and parameters
    }
  }
  {
    detail::TableReader r(detail::section(root, "sampler"), "sampler");
    cfg.latent_dim = r.count("latent_dim", 0, 0);
    cfg.sampler = detail::read_net(r, NetSpec{});
    r.finish();
  }
  {
    detail::TableReader r(detail::section(root, "score"), "score");
    cfg.score = detail::read_net(r, NetSpec{});
    SmConfig& sm = cfg.train.score;
    sm.objective = detail::parse_objective(r.string("objective", "exact"));
    sm.n_probes = r.count("n_probes", 1, 1);
    sm.steps_per_phase = r.count("steps_per_phase", 2, 1);
    sm.optimizer.lr = r.number("lr", 1e-4);
    sm.optimizer.beta1 = r.number("beta1", 0.9);
    sm.optimizer.beta2 = r.number("beta2", 0.99);
    r.finish();
  }
  {
    detail::TableReader r(detail::section(root, "train"), "train");
    TrainConfig& t = cfg.train;
    t.method = cfg.method == Method::Fisher ? TrainMethod::Fisher : TrainMethod::KL;
    t.max_iters = r.count("max_iters", 1000, 1);
    t.batch = r.count("batch", 256, 2);
    t.sampler_optimizer.lr = r.number("lr", 2e-4);
    t.sampler_optimizer.beta1 = r.number("beta1", 0.9);
    t.sampler_optimizer.beta2 = r.number("beta2", 0.99);
    const std::string anneal = r.string("anneal", "none");
    if (anneal == "none") t.anneal.mode = AnnealSchedule::Mode::None;
    else if (anneal == "temper") t.anneal.mode = AnnealSchedule::Mode::Temper;
    else if (anneal == "noise") t.anneal.mode = AnnealSchedule::Mode::NoiseScale;
    else throw ConfigError("train.anneal: expected none|temper|noise, got '" + anneal + "'");
    t.anneal.beta0 = r.number("beta0", 0.2);
    cfg.warmup_fraction = r.number("warmup_fraction", 0.3);
    if (!(cfg.warmup_fraction >= 0.0 && cfg.warmup_fraction <= 1.0))
      throw ConfigError("train.warmup_fraction must lie in [0, 1]");
    t.anneal.warmup_iters = static_cast<int>(std::lround(cfg.warmup_fraction * t.max_iters));
    t.anneal.sigma_min = r.number("sigma_min", 0.3);
    t.anneal.sigma_max = r.number("sigma_max", 3.0);
    cfg.checkpoint_every = r.count("checkpoint_every", 0, 0);
    r.finish();
  }
  {
    detail::TableReader r(detail::section(root, "hmc"), "hmc");
    cfg.hmc.step_size = r.number("step_size", 0.1);
    cfg.hmc.n_leapfrog = r.count("n_leapfrog", 10, 1);
    cfg.hmc.burn_in = r.count("burn_in", 500, 0);
    r.finish();
  }
  {
    detail::TableReader r(detail::section(root, "langevin"), "langevin");
    LangevinSpec& l = cfg.langevin;
    l.levels = r.count("levels", 10, 1);
    l.sigma_max = r.number("sigma_max", 3.0);
    l.sigma_min = r.number("sigma_min", 0.3);
    l.steps_per_level = r.count("steps_per_level", 20, 1);
    l.base_step = r.number("base_step", 0.01);
    l.init_std = r.number("init_std", 1.0);
    r.finish();
    if (!(l.sigma_min > 0.0 && l.sigma_min <= l.sigma_max))
      throw ConfigError("langevin: need 0 < sigma_min <= sigma_max");
    if (!(l.base_step > 0.0)) throw ConfigError("langevin.base_step must be positive");
    if (!(l.init_std > 0.0)) throw ConfigError("langevin.init_std must be positive");
  }
  {
    detail::TableReader r(detail::section(root, "eval"), "eval");
    EvalSpec& e = cfg.eval;
    e.n_samples = r.count("n_samples", 1000, 0);
    e.ksd = r.boolean("ksd", true);
    e.ksd_samples = r.count("ksd_samples", 0, 0);
    e.ksd_config.bandwidth = r.number("bandwidth", 0.25);
    const std::string est = r.string("estimator", "u");
    if (est == "u") e.ksd_config.estimator = KsdConfig::Estimator::UStat;
    else if (est == "v") e.ksd_config.estimator = KsdConfig::Estimator::VStat;
    else throw ConfigError("eval.estimator: expected u|v, got '" + est + "'");
    e.ksd_config.multi_scale = r.boolean("multi_scale", false);
    e.ksd_config.scales = r.number_list("scales", {0.1, 0.25, 0.5});
    e.moments = r.boolean("moments", true);
    e.ks = r.boolean("ks", false);
    e.ks_oracle_samples = r.count("ks_oracle_samples", 10000, 1);
    e.coverage_samples = r.count("coverage_samples", 0, 0);
    e.posterior_samples = r.count("posterior_samples", 100, 1);
    e.every = r.count("every", 0, 0);
    e.periodic_samples = r.count("periodic_samples", 500, 2);
    r.finish();
    try {
      e.ksd_config.validate();
    } catch (const PreconditionError& ex) {
      throw ConfigError(std::string("eval: ") + ex.what());
    }
  }
  {
    detail::TableReader r(detail::section(root, "data"), "data");
    DataSpec& d = cfg.data;
    d.path = r.string("path", "");
    d.synthetic_rows = r.count("synthetic_rows", 5000, 10);
    d.synthetic_features = r.count("synthetic_features", 54, 1);
    d.train_fraction = r.number("train_fraction", 0.8);
    d.max_rows = r.count("max_rows", 0, 0);
    d.minibatch = r.count("minibatch", 500, 1);
    const std::int64_t dseed = r.integer("seed", 0);
    if (dseed < 0) throw ConfigError("data.seed must be non-negative");
    d.seed = static_cast<std::uint64_t>(dseed);
    r.finish();
    if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0))
      throw ConfigError("data.train_fraction must lie in (0, 1)");
  }

  if (auto env = detail::seed_from_env()) cfg.seed = *env;
  cfg.train.seed = cfg.seed;
  cfg.hmc.seed = cfg.seed;
  try {
    cfg.train.validate();
    cfg.hmc.validate();
  } catch (const PreconditionError& ex) {
    throw ConfigError(ex.what());
  }
  if (cfg.method == Method::Fisher && !cfg.score.activation.smooth())
    throw ConfigError("score.activation: Fisher training needs a differentiable activation");
  if (cfg.bayes() && cfg.method == Method::Fisher)
    throw ConfigError("method: Fisher training is not supported for bayes_logistic");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config_toml(text, path);
}

inline nlohmann::ordered_json ExperimentConfig::canonical() const {
  nlohmann::ordered_json j;
  auto net = [](const NetSpec& n) {
    nlohmann::ordered_json o;
    o["hidden"] = n.hidden;
    o["activation"] = n.activation.name();
    o["slope"] = format_double(n.activation.slope);
    return o;
  };
  j["seed"] = seed;
  j["method"] = method_name(method);
  j["target"]["name"] = target.name;
  for (const auto& [k, v] : target.params) j["target"]["params"][k] = format_double(v);
  j["latent_dim"] = latent_dim;
  j["sampler"] = net(sampler);
  j["score"] = net(score);
  j["score"]["objective"] = detail::objective_name(train.score.objective);
  j["score"]["n_probes"] = train.score.n_probes;
  j["score"]["steps_per_phase"] = train.score.steps_per_phase;
  j["score"]["lr"] = format_double(train.score.optimizer.lr);
  j["score"]["betas"] = {format_double(train.score.optimizer.beta1), format_double(train.score.optimizer.beta2)};
  j["train"]["max_iters"] = train.max_iters;
  j["train"]["batch"] = train.batch;
  j["train"]["lr"] = format_double(train.sampler_optimizer.lr);
  j["train"]["betas"] = {format_double(train.sampler_optimizer.beta1), format_double(train.sampler_optimizer.beta2)};
  j["train"]["anneal"] = detail::anneal_name(train.anneal.mode);
  j["train"]["beta0"] = format_double(train.anneal.beta0);
  j["train"]["warmup_iters"] = train.anneal.warmup_iters;
  j["train"]["sigma"] = {format_double(train.anneal.sigma_min), format_double(train.anneal.sigma_max)};
  j["train"]["checkpoint_every"] = checkpoint_every;
  j["hmc"] = {format_double(hmc.step_size), hmc.n_leapfrog, hmc.burn_in};
  j["langevin"] = {langevin.levels, format_double(langevin.sigma_max), format_double(langevin.sigma_min),
                   langevin.steps_per_level, format_double(langevin.base_step), format_double(langevin.init_std)};
  j["eval"]["n_samples"] = eval.n_samples;
  j["eval"]["ksd"] = eval.ksd;
  j["eval"]["ksd_samples"] = eval.ksd_samples;
  j["eval"]["bandwidth"] = format_double(eval.ksd_config.bandwidth);
  j["eval"]["ustat"] = eval.ksd_config.estimator == KsdConfig::Estimator::UStat;
  j["eval"]["multi_scale"] = eval.ksd_config.multi_scale;
  std::vector<std::string> scales;
  for (double h : eval.ksd_config.scales) scales.push_back(format_double(h));
  j["eval"]["scales"] = scales;
  j["eval"]["moments"] = eval.moments;
  j["eval"]["ks"] = eval.ks;
  j["eval"]["ks_oracle_samples"] = eval.ks_oracle_samples;
  j["eval"]["coverage_samples"] = eval.coverage_samples;
  j["eval"]["posterior_samples"] = eval.posterior_samples;
  j["eval"]["every"] = eval.every;
  j["eval"]["periodic_samples"] = eval.periodic_samples;
  if (bayes()) {
    j["data"]["path"] = data.path;
    j["data"]["synthetic"] = {data.synthetic_rows, data.synthetic_features};
    j["data"]["train_fraction"] = format_double(data.train_fraction);
    j["data"]["max_rows"] = data.max_rows;
    j["data"]["minibatch"] = data.minibatch;
    j["data"]["seed"] = data.seed;
  }
  return j;
}

}  // namespace nisk
