#pragma once

// Reference MCMC samplers: Hamiltonian Monte Carlo and annealed Langevin dynamics.

#include "nisk/targets.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace nisk {

struct LeapfrogResult {
  Vector x;
  Vector p;
  bool finite = true;
  long nfe = 0;  // score evaluations
};

// L leapfrog steps of size eps for H(x, p) = -log q(x) + |p|^2 / 2.
inline LeapfrogResult leapfrog(const TargetDensity& target, const Vector& x, const Vector& p,
                               double eps, int n_steps) {
  require(n_steps >= 1, "leapfrog needs n_steps >= 1");
  LeapfrogResult r{x, p, true, 0};
  if (eps == 0.0) return r;
  auto grad = [&](const Vector& at) -> std::optional<Vector> {
    if (!at.allFinite()) return std::nullopt;
    ++r.nfe;
    Vector g = target.score(at);
    if (!g.allFinite()) return std::nullopt;
    return g;
  };
  auto g = grad(r.x);
  if (!g) {
    r.finite = false;
    return r;
  }
  r.p += 0.5 * eps * *g;
  for (int i = 0; i < n_steps; ++i) {
    r.x += eps * r.p;
    g = grad(r.x);
    if (!g) {
      r.finite = false;
      return r;
    }
    r.p += (i + 1 == n_steps ? 0.5 : 1.0) * eps * *g;
  }
  return r;
}

struct HmcConfig {
  double step_size = 0.1;
  int n_leapfrog = 10;
  int n_samples = 1000;
  int burn_in = 500;
  std::uint64_t seed = 0;
  std::optional<Vector> init;  // zeros when unset

  void validate() const {
    require(step_size > 0.0, "HMC step size must be positive");
    require(n_leapfrog >= 1, "HMC needs n_leapfrog >= 1");
    require(n_samples >= 0 && burn_in >= 0, "HMC sample counts must be non-negative");
  }
};

struct HmcResult {
  Matrix samples;  // D x n_samples
  double acceptance_rate = 0.0;
  long nfe = 0;
  std::optional<std::string> warning;
};

// One Metropolis-corrected HMC transition. Returns true when accepted.
inline bool hmc_transition(const TargetDensity& target, Vector& x, double eps, int n_steps,
                           Rng& rng, long& nfe) {
  Vector p(x.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = rng.normal();
  const double h0 = -target.log_density(x) + 0.5 * p.squaredNorm();
  const LeapfrogResult prop = leapfrog(target, x, p, eps, n_steps);
  nfe += prop.nfe;
  const double log_u = std::log(rng.uniform());
  if (!prop.finite) return false;
  const double h1 = -target.log_density(prop.x) + 0.5 * prop.p.squaredNorm();
  if (!std::isfinite(h1) || !(log_u < h0 - h1)) return false;
  x = prop.x;
  return true;
}

inline HmcResult hmc_sample(const TargetDensity& target, const HmcConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, 0x686d63);
  Vector x = cfg.init.value_or(Vector::Zero(target.dim()));
  require_shape(x.size() == target.dim(), "HMC init has wrong dimension");
  HmcResult out;
  out.samples.resize(target.dim(), cfg.n_samples);
  long accepted = 0;
  const long total = static_cast<long>(cfg.burn_in) + cfg.n_samples;
  for (long t = 0; t < total; ++t) {
    if (hmc_transition(target, x, cfg.step_size, cfg.n_leapfrog, rng, out.nfe)) ++accepted;
    if (t >= cfg.burn_in) out.samples.col(t - cfg.burn_in) = x;
  }
  out.acceptance_rate = total > 0 ? static_cast<double>(accepted) / static_cast<double>(total) : 0.0;
  if (out.acceptance_rate < 0.05)
    out.warning = "HMC acceptance rate " + std::to_string(out.acceptance_rate) +
                  " below 0.05; step size likely mistuned";
  return out;
}

struct LangevinConfig {
  std::vector<double> noise_levels;  // strictly decreasing
  std::vector<double> step_sizes;    // one per level
  int steps_per_level = 20;
  int n_chains = 100;
  double init_std = 1.0;
  std::uint64_t seed = 0;

  // Geometric levels from sigma_max to sigma_min; step_l = base_step * sigma_l / sigma_min.
  static LangevinConfig geometric(int levels = 10, double sigma_max = 3.0, double sigma_min = 0.3,
                                  int steps_per_level = 20, double base_step = 0.01,
                                  int n_chains = 100, std::uint64_t seed = 0) {
    require(levels >= 1, "need at least one noise level");
    require(sigma_max >= sigma_min && sigma_min > 0.0, "noise range must satisfy 0 < min <= max");
    LangevinConfig cfg;
    for (int l = 0; l < levels; ++l) {
      const double frac = levels == 1 ? 1.0 : static_cast<double>(l) / (levels - 1);
      const double sigma = levels == 1 ? sigma_min : sigma_max * std::pow(sigma_min / sigma_max, frac);
      cfg.noise_levels.push_back(sigma);
      cfg.step_sizes.push_back(base_step * sigma / sigma_min);
    }
    cfg.steps_per_level = steps_per_level;
    cfg.n_chains = n_chains;
    cfg.seed = seed;
    return cfg;
  }

  void validate() const {
    require(!noise_levels.empty(), "Langevin needs at least one noise level");
    require(step_sizes.size() == noise_levels.size(), "one step size per noise level required");
    for (std::size_t i = 0; i < noise_levels.size(); ++i) {
      require(noise_levels[i] > 0.0, "noise levels must be positive");
      require(step_sizes[i] > 0.0, "Langevin step sizes must be positive");
      if (i > 0) require(noise_levels[i] < noise_levels[i - 1], "noise levels must strictly decrease");
    }
    require(steps_per_level >= 1, "steps_per_level must be >= 1");
    require(n_chains >= 1, "n_chains must be >= 1");
  }
};

struct LangevinResult {
  Matrix samples;          // D x n_chains
  long nfe_total = 0;      // gradient evaluations over all chains
  long nfe_per_sample = 0; // gradient evaluations per chain
};

// x <- x + (eta / 2) grad log q_sigma(x) + sqrt(eta) eps at each level, sigma descending.
inline LangevinResult annealed_langevin(const AnalyticEnergy& energy, const LangevinConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, 0x6c616e);
  LangevinResult out;
  out.samples = cfg.init_std * rng.normal_matrix(energy.dim(), cfg.n_chains);
  for (int c = 0; c < cfg.n_chains; ++c) {
    Vector x = out.samples.col(c);
    long nfe = 0;
    for (std::size_t l = 0; l < cfg.noise_levels.size(); ++l) {
      const double sigma = cfg.noise_levels[l];
      const double eta = cfg.step_sizes[l];
      const double noise_scale = std::sqrt(eta);
      for (int k = 0; k < cfg.steps_per_level; ++k) {
        const Vector g = energy.score(x, sigma);
        ++nfe;
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += 0.5 * eta * g(i) + noise_scale * rng.normal();
      }
    }
    out.samples.col(c) = x;
    out.nfe_total += nfe;
    out.nfe_per_sample = nfe;
  }
  return out;
}

}  // namespace nisk
