#include "fairaudit/defense.hpp"

#include <cmath>
#include <limits>

#include "fairaudit/errors.hpp"

namespace fairaudit {

void DpConfig::validate() const {
  if (!(clip_norm > 0.0)) throw ConfigError("dp clip_norm must be positive");
  if (noise_multiplier < 0.0)
    throw ConfigError("dp noise_multiplier must be non-negative");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("dp delta must lie in (0, 1)");
}

void clip_per_example(std::vector<Gradients>& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  for (auto& g : grads) {
    const double norm = std::sqrt(g.squared_norm());
    if (norm > clip_norm) g.scale(clip_norm / norm);
  }
}

Gradients noisy_mean(const std::vector<Gradients>& clipped,
                     double noise_multiplier, double clip_norm, Rng& rng) {
  if (clipped.empty()) throw ConfigError("noisy mean of an empty batch");
  Gradients mean = clipped.front();
  for (std::size_t i = 1; i < clipped.size(); ++i)
    mean.add_scaled(clipped[i], 1.0);
  const double inv_b = 1.0 / static_cast<double>(clipped.size());
  mean.scale(inv_b);
  if (noise_multiplier > 0.0) {
    const double stdev = noise_multiplier * clip_norm * inv_b;
    auto perturb = [&](auto& block) {
      for (Index r = 0; r < block.rows(); ++r)
        for (Index c = 0; c < block.cols(); ++c)
          block(r, c) += stdev * rng.normal();
    };
    for (auto& w : mean.weights) perturb(w);
    for (auto& b : mean.biases) perturb(b);
    if (mean.attr_weight.size()) {
      perturb(mean.attr_weight);
      perturb(mean.attr_bias);
    }
  }
  return mean;
}

Gradients noisy_step(const std::vector<Gradients>& clipped,
                     double noise_multiplier, double clip_norm,
                     double learning_rate, Rng& rng) {
  Gradients step = noisy_mean(clipped, noise_multiplier, clip_norm, rng);
  step.scale(learning_rate);
  return step;
}

GradAggregator make_dp_aggregator(double clip_norm, double noise_multiplier) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip norm must be positive");
  if (noise_multiplier < 0.0)
    throw ConfigError("noise multiplier must be non-negative");
  return [clip_norm, noise_multiplier](std::vector<Gradients>& per_example,
                                       Rng& rng) {
    clip_per_example(per_example, clip_norm);
    return noisy_mean(per_example, noise_multiplier, clip_norm, rng);
  };
}

double epsilon_estimate(const DpConfig& cfg, std::int64_t steps) {
  cfg.validate();
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (cfg.noise_multiplier == 0.0)
    return std::numeric_limits<double>::infinity();
  if (!(cfg.sampling_rate > 0.0 && cfg.sampling_rate <= 1.0))
    throw ConfigError("dp sampling_rate must lie in (0, 1]");
  const double rho = static_cast<double>(steps) * cfg.sampling_rate *
                     cfg.sampling_rate /
                     (2.0 * cfg.noise_multiplier * cfg.noise_multiplier);
  return rho + 2.0 * std::sqrt(rho * std::log(1.0 / cfg.delta));
}

double sigma_for_epsilon(double target_epsilon, double delta,
                         double sampling_rate, std::int64_t steps) {
  if (!(target_epsilon > 0.0)) throw ConfigError("target epsilon must be positive");
  DpConfig cfg;
  cfg.delta = delta;
  cfg.sampling_rate = sampling_rate;
  double lo = 1e-4, hi = 1e6;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    cfg.noise_multiplier = mid;
    if (epsilon_estimate(cfg, steps) > target_epsilon)
      lo = mid;
    else
      hi = mid;
  }
  return hi;
}

}  // namespace fairaudit
