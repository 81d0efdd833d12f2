#pragma once

#include <cstdint>
#include <vector>

#include "fairaudit/tinynn.hpp"

namespace fairaudit {

struct DpConfig {
  double clip_norm = 1.0;        // C > 0
  double noise_multiplier = 0.0; // sigma >= 0
  double delta = 1e-5;           // in (0, 1)
  double sampling_rate = 0.0;    // q = batch_size / n_members, set by the trainer

  void validate() const;
};

/// Scales each example's full gradient vector by min(1, C / ||g||_2).
void clip_per_example(std::vector<Gradients>& grads, double clip_norm);

/// Mean of the clipped gradients plus N(0, (sigma C / B)^2) per coordinate.
Gradients noisy_mean(const std::vector<Gradients>& clipped,
                     double noise_multiplier, double clip_norm, Rng& rng);

/// The parameter update lr * noisy_mean(...). sigma = 0 reduces exactly to a
/// clipped SGD step.
Gradients noisy_step(const std::vector<Gradients>& clipped,
                     double noise_multiplier, double clip_norm,
                     double learning_rate, Rng& rng);

/// Aggregator for tinynn::train that clips per-example gradients and
/// perturbs their mean. Installing it switches training to per-example
/// backward passes.
GradAggregator make_dp_aggregator(double clip_norm, double noise_multiplier);

/// Privacy budget from zero-concentrated-DP composition:
/// rho = steps q^2 / (2 sigma^2), epsilon = rho + 2 sqrt(rho ln(1/delta)).
/// An upper-bound heuristic, not a tight subsampled-Gaussian accountant.
/// sigma = 0 returns +infinity.
double epsilon_estimate(const DpConfig& cfg, std::int64_t steps);

/// Smallest noise multiplier whose estimated epsilon is at most the target
/// (bisection; epsilon is monotone decreasing in sigma).
double sigma_for_epsilon(double target_epsilon, double delta,
                         double sampling_rate, std::int64_t steps);

}  // namespace fairaudit
