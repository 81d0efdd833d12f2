#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairaudit/linalg.hpp"
#include "fairaudit/tinynn.hpp"

namespace fairaudit {

enum class InterventionKind { None, Mixup, Reweight, Resample, Constraint, Adversarial };

std::string to_string(InterventionKind kind);
InterventionKind intervention_kind_from_string(const std::string& s);

struct Intervention {
  InterventionKind kind = InterventionKind::None;
  double mixup_alpha = 1.0;  // Beta(alpha, alpha) parameter
  // Smoothness weight of the gradient-path mixup variant. Only 0 is
  // supported; plain input mixup is what trains here.
  double mixup_gamma = 0.0;
  double lambda_f = 2.0;    // constraint penalty weight
  double lambda_adv = 0.3;  // adversarial reversal strength

  void validate() const;
};

/// Pairwise interpolation of two equal-sized batches drawn from the two
/// subgroups: lambda * g0 + (1 - lambda) * g1, applied to features and soft
/// target rows alike.
struct MixedBatch {
  Matrix features;
  Matrix soft_targets;
};

MixedBatch mixup_batch(const Matrix& x_g0, const Matrix& y_g0,
                       const Matrix& x_g1, const Matrix& y_g1, double lambda);

/// Inverse joint-frequency weights, w(i) = N / (4 N_cell(i)): every
/// (group, target) cell carries the same total weight N/4.
Vector reweight(const IntVector& target, const IntVector& group);

/// Index multiset with every (group, target) cell oversampled (with
/// replacement) to the majority cell size; order shuffled, deterministic per
/// seed.
std::vector<Index> resample(const IntVector& target, const IntVector& group,
                            std::uint64_t seed);

struct DeoPenalty {
  double value = 0.0;
  Vector grad;  // d(value) / d(probs)
  bool degenerate = false;  // some non-empty class was missing a group
};

/// Differentiable equalized-odds surrogate: the squared gap of
/// group-conditional mean scores, summed over true classes.
DeoPenalty deo_surrogate_penalty(const Vector& probs, const IntVector& targets,
                                 const IntVector& groups);

/// Bundle handed to tinynn::train. The hooks may borrow the training data
/// passed to plan_intervention; keep it alive for the duration of training.
struct InterventionPlan {
  TrainHooks hooks;
  Vector per_example_weights;  // size 0 unless Reweight
};

/// Gradient-reversal hook: the head learns to predict the subgroup from the
/// last hidden layer while the backbone receives -lambda_adv times the
/// attribute-loss gradient.
InterventionPlan attach_adversarial(const Mlp& model, double lambda_adv);

InterventionPlan plan_intervention(const Intervention& intervention,
                                   const Matrix& features,
                                   const IntVector& target,
                                   const IntVector& group, std::uint64_t seed,
                                   const Mlp* model = nullptr);

}  // namespace fairaudit
