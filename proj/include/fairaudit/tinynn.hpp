#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairaudit/linalg.hpp"
#include "fairaudit/rng.hpp"

namespace fairaudit {

/// Feed-forward binary classifier: ReLU hidden layers, two output logits,
/// softmax probabilities. An optional attribute head hangs off the last
/// hidden layer and predicts the subgroup; it exists for adversarial
/// debiasing, where the backbone receives the reversed attribute gradient.
struct Mlp {
  std::vector<Matrix> weights;  // weights[l]: fan_out x fan_in
  std::vector<Vector> biases;   // biases[l]: fan_out
  bool has_attr_head = false;
  Matrix attr_weight;  // 2 x last_hidden
  Vector attr_bias;    // 2
  std::string arch_tag = "mlp-relu-softmax";

  /// Glorot-uniform init, bias zero. `hidden` lists the hidden widths; the
  /// output layer is always two logits.
  static Mlp make(Index input_dim, const std::vector<Index>& hidden,
                  bool attr_head, std::uint64_t seed);

  Index input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  Index n_layers() const { return static_cast<Index>(weights.size()); }
  Index n_parameters() const;

  void validate() const;  // shapes chain, parameters finite
};

struct PredScores {
  Vector p_pos;     // positive-class probability, in [0, 1]
  IntVector label;  // 1[p_pos > 0.5]
};

struct ForwardCache {
  std::vector<Matrix> activations;  // activations[0] = X, then post-ReLU layers
  Matrix logits;                    // n x 2
  Matrix probs;                     // n x 2, rows sum to 1
  Matrix attr_logits;               // n x 2 when the head exists
  Matrix attr_probs;
};

ForwardCache forward_cached(const Mlp& model, const Matrix& features);
PredScores forward(const Mlp& model, const Matrix& features);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  Matrix attr_weight;
  Vector attr_bias;

  static Gradients zeros_like(const Mlp& model);
  double squared_norm() const;
  void add_scaled(const Gradients& other, double factor);
  void scale(double factor);
};

struct BackwardOptions {
  /// Per-example weights; empty means all ones. The objective is the mean of
  /// w_i * CE_i over the batch, so zero weights give a zero gradient.
  Vector example_weights;
  /// Attribute path: when lambda_adv participation is requested, `groups`
  /// supplies the subgroup labels. Head parameters receive the true
  /// attribute-loss gradient; the backbone receives -lambda_adv times it.
  const IntVector* groups = nullptr;
  double lambda_adv = 0.0;
  bool train_attr_head = false;
  /// Extra gradient on the positive-class probability (constraint penalty),
  /// added to the target path scaled by `p_pos_grad_scale`.
  const Vector* p_pos_grad = nullptr;
  double p_pos_grad_scale = 1.0;
  /// Disable the target cross-entropy path (isolates the attribute path for
  /// gradient checks).
  bool include_target_loss = true;
  int batch_index = -1;  // reported in numeric errors
};

struct BackwardResult {
  Gradients grads;
  double loss = 0.0;  // mean weighted target cross-entropy
};

/// Gradient of the mean weighted cross-entropy (plus optional attribute and
/// penalty paths) with respect to every parameter. Soft targets are allowed:
/// `soft_targets` is n x 2 and each row may be any convex combination.
BackwardResult backward(const Mlp& model, const ForwardCache& cache,
                        const Matrix& soft_targets,
                        const BackwardOptions& opts = {});

enum class Objective { TargetLoss, AttributeLoss };

/// Forward-only objective evaluation; the finite-difference side of the
/// gradient check, independent of backward().
double loss_only(const Mlp& model, const Matrix& features,
                 const Matrix& soft_targets, const Vector& example_weights,
                 Objective objective, const IntVector* groups = nullptr);

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  Vector per_example_weights;  // size 0 = unweighted

  void validate() const;
};

/// Aggregates per-example gradients into the step gradient. Installing one
/// switches training to per-example backward passes (the DP-SGD path).
using GradAggregator =
    std::function<Gradients(std::vector<Gradients>& per_example, Rng& rng)>;

/// Intervention hooks, filled in by the fairness module. All state lives in
/// the closures; training only calls them.
struct TrainHooks {
  /// Per-epoch training-index plan (resampling). Default: identity.
  std::function<std::vector<Index>(int epoch, Rng& rng)> epoch_indices;
  /// Per-batch transform (mixup): may replace features, soft targets, groups
  /// and weights wholesale.
  std::function<void(Matrix& x, Matrix& y_soft, IntVector& g, Vector& w,
                     Rng& rng)>
      batch_transform;
  /// Per-batch penalty on p_pos; returns d(penalty)/d(p_pos) and sets value.
  std::function<Vector(const Vector& p_pos, const IntVector& y,
                       const IntVector& g, double& value)>
      prob_penalty;
  double penalty_scale = 0.0;  // lambda_f
  double lambda_adv = 0.0;     // adversarial reversal strength, 0 = off
  bool train_attr_head = false;
  GradAggregator grad_aggregator;  // set by the DP defense
};

struct TrainResult {
  std::vector<double> loss_history;  // one mean epoch loss per epoch
};

/// Seeded mini-batch SGD with momentum. Identical (data, config, seed) give
/// bit-identical parameters.
TrainResult train(Mlp& model, const Matrix& features, const IntVector& target,
                  const IntVector& group, const TrainConfig& cfg,
                  const TrainHooks* hooks = nullptr);

/// Central finite differences (step h) against backward() over every
/// parameter; returns the max relative error, |a - n| / max(1, |a|, |n|).
double grad_check(const Mlp& model, const Matrix& features,
                  const Matrix& soft_targets, const Vector& example_weights,
                  double h = 1e-4);

/// A random (model, batch) pair with pre-activations nudged away from the
/// ReLU kink, then grad_check on it.
double grad_check_random(std::uint64_t seed);

nlohmann::json mlp_to_json(const Mlp& model);
Mlp mlp_from_json(const nlohmann::json& j);

}  // namespace fairaudit
