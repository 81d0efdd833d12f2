#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairaudit/dataset.hpp"
#include "fairaudit/defense.hpp"
#include "fairaudit/fairness.hpp"
#include "fairaudit/metrics.hpp"
#include "fairaudit/tinynn.hpp"

namespace fairaudit {

enum class ModelKind { Bias, Fair };
enum class AttackMode { Score, FdScore };

std::string to_string(ModelKind kind);

/// A biased classifier and the fairness-intervened model trained on the same
/// member set.
struct ModelPair {
  Mlp bias;
  Mlp fair;
  bool has_fair = false;

  const Mlp& get(ModelKind kind) const;
};

struct Shadow {
  ModelPair models;
  std::vector<std::int64_t> in_ids;  // sorted

  bool contains(std::int64_t id) const;
};

struct ShadowEnsemble {
  std::vector<Shadow> shadows;
  Intervention intervention;
  std::uint64_t master_seed = 0;
};

/// Clamped logit, the scaling function applied to confidence scores before
/// Gaussian modeling: ln(p / (1 - p)) with p clamped to [1e-6, 1 - 1e-6].
double logit_scale(double p);

struct PairTrainOptions {
  bool warm_start = false;  // fair starts from the biased parameters
  const DpConfig* dp = nullptr;
};

/// Trains the biased model, then the fair counterpart with the intervention
/// on the same rows. With DP configured, both train on the clipped-noisy
/// gradient path.
ModelPair train_model_pair(const Dataset& train_data, const TrainConfig& cfg,
                           const std::vector<Index>& hidden,
                           const Intervention& intervention, std::uint64_t seed,
                           const PairTrainOptions& opts = {});

/// Each shadow trains a model pair on an independent random half of the
/// pool, with the same intervention the target used.
ShadowEnsemble train_shadows(const Dataset& pool, int n_shadows,
                             const TrainConfig& cfg,
                             const std::vector<Index>& hidden,
                             const Intervention& intervention,
                             std::uint64_t seed,
                             const PairTrainOptions& opts = {});

/// Attack-model inputs. Score mode: (p_pos, correct). FD mode:
/// (p_pos_bias, correct_bias, p_pos_fair, correct_fair). With
/// `withhold_scores` the confidence is replaced by the predicted label.
Matrix attack_features(const Mlp& model, const Matrix& features,
                       const IntVector& target, bool withhold_scores = false);
Matrix attack_features(const ModelPair& pair, const Matrix& features,
                       const IntVector& target, bool withhold_scores = false);

struct MembershipScores {
  std::vector<std::int64_t> ids;
  Vector raw;          // attack-model confidence or log-likelihood ratio
  IntVector decision;  // 1[raw > tau]
  double tau = 0.5;
};

MembershipScores make_membership_scores(std::vector<std::int64_t> ids,
                                        Vector raw, double tau);

struct ScoreAttackConfig {
  TrainConfig attack_train;
  bool withhold_scores = false;
  double tau = 0.5;
};

/// Trains the membership classifier on shadow IN/OUT features and scores the
/// audit examples against the target model(s). FD mode uses the paired
/// feature and one extra hidden layer.
MembershipScores score_attack(const ShadowEnsemble& ensemble,
                              const Dataset& pool, const ModelPair& target,
                              ModelKind which, AttackMode mode,
                              const Dataset& audit,
                              const ScoreAttackConfig& cfg);

/// Returns the trained attack model as well; the audit CLI and degradation
/// checks probe its decision surface directly.
struct ScoreAttackResult {
  MembershipScores scores;
  Mlp attack_model;
};

ScoreAttackResult score_attack_full(const ShadowEnsemble& ensemble,
                                    const Dataset& pool, const ModelPair& target,
                                    ModelKind which, AttackMode mode,
                                    const Dataset& audit,
                                    const ScoreAttackConfig& cfg);

/// Per-example Gaussian statistics of phi(shadow prediction) over the IN and
/// OUT shadow populations.
struct LiraStats {
  std::vector<std::int64_t> ids;
  Vector mu_in, sigma_in, mu_out, sigma_out;
  std::vector<std::uint8_t> offline_fallback;  // per example
  bool offline_mode = false;
};

struct LiraOptions {
  bool offline = false;
  double sigma_floor = 1e-3;
  /// Below this ensemble size the variance is pooled over all examples.
  int global_variance_below = 16;
};

LiraStats lira_fit(const ShadowEnsemble& ensemble, const Dataset& audit,
                   ModelKind which, const LiraOptions& opts = {});

/// log N(obs; mu_in, sigma_in) - log N(obs; mu_out, sigma_out).
double lira_log_ratio(double mu_in, double sigma_in, double mu_out,
                      double sigma_out, double obs);

/// Vectorized inference; offline entries score (obs - mu_out) / sigma_out.
Vector lira_infer(const LiraStats& stats, const Vector& observed);

MembershipScores lira_attack(const ShadowEnsemble& ensemble,
                             const ModelPair& target, ModelKind which,
                             const Dataset& audit, const LiraOptions& opts = {});

/// Bivariate statistics over (phi(p_bias), phi(p_fair)) shadow predictions.
struct FdLiraStats {
  std::vector<std::int64_t> ids;
  Matrix mu_in, mu_out;  // n x 2
  std::vector<Eigen::Matrix2d> cov_in, cov_out;
  std::vector<std::uint8_t> offline_fallback;
};

struct FdLiraOptions {
  bool offline = false;
  bool shared_covariance = false;  // pool IN and OUT covariance
  double ridge = 1e-6;
  int global_covariance_below = 16;
};

FdLiraStats fd_lira_fit(const ShadowEnsemble& ensemble, const Dataset& audit,
                        const FdLiraOptions& opts = {});

double fd_lira_log_ratio(const Eigen::Vector2d& mu_in,
                         const Eigen::Matrix2d& cov_in,
                         const Eigen::Vector2d& mu_out,
                         const Eigen::Matrix2d& cov_out,
                         const Eigen::Vector2d& obs);

Vector fd_lira_infer(const FdLiraStats& stats, const Matrix& observed);

MembershipScores fd_lira_attack(const ShadowEnsemble& ensemble,
                                const ModelPair& target, const Dataset& audit,
                                const FdLiraOptions& opts = {});

struct AttackOutcome {
  double acc_a = 0.0;
  double auc_a = 0.0;
  double tpr_at_low_fpr = 0.0;
  RocCurve roc;
};

/// Accuracy at the attack's tau plus ROC metrics at the given low-FPR target.
AttackOutcome evaluate_attack(const MembershipScores& scores,
                              const IntVector& truth_member,
                              double fpr_target = 0.001);

}  // namespace fairaudit
