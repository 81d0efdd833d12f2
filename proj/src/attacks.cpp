#include "fairaudit/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "fairaudit/errors.hpp"

namespace fairaudit {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::Bias ? "bias" : "fair";
}

const Mlp& ModelPair::get(ModelKind kind) const {
  if (kind == ModelKind::Bias) return bias;
  if (!has_fair) throw AttackSetupError("no fair model in this pair");
  return fair;
}

bool Shadow::contains(std::int64_t id) const {
  return std::binary_search(in_ids.begin(), in_ids.end(), id);
}

double logit_scale(double p) {
  const double clamped = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(clamped / (1.0 - clamped));
}

ModelPair train_model_pair(const Dataset& train_data, const TrainConfig& cfg,
                           const std::vector<Index>& hidden,
                           const Intervention& intervention, std::uint64_t seed,
                           const PairTrainOptions& opts) {
  const bool wants_fair = intervention.kind != InterventionKind::None;
  const bool attr_head = intervention.kind == InterventionKind::Adversarial;

  auto setup_dp = [&](TrainHooks& hooks, TrainConfig& c) {
    if (!opts.dp) return;
    opts.dp->validate();
    hooks.grad_aggregator =
        make_dp_aggregator(opts.dp->clip_norm, opts.dp->noise_multiplier);
    (void)c;
  };

  ModelPair pair;
  pair.bias = Mlp::make(train_data.n_features(), hidden, false,
                        derive_seed(seed, "bias_init", 0));
  {
    TrainConfig c = cfg;
    c.seed = derive_seed(seed, "bias_train", 0);
    TrainHooks hooks;
    setup_dp(hooks, c);
    train(pair.bias, train_data.features, train_data.target, train_data.group,
          c, &hooks);
  }
  if (!wants_fair) return pair;

  if (opts.warm_start && !attr_head) {
    pair.fair = pair.bias;
  } else {
    pair.fair = Mlp::make(train_data.n_features(), hidden, attr_head,
                          derive_seed(seed, "fair_init", 0));
  }
  {
    TrainConfig c = cfg;
    c.seed = derive_seed(seed, "fair_train", 0);
    InterventionPlan plan =
        plan_intervention(intervention, train_data.features, train_data.target,
                          train_data.group, c.seed, &pair.fair);
    if (plan.per_example_weights.size())
      c.per_example_weights = plan.per_example_weights;
    setup_dp(plan.hooks, c);
    train(pair.fair, train_data.features, train_data.target, train_data.group,
          c, &plan.hooks);
  }
  pair.has_fair = true;
  return pair;
}

ShadowEnsemble train_shadows(const Dataset& pool, int n_shadows,
                             const TrainConfig& cfg,
                             const std::vector<Index>& hidden,
                             const Intervention& intervention,
                             std::uint64_t seed, const PairTrainOptions& opts) {
  if (n_shadows < 2) throw AttackSetupError("need at least 2 shadow models");
  if (pool.n_examples() < 4)
    throw AttackSetupError("shadow pool too small: " +
                           std::to_string(pool.n_examples()));

  ShadowEnsemble ensemble;
  ensemble.intervention = intervention;
  ensemble.master_seed = seed;
  for (int s = 0; s < n_shadows; ++s) {
    std::vector<std::int64_t> ids = pool.ids;
    Rng rng(derive_seed(seed, "shadow_split", static_cast<std::uint64_t>(s)));
    rng.shuffle(ids);
    ids.resize(ids.size() / 2);
    std::sort(ids.begin(), ids.end());

    Shadow shadow;
    shadow.in_ids = ids;
    const Dataset half = pool.subset(ids);
    try {
      shadow.models = train_model_pair(
          half, cfg, hidden, intervention,
          derive_seed(seed, "shadow_train", static_cast<std::uint64_t>(s)), opts);
    } catch (const TrainingError& e) {
      throw AttackSetupError("shadow " + std::to_string(s) +
                             " failed to train: " + e.what());
    }
    ensemble.shadows.push_back(std::move(shadow));
  }
  return ensemble;
}

Matrix attack_features(const Mlp& model, const Matrix& features,
                       const IntVector& target, bool withhold_scores) {
  const PredScores scores = forward(model, features);
  Matrix out(features.rows(), 2);
  for (Index i = 0; i < features.rows(); ++i) {
    out(i, 0) = withhold_scores ? static_cast<double>(scores.label[i])
                                : scores.p_pos[i];
    out(i, 1) = scores.label[i] == target[i] ? 1.0 : 0.0;
  }
  return out;
}

Matrix attack_features(const ModelPair& pair, const Matrix& features,
                       const IntVector& target, bool withhold_scores) {
  const Matrix fb = attack_features(pair.get(ModelKind::Bias), features, target,
                                    withhold_scores);
  const Matrix ff = attack_features(pair.get(ModelKind::Fair), features, target,
                                    withhold_scores);
  Matrix out(features.rows(), 4);
  out << fb, ff;
  return out;
}

MembershipScores make_membership_scores(std::vector<std::int64_t> ids,
                                        Vector raw, double tau) {
  MembershipScores s;
  s.ids = std::move(ids);
  s.raw = std::move(raw);
  s.tau = tau;
  s.decision.resize(s.raw.size());
  for (Index i = 0; i < s.raw.size(); ++i) s.decision[i] = s.raw[i] > tau ? 1 : 0;
  return s;
}

ScoreAttackResult score_attack_full(const ShadowEnsemble& ensemble,
                                    const Dataset& pool, const ModelPair& target,
                                    ModelKind which, AttackMode mode,
                                    const Dataset& audit,
                                    const ScoreAttackConfig& cfg) {
  if (ensemble.shadows.empty()) throw AttackSetupError("empty shadow ensemble");

  // Shadow IN/OUT features over the pool form the attack training set.
  const Index per_shadow = pool.n_examples();
  const Index width = mode == AttackMode::FdScore ? 4 : 2;
  Matrix train_x(per_shadow * static_cast<Index>(ensemble.shadows.size()), width);
  IntVector train_y(train_x.rows());
  Index row = 0;
  for (const Shadow& shadow : ensemble.shadows) {
    const Matrix feats =
        mode == AttackMode::FdScore
            ? attack_features(shadow.models, pool.features, pool.target,
                              cfg.withhold_scores)
            : attack_features(shadow.models.get(which), pool.features,
                              pool.target, cfg.withhold_scores);
    for (Index i = 0; i < per_shadow; ++i, ++row) {
      train_x.row(row) = feats.row(i);
      train_y[row] = shadow.contains(pool.ids[i]) ? 1 : 0;
    }
  }
  if ((train_y.array() == 1).all() || (train_y.array() == 0).all())
    throw AttackSetupError("degenerate attack labels: all IN or all OUT");

  // The FD attack net gets one extra encoding layer over the naive one.
  std::vector<Index> hidden = mode == AttackMode::FdScore
                                  ? std::vector<Index>{16, 16, 8}
                                  : std::vector<Index>{16, 8};
  const std::uint64_t seed =
      derive_seed(ensemble.master_seed,
                  mode == AttackMode::FdScore ? "attack_fd_score" : "attack_score",
                  which == ModelKind::Bias ? 0 : 1);
  ScoreAttackResult result;
  result.attack_model = Mlp::make(width, hidden, false, seed);
  TrainConfig tc = cfg.attack_train;
  tc.seed = derive_seed(seed, "attack_train", 0);
  const IntVector groups = IntVector::Zero(train_y.size());
  train(result.attack_model, train_x, train_y, groups, tc);

  const Matrix audit_feats =
      mode == AttackMode::FdScore
          ? attack_features(target, audit.features, audit.target,
                            cfg.withhold_scores)
          : attack_features(target.get(which), audit.features, audit.target,
                            cfg.withhold_scores);
  const PredScores member_scores = forward(result.attack_model, audit_feats);
  result.scores =
      make_membership_scores(audit.ids, member_scores.p_pos, cfg.tau);
  return result;
}

MembershipScores score_attack(const ShadowEnsemble& ensemble,
                              const Dataset& pool, const ModelPair& target,
                              ModelKind which, AttackMode mode,
                              const Dataset& audit,
                              const ScoreAttackConfig& cfg) {
  return score_attack_full(ensemble, pool, target, which, mode, audit, cfg)
      .scores;
}

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // sample variance (n - 1)
  int n = 0;
};

Moments moments_of(const std::vector<double>& values) {
  Moments m;
  m.n = static_cast<int>(values.size());
  if (m.n == 0) return m;
  for (double v : values) m.mean += v;
  m.mean /= m.n;
  if (m.n >= 2) {
    for (double v : values) m.var += (v - m.mean) * (v - m.mean);
    m.var /= (m.n - 1);
  }
  return m;
}

}  // namespace

LiraStats lira_fit(const ShadowEnsemble& ensemble, const Dataset& audit,
                   ModelKind which, const LiraOptions& opts) {
  if (ensemble.shadows.empty()) throw AttackSetupError("empty shadow ensemble");
  const Index n = audit.n_examples();
  const int n_shadows = static_cast<int>(ensemble.shadows.size());

  // phi(shadow prediction) per (shadow, example).
  Matrix phi(n_shadows, n);
  for (int s = 0; s < n_shadows; ++s) {
    const PredScores p =
        forward(ensemble.shadows[s].models.get(which), audit.features);
    for (Index i = 0; i < n; ++i) phi(s, i) = logit_scale(p.p_pos[i]);
  }

  LiraStats stats;
  stats.ids = audit.ids;
  stats.offline_mode = opts.offline;
  stats.mu_in.resize(n);
  stats.sigma_in.resize(n);
  stats.mu_out.resize(n);
  stats.sigma_out.resize(n);
  stats.offline_fallback.assign(n, 0);

  const bool pool_variance = n_shadows < opts.global_variance_below;
  double pooled_in_ss = 0.0, pooled_out_ss = 0.0;
  std::int64_t pooled_in_df = 0, pooled_out_df = 0;

  std::vector<Moments> in_m(n), out_m(n);
  for (Index i = 0; i < n; ++i) {
    std::vector<double> in_vals, out_vals;
    for (int s = 0; s < n_shadows; ++s) {
      if (!opts.offline && ensemble.shadows[s].contains(audit.ids[i]))
        in_vals.push_back(phi(s, i));
      else
        out_vals.push_back(phi(s, i));
    }
    in_m[i] = moments_of(in_vals);
    out_m[i] = moments_of(out_vals);
    if (in_m[i].n >= 2) {
      pooled_in_ss += in_m[i].var * (in_m[i].n - 1);
      pooled_in_df += in_m[i].n - 1;
    }
    if (out_m[i].n >= 2) {
      pooled_out_ss += out_m[i].var * (out_m[i].n - 1);
      pooled_out_df += out_m[i].n - 1;
    }
  }
  const double global_in_sd =
      pooled_in_df > 0 ? std::sqrt(pooled_in_ss / pooled_in_df) : 0.0;
  const double global_out_sd =
      pooled_out_df > 0 ? std::sqrt(pooled_out_ss / pooled_out_df) : 0.0;

  for (Index i = 0; i < n; ++i) {
    const bool offline_example =
        opts.offline || in_m[i].n < 2 || out_m[i].n < 2;
    if (offline_example && !opts.offline) stats.offline_fallback[i] = 1;

    stats.mu_out[i] = out_m[i].mean;
    double out_sd = pool_variance ? global_out_sd : std::sqrt(out_m[i].var);
    stats.sigma_out[i] = std::max(out_sd, opts.sigma_floor);
    if (offline_example) {
      stats.mu_in[i] = 0.0;
      stats.sigma_in[i] = opts.sigma_floor;
    } else {
      stats.mu_in[i] = in_m[i].mean;
      double in_sd = pool_variance ? global_in_sd : std::sqrt(in_m[i].var);
      stats.sigma_in[i] = std::max(in_sd, opts.sigma_floor);
    }
  }
  return stats;
}

double lira_log_ratio(double mu_in, double sigma_in, double mu_out,
                      double sigma_out, double obs) {
  const double zi = (obs - mu_in) / sigma_in;
  const double zo = (obs - mu_out) / sigma_out;
  return (-std::log(sigma_in) - 0.5 * zi * zi) -
         (-std::log(sigma_out) - 0.5 * zo * zo);
}

Vector lira_infer(const LiraStats& stats, const Vector& observed) {
  if (observed.size() != static_cast<Index>(stats.ids.size()))
    throw DimensionError("observation count disagrees with fitted statistics");
  Vector out(observed.size());
  for (Index i = 0; i < observed.size(); ++i) {
    const bool one_sided = stats.offline_mode || stats.offline_fallback[i];
    out[i] = one_sided
                 ? (observed[i] - stats.mu_out[i]) / stats.sigma_out[i]
                 : lira_log_ratio(stats.mu_in[i], stats.sigma_in[i],
                                  stats.mu_out[i], stats.sigma_out[i],
                                  observed[i]);
  }
  return out;
}

MembershipScores lira_attack(const ShadowEnsemble& ensemble,
                             const ModelPair& target, ModelKind which,
                             const Dataset& audit, const LiraOptions& opts) {
  const LiraStats stats = lira_fit(ensemble, audit, which, opts);
  const PredScores p = forward(target.get(which), audit.features);
  Vector observed(audit.n_examples());
  for (Index i = 0; i < observed.size(); ++i)
    observed[i] = logit_scale(p.p_pos[i]);
  return make_membership_scores(audit.ids, lira_infer(stats, observed), 0.0);
}

FdLiraStats fd_lira_fit(const ShadowEnsemble& ensemble, const Dataset& audit,
                        const FdLiraOptions& opts) {
  if (ensemble.shadows.empty()) throw AttackSetupError("empty shadow ensemble");
  const Index n = audit.n_examples();
  const int n_shadows = static_cast<int>(ensemble.shadows.size());

  // (phi(p_bias), phi(p_fair)) per (shadow, example).
  std::vector<Matrix> phi(n_shadows);
  for (int s = 0; s < n_shadows; ++s) {
    const PredScores pb =
        forward(ensemble.shadows[s].models.get(ModelKind::Bias), audit.features);
    const PredScores pf =
        forward(ensemble.shadows[s].models.get(ModelKind::Fair), audit.features);
    phi[s].resize(n, 2);
    for (Index i = 0; i < n; ++i) {
      phi[s](i, 0) = logit_scale(pb.p_pos[i]);
      phi[s](i, 1) = logit_scale(pf.p_pos[i]);
    }
  }

  FdLiraStats stats;
  stats.ids = audit.ids;
  stats.mu_in = Matrix::Zero(n, 2);
  stats.mu_out = Matrix::Zero(n, 2);
  stats.cov_in.assign(n, Eigen::Matrix2d::Zero());
  stats.cov_out.assign(n, Eigen::Matrix2d::Zero());
  stats.offline_fallback.assign(n, 0);

  struct Cell {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();  // sum of outer products
    int n = 0;
  };
  auto fit_cell = [](const std::vector<Eigen::Vector2d>& vals) {
    Cell c;
    c.n = static_cast<int>(vals.size());
    for (const auto& v : vals) c.mean += v;
    if (c.n) c.mean /= c.n;
    for (const auto& v : vals)
      c.scatter += (v - c.mean) * (v - c.mean).transpose();
    return c;
  };

  const bool pool_cov = n_shadows < opts.global_covariance_below;
  Eigen::Matrix2d pooled_in = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d pooled_out = Eigen::Matrix2d::Zero();
  std::int64_t pooled_in_df = 0, pooled_out_df = 0;

  std::vector<Cell> in_c(n), out_c(n);
  for (Index i = 0; i < n; ++i) {
    std::vector<Eigen::Vector2d> in_vals, out_vals;
    for (int s = 0; s < n_shadows; ++s) {
      const Eigen::Vector2d v = phi[s].row(i).transpose();
      if (!opts.offline && ensemble.shadows[s].contains(audit.ids[i]))
        in_vals.push_back(v);
      else
        out_vals.push_back(v);
    }
    in_c[i] = fit_cell(in_vals);
    out_c[i] = fit_cell(out_vals);
    if (in_c[i].n >= 2) {
      pooled_in += in_c[i].scatter;
      pooled_in_df += in_c[i].n - 1;
    }
    if (out_c[i].n >= 2) {
      pooled_out += out_c[i].scatter;
      pooled_out_df += out_c[i].n - 1;
    }
  }
  const Eigen::Matrix2d global_in =
      pooled_in_df > 0 ? (pooled_in / pooled_in_df).eval()
                       : Eigen::Matrix2d::Zero();
  const Eigen::Matrix2d global_out =
      pooled_out_df > 0 ? (pooled_out / pooled_out_df).eval()
                        : Eigen::Matrix2d::Zero();

  const Eigen::Matrix2d ridge = opts.ridge * Eigen::Matrix2d::Identity();
  for (Index i = 0; i < n; ++i) {
    const bool offline_example =
        opts.offline || in_c[i].n < 2 || out_c[i].n < 2;
    if (offline_example && !opts.offline) stats.offline_fallback[i] = 1;

    stats.mu_out.row(i) = out_c[i].mean.transpose();
    Eigen::Matrix2d cov_out =
        pool_cov ? global_out
                 : (out_c[i].n >= 2
                        ? (out_c[i].scatter / (out_c[i].n - 1)).eval()
                        : Eigen::Matrix2d::Zero());
    if (!offline_example) {
      stats.mu_in.row(i) = in_c[i].mean.transpose();
      Eigen::Matrix2d cov_in =
          pool_cov ? global_in : (in_c[i].scatter / (in_c[i].n - 1)).eval();
      if (opts.shared_covariance) {
        const Eigen::Matrix2d shared = 0.5 * (cov_in + cov_out);
        cov_in = shared;
        cov_out = shared;
      }
      stats.cov_in[i] = cov_in + ridge;
    }
    stats.cov_out[i] = cov_out + ridge;
  }
  return stats;
}

double fd_lira_log_ratio(const Eigen::Vector2d& mu_in,
                         const Eigen::Matrix2d& cov_in,
                         const Eigen::Vector2d& mu_out,
                         const Eigen::Matrix2d& cov_out,
                         const Eigen::Vector2d& obs) {
  auto log_density = [](const Eigen::Vector2d& mu, const Eigen::Matrix2d& cov,
                        const Eigen::Vector2d& x) {
    const Eigen::LLT<Eigen::Matrix2d> llt(cov);
    if (llt.info() != Eigen::Success)
      throw NumericError("covariance not positive definite");
    const Eigen::Vector2d d = x - mu;
    const Eigen::Vector2d z = llt.matrixL().solve(d);
    const double logdet =
        2.0 * std::log(llt.matrixL()(0, 0)) + 2.0 * std::log(llt.matrixL()(1, 1));
    return -0.5 * logdet - 0.5 * z.squaredNorm();
  };
  return log_density(mu_in, cov_in, obs) - log_density(mu_out, cov_out, obs);
}

Vector fd_lira_infer(const FdLiraStats& stats, const Matrix& observed) {
  if (observed.rows() != static_cast<Index>(stats.ids.size()) ||
      observed.cols() != 2)
    throw DimensionError("observations must be n x 2 aligned with statistics");
  Vector out(observed.rows());
  for (Index i = 0; i < observed.rows(); ++i) {
    const Eigen::Vector2d obs = observed.row(i).transpose();
    if (stats.offline_fallback[i] || stats.cov_in[i].isZero(0.0)) {
      // One-sided: Mahalanobis distance from the OUT population; larger
      // means less OUT-like.
      const Eigen::LLT<Eigen::Matrix2d> llt(stats.cov_out[i]);
      const Eigen::Vector2d d = obs - stats.mu_out.row(i).transpose();
      out[i] = llt.matrixL().solve(d).norm();
    } else {
      out[i] = fd_lira_log_ratio(stats.mu_in.row(i).transpose(),
                                 stats.cov_in[i],
                                 stats.mu_out.row(i).transpose(),
                                 stats.cov_out[i], obs);
    }
  }
  return out;
}

MembershipScores fd_lira_attack(const ShadowEnsemble& ensemble,
                                const ModelPair& target, const Dataset& audit,
                                const FdLiraOptions& opts) {
  const FdLiraStats stats = fd_lira_fit(ensemble, audit, opts);
  const PredScores pb = forward(target.get(ModelKind::Bias), audit.features);
  const PredScores pf = forward(target.get(ModelKind::Fair), audit.features);
  Matrix observed(audit.n_examples(), 2);
  for (Index i = 0; i < observed.rows(); ++i) {
    observed(i, 0) = logit_scale(pb.p_pos[i]);
    observed(i, 1) = logit_scale(pf.p_pos[i]);
  }
  return make_membership_scores(audit.ids, fd_lira_infer(stats, observed), 0.0);
}

AttackOutcome evaluate_attack(const MembershipScores& scores,
                              const IntVector& truth_member,
                              double fpr_target) {
  if (truth_member.size() != scores.raw.size())
    throw DimensionError("truth labels disagree with scored examples");
  AttackOutcome out;
  double correct = 0.0;
  for (Index i = 0; i < scores.raw.size(); ++i)
    correct += scores.decision[i] == truth_member[i];
  out.acc_a = correct / static_cast<double>(scores.raw.size());
  RocResult roc = roc_and_auc(scores.raw, truth_member);
  out.auc_a = roc.auc;
  out.tpr_at_low_fpr = tpr_at_fpr(roc.curve, fpr_target);
  out.roc = std::move(roc.curve);
  return out;
}

}  // namespace fairaudit
