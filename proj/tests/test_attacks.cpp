#include <doctest.h>

#include <cmath>

#include "fairaudit/attacks.hpp"
#include "fairaudit/errors.hpp"
#include "testutil.hpp"

using namespace fairaudit;

namespace {

/// Shadow whose models emit fixed logits (0, c): phi(p_pos) = c exactly up to
/// rounding, independent of the input.
Mlp constant_model(Index input_dim, double c) {
  Mlp m = Mlp::make(input_dim, {}, false, 0);
  m.weights[0].setZero();
  m.biases[0] << 0.0, c;
  return m;
}

Dataset single_example_dataset(Index d) {
  Dataset ds;
  ds.features = Matrix::Zero(1, d);
  ds.target = IntVector::Ones(1);
  ds.group = IntVector::Zero(1);
  ds.ids = {0};
  for (Index j = 0; j < d; ++j) ds.feature_names.push_back("f" + std::to_string(j));
  ds.numeric_dim.assign(d, true);
  return ds;
}

ShadowEnsemble hand_ensemble(const std::vector<double>& in_bias,
                             const std::vector<double>& out_bias,
                             const std::vector<double>& in_fair = {},
                             const std::vector<double>& out_fair = {}) {
  ShadowEnsemble e;
  e.master_seed = 0;
  for (std::size_t k = 0; k < in_bias.size(); ++k) {
    Shadow s;
    s.models.bias = constant_model(2, in_bias[k]);
    s.models.fair =
        constant_model(2, in_fair.empty() ? in_bias[k] : in_fair[k]);
    s.models.has_fair = true;
    s.in_ids = {0};
    e.shadows.push_back(std::move(s));
  }
  for (std::size_t k = 0; k < out_bias.size(); ++k) {
    Shadow s;
    s.models.bias = constant_model(2, out_bias[k]);
    s.models.fair =
        constant_model(2, out_fair.empty() ? out_bias[k] : out_fair[k]);
    s.models.has_fair = true;
    s.in_ids = {};
    e.shadows.push_back(std::move(s));
  }
  return e;
}

Dataset small_synth_pool(Index n, std::uint64_t seed) {
  const SynthConfig cfg = SynthConfig::biased_binary(n, 6, 3.0, 1.0);
  return synth_generate(cfg, seed);
}

}  // namespace

TEST_CASE("logit scaling") {
  CHECK(logit_scale(0.5) == 0.0);
  CHECK(logit_scale(0.9) == doctest::Approx(2.1972245773362196).epsilon(1e-15));
  CHECK(logit_scale(1.0) == logit_scale(1.0 - 1e-6));
  CHECK(logit_scale(0.0) == logit_scale(1e-6));
}

TEST_CASE("lira closed forms") {
  SUBCASE("identical distributions give zero") {
    CHECK(lira_log_ratio(1.3, 0.7, 1.3, 0.7, 2.0) == 0.0);
  }
  SUBCASE("unit sigma, means 2 and 0, observation 2 gives log ratio 2") {
    CHECK(lira_log_ratio(2.0, 1.0, 0.0, 1.0, 2.0) ==
          doctest::Approx(2.0).epsilon(1e-13));
  }
  SUBCASE("midpoint observation with equal sigma gives zero") {
    CHECK(lira_log_ratio(3.0, 0.5, 1.0, 0.5, 2.0) == 0.0);
  }
  SUBCASE("swapping IN and OUT negates the log ratio exactly") {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
      const double mi = rng.normal(), mo = rng.normal();
      const double si = 0.1 + rng.uniform(), so = 0.1 + rng.uniform();
      const double x = rng.normal();
      CHECK(lira_log_ratio(mi, si, mo, so, x) ==
            -lira_log_ratio(mo, so, mi, si, x));
    }
  }
}

TEST_CASE("lira_fit recovers hand-listed moments") {
  // IN phi values {2, 4}, OUT {0, 2}.
  const ShadowEnsemble e = hand_ensemble({2.0, 4.0}, {0.0, 2.0});
  const Dataset audit = single_example_dataset(2);
  const LiraStats stats = lira_fit(e, audit, ModelKind::Bias);
  CHECK(stats.mu_in[0] == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(stats.mu_out[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(stats.sigma_in[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(stats.sigma_out[0] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(stats.offline_fallback[0] == 0);
}

TEST_CASE("identical shadow predictions degenerate to the sigma floor") {
  const ShadowEnsemble e = hand_ensemble({1.5, 1.5}, {1.5, 1.5});
  const Dataset audit = single_example_dataset(2);
  const LiraStats stats = lira_fit(e, audit, ModelKind::Bias);
  CHECK(stats.mu_in[0] == doctest::Approx(stats.mu_out[0]).epsilon(1e-12));
  CHECK(stats.sigma_in[0] == 1e-3);
  CHECK(stats.sigma_out[0] == 1e-3);
  // And inference stays finite and symmetric.
  Vector obs(1);
  obs << 1.5;
  const Vector lr = lira_infer(stats, obs);
  CHECK(std::isfinite(lr[0]));
  CHECK(lr[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("offline mode scores the standardized OUT deviation") {
  LiraStats stats;
  stats.ids = {0};
  stats.offline_mode = true;
  stats.mu_in.resize(1);
  stats.sigma_in.resize(1);
  stats.mu_out.resize(1);
  stats.sigma_out.resize(1);
  stats.offline_fallback = {0};
  stats.mu_out[0] = 1.0;
  stats.sigma_out[0] = 2.0;
  Vector obs(1);
  obs << 4.0;
  CHECK(lira_infer(stats, obs)[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("fd_lira closed forms") {
  const Eigen::Matrix2d id = Eigen::Matrix2d::Identity();
  SUBCASE("equidistant observation under equal covariance gives zero") {
    const Eigen::Vector2d mu_in(1, 0), mu_out(-1, 0), obs(0, 0.5);
    CHECK(fd_lira_log_ratio(mu_in, id, mu_out, id, obs) ==
          doctest::Approx(0.0).epsilon(1e-13));
  }
  SUBCASE("identity covariance, observation at mu_in gives 1") {
    const Eigen::Vector2d mu_in(1, 1), mu_out(0, 0), obs(1, 1);
    CHECK(fd_lira_log_ratio(mu_in, id, mu_out, id, obs) ==
          doctest::Approx(1.0).epsilon(1e-13));
  }
  SUBCASE("observation at mu_in with shared covariance is half the Mahalanobis") {
    Eigen::Matrix2d cov;
    cov << 2.0, 0.3, 0.3, 0.5;
    const Eigen::Vector2d mu_in(0.7, -0.2), mu_out(-0.4, 0.9);
    const Eigen::Vector2d d = mu_in - mu_out;
    const double mahal = d.transpose() * cov.inverse() * d;
    CHECK(fd_lira_log_ratio(mu_in, cov, mu_out, cov, mu_in) ==
          doctest::Approx(0.5 * mahal).epsilon(1e-12));
  }
  SUBCASE("swap negates") {
    Eigen::Matrix2d ci, co;
    ci << 1.2, 0.1, 0.1, 0.8;
    co << 0.6, -0.2, -0.2, 1.5;
    const Eigen::Vector2d mi(0.3, 1.0), mo(-0.5, 0.2), obs(0.1, 0.4);
    CHECK(fd_lira_log_ratio(mi, ci, mo, co, obs) ==
          doctest::Approx(-fd_lira_log_ratio(mo, co, mi, ci, obs))
              .epsilon(1e-13));
  }
}

TEST_CASE("fd_lira_fit recovers a hand-computed covariance") {
  // IN (bias, fair) points: (0,0), (1,1), (2,0) -> mean (1, 1/3),
  // sample covariance [[1, 0], [0, 1/3]].
  const ShadowEnsemble e =
      hand_ensemble({0.0, 1.0, 2.0}, {0.0, 1.0}, {0.0, 1.0, 0.0}, {0.0, 1.0});
  const Dataset audit = single_example_dataset(2);
  const FdLiraStats stats = fd_lira_fit(e, audit);
  CHECK(stats.mu_in(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(stats.mu_in(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  CHECK(stats.cov_in[0](0, 0) == doctest::Approx(1.0 + 1e-6).epsilon(1e-9));
  CHECK(stats.cov_in[0](0, 1) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(stats.cov_in[0](1, 1) == doctest::Approx(1.0 / 3.0 + 1e-6).epsilon(1e-9));
}

TEST_CASE("equal bias and fair coordinates are rank-deficient until ridged") {
  // Both models identical per shadow: cov has equal rows before the ridge.
  const ShadowEnsemble e = hand_ensemble({0.5, 1.5, 2.5}, {0.0, 1.0});
  const Dataset audit = single_example_dataset(2);
  const FdLiraStats stats = fd_lira_fit(e, audit);
  const Eigen::Matrix2d raw = stats.cov_in[0] - 1e-6 * Eigen::Matrix2d::Identity();
  CHECK(std::abs(raw.determinant()) < 1e-12);  // singular before the ridge
  const Eigen::LLT<Eigen::Matrix2d> llt(stats.cov_in[0]);
  CHECK(llt.info() == Eigen::Success);  // PD after
  Matrix obs(1, 2);
  obs << 1.0, 1.0;
  CHECK(std::isfinite(fd_lira_infer(stats, obs)[0]));
}

TEST_CASE("fd degenerates to univariate lira when the fair coordinate is constant") {
  // Constructed statistics: diagonal covariance, fair coordinate pinned.
  const double si = 0.8, so = 1.1, delta = 1e-6, c = 0.4;
  FdLiraStats fd;
  fd.ids = {0};
  fd.mu_in = Matrix(1, 2);
  fd.mu_in << 2.0, c;
  fd.mu_out = Matrix(1, 2);
  fd.mu_out << 0.5, c;
  Eigen::Matrix2d cin, cout;
  cin << si * si, 0, 0, delta;
  cout << so * so, 0, 0, delta;
  fd.cov_in = {cin};
  fd.cov_out = {cout};
  fd.offline_fallback = {0};

  LiraStats uni;
  uni.ids = {0};
  uni.mu_in.resize(1);
  uni.sigma_in.resize(1);
  uni.mu_out.resize(1);
  uni.sigma_out.resize(1);
  uni.offline_fallback = {0};
  uni.mu_in[0] = 2.0;
  uni.sigma_in[0] = si;
  uni.mu_out[0] = 0.5;
  uni.sigma_out[0] = so;

  for (double x : {-1.0, 0.0, 0.7, 1.9, 3.2}) {
    Matrix obs2(1, 2);
    obs2 << x, c;
    Vector obs1(1);
    obs1 << x;
    CHECK(std::abs(fd_lira_infer(fd, obs2)[0] - lira_infer(uni, obs1)[0]) <
          1e-9);
  }
}

TEST_CASE("train_shadows splits halves deterministically") {
  const Dataset pool = small_synth_pool(40, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  Intervention none;
  const ShadowEnsemble a = train_shadows(pool, 3, cfg, {4}, none, 9);
  const ShadowEnsemble b = train_shadows(pool, 3, cfg, {4}, none, 9);
  REQUIRE(a.shadows.size() == 3);
  for (int s = 0; s < 3; ++s) {
    CHECK(a.shadows[s].in_ids.size() == 20);
    CHECK(a.shadows[s].in_ids == b.shadows[s].in_ids);
    CHECK(a.shadows[s].models.bias.weights[0] ==
          b.shadows[s].models.bias.weights[0]);
  }
  CHECK_THROWS_AS(train_shadows(pool, 1, cfg, {4}, none, 9), AttackSetupError);
}

TEST_CASE("per-id shadow membership counts stay near half") {
  const Dataset pool = small_synth_pool(100, 4);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  Intervention none;
  const ShadowEnsemble e = train_shadows(pool, 8, cfg, {4}, none, 5);
  for (std::int64_t id : {0, 17, 53, 99}) {
    int in = 0;
    for (const auto& s : e.shadows) in += s.contains(id);
    CHECK(in >= 0);
    CHECK(in <= 8);
  }
}

TEST_CASE("a shadow scores its own IN members above its OUT examples") {
  const Dataset pool = small_synth_pool(240, 6);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.1;
  Intervention none;
  const ShadowEnsemble e = train_shadows(pool, 6, cfg, {16, 8}, none, 21);

  // Attack the first shadow's own models with an ensemble of the others.
  ShadowEnsemble rest;
  rest.master_seed = 77;
  rest.intervention = none;
  for (std::size_t s = 1; s < e.shadows.size(); ++s)
    rest.shadows.push_back(e.shadows[s]);
  ScoreAttackConfig sa;
  sa.attack_train.epochs = 30;
  sa.attack_train.batch_size = 64;
  sa.attack_train.learning_rate = 0.05;
  const MembershipScores scores =
      score_attack(rest, pool, e.shadows[0].models, ModelKind::Bias,
                   AttackMode::Score, pool, sa);
  double in_mean = 0.0, out_mean = 0.0;
  int in_n = 0, out_n = 0;
  for (Index i = 0; i < pool.n_examples(); ++i) {
    if (e.shadows[0].contains(pool.ids[i])) {
      in_mean += scores.raw[i];
      ++in_n;
    } else {
      out_mean += scores.raw[i];
      ++out_n;
    }
  }
  in_mean /= in_n;
  out_mean /= out_n;
  CHECK(in_mean > out_mean);
}

TEST_CASE("score attack decisions degrade to a threshold rule per correctness stratum") {
  const Dataset pool = small_synth_pool(240, 6);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.1;
  Intervention none;
  const ShadowEnsemble e = train_shadows(pool, 6, cfg, {16, 8}, none, 22);
  ScoreAttackConfig sa;
  sa.attack_train.epochs = 30;
  sa.attack_train.batch_size = 64;
  sa.attack_train.learning_rate = 0.05;
  const ScoreAttackResult r = score_attack_full(
      e, pool, e.shadows[0].models, ModelKind::Bias, AttackMode::Score, pool, sa);

  for (double correct : {0.0, 1.0}) {
    const int grid = 1001;
    Matrix probe(grid, 2);
    for (int k = 0; k < grid; ++k) {
      probe(k, 0) = static_cast<double>(k) / (grid - 1);
      probe(k, 1) = correct;
    }
    const PredScores p = forward(r.attack_model, probe);
    // Minimum disagreement against any single-threshold rule, either
    // orientation.
    int ones_total = 0;
    for (int k = 0; k < grid; ++k) ones_total += p.label[k];
    int best = grid;
    int ones_before = 0;
    for (int cut = 0; cut <= grid; ++cut) {
      const int zeros_after = (grid - cut) - (ones_total - ones_before);
      const int asc = ones_before + zeros_after;        // 0s then 1s
      const int desc = (cut - ones_before) + (ones_total - ones_before);
      best = std::min({best, asc, desc});
      if (cut < grid) ones_before += p.label[cut];
    }
    CHECK(static_cast<double>(best) / grid <= 0.01);
  }
}

TEST_CASE("withholding scores reduces attack features to labels") {
  const Mlp m = Mlp::make(3, {4}, false, 2);
  Matrix x = Matrix::Random(6, 3);
  IntVector y(6);
  y << 0, 1, 0, 1, 1, 0;
  const Matrix full = attack_features(m, x, y, false);
  const Matrix restricted = attack_features(m, x, y, true);
  for (Index i = 0; i < 6; ++i) {
    CHECK((restricted(i, 0) == 0.0 || restricted(i, 0) == 1.0));
    CHECK(restricted(i, 1) == full(i, 1));  // correctness bit unchanged
  }
}

TEST_CASE("evaluate_attack matches a hand-computed confusion and pairwise auc") {
  Vector raw(8);
  raw << 0.9, 0.8, 0.7, 0.6, 0.4, 0.3, 0.2, 0.1;
  IntVector truth(8);
  truth << 1, 1, 0, 1, 0, 1, 0, 0;
  const MembershipScores scores =
      make_membership_scores({0, 1, 2, 3, 4, 5, 6, 7}, raw, 0.5);
  const AttackOutcome out = evaluate_attack(scores, truth);
  CHECK(out.acc_a == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(out.auc_a == doctest::Approx(0.8125).epsilon(1e-15));
}

TEST_CASE("random scores sit near chance, ordered scores are perfect") {
  Rng rng(4);
  const Index n = 2000;
  Vector raw(n);
  IntVector truth(n);
  for (Index i = 0; i < n; ++i) {
    raw[i] = rng.uniform();
    truth[i] = i < n / 2 ? 1 : 0;
  }
  const AttackOutcome r = evaluate_attack(make_membership_scores({}, raw, 0.5),
                                          truth);
  CHECK(std::abs(r.acc_a - 0.5) < 0.05);
  CHECK(std::abs(r.auc_a - 0.5) < 0.05);

  Vector ordered(6);
  ordered << 6, 5, 4, 3, 2, 1;
  IntVector t2(6);
  t2 << 1, 1, 1, 0, 0, 0;
  const AttackOutcome p =
      evaluate_attack(make_membership_scores({}, ordered, 3.5), t2);
  CHECK(p.acc_a == 1.0);
  CHECK(p.auc_a == 1.0);
}

TEST_CASE("monotone score transforms leave roc, auc and tpr unchanged") {
  Rng rng(6);
  const Index n = 300;
  Vector raw(n);
  IntVector truth(n);
  for (Index i = 0; i < n; ++i) {
    raw[i] = rng.normal();
    truth[i] = static_cast<int>(rng.uniform_int(2));
  }
  truth[0] = 1;
  truth[1] = 0;
  Vector warped(n);
  for (Index i = 0; i < n; ++i) warped[i] = raw[i] * raw[i] * raw[i] + 2.0 * raw[i];

  const AttackOutcome a = evaluate_attack(make_membership_scores({}, raw, 0.0),
                                          truth, 0.01);
  const AttackOutcome b =
      evaluate_attack(make_membership_scores({}, warped, 0.0), truth, 0.01);
  CHECK(a.auc_a == doctest::Approx(b.auc_a).epsilon(1e-12));
  CHECK(a.tpr_at_low_fpr == doctest::Approx(b.tpr_at_low_fpr).epsilon(1e-12));
  REQUIRE(a.roc.points.size() == b.roc.points.size());
  for (std::size_t k = 0; k < a.roc.points.size(); ++k) {
    CHECK(a.roc.points[k].fpr == b.roc.points[k].fpr);
    CHECK(a.roc.points[k].tpr == b.roc.points[k].tpr);
  }
}
