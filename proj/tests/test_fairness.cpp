#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "fairaudit/errors.hpp"
#include "fairaudit/fairness.hpp"
#include "fairaudit/harness.hpp"
#include "fairaudit/rng.hpp"
#include "testutil.hpp"

using namespace fairaudit;

namespace {

Matrix one_hot(const IntVector& y) {
  Matrix m = Matrix::Zero(y.size(), 2);
  for (Index i = 0; i < y.size(); ++i) m(i, y[i]) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("mixup endpoints and midpoint") {
  Matrix x0(2, 2), x1(2, 2);
  x0 << 1, 2, 3, 4;
  x1 << 5, 6, 7, 8;
  Matrix y0(2, 2), y1(2, 2);
  y0 << 1, 0, 0, 1;
  y1 << 0, 1, 1, 0;

  SUBCASE("lambda 1 returns the g0 batch") {
    const MixedBatch m = mixup_batch(x0, y0, x1, y1, 1.0);
    CHECK(m.features == x0);
    CHECK(m.soft_targets == y0);
  }
  SUBCASE("lambda 0 returns the g1 batch") {
    const MixedBatch m = mixup_batch(x0, y0, x1, y1, 0.0);
    CHECK(m.features == x1);
    CHECK(m.soft_targets == y1);
  }
  SUBCASE("lambda 0.5 is the componentwise midpoint") {
    const MixedBatch m = mixup_batch(x0, y0, x1, y1, 0.5);
    CHECK(m.features(0, 0) == 3.0);
    CHECK(m.features(1, 1) == 6.0);
    CHECK(m.soft_targets(0, 0) == 0.5);
  }
  SUBCASE("unequal sizes are rejected") {
    CHECK_THROWS_AS(mixup_batch(x0.topRows(1), y0.topRows(1), x1, y1, 0.5),
                    DimensionError);
  }
}

TEST_CASE("mixup with alpha near zero returns endpoint batches") {
  Rng rng(4);
  Matrix x0 = Matrix::Random(3, 2), x1 = Matrix::Random(3, 2);
  Matrix y0 = Matrix::Zero(3, 2), y1 = Matrix::Zero(3, 2);
  y0.col(0).setOnes();
  y1.col(1).setOnes();
  for (int t = 0; t < 50; ++t) {
    const double lambda = rng.beta(1e-6, 1e-6);
    const MixedBatch m = mixup_batch(x0, y0, x1, y1, lambda);
    const double d0 = (m.features - x0).cwiseAbs().maxCoeff();
    const double d1 = (m.features - x1).cwiseAbs().maxCoeff();
    CHECK(std::min(d0, d1) < 1e-3);
  }
}

TEST_CASE("reweight") {
  SUBCASE("balanced cells weigh 1") {
    IntVector y(8), g(8);
    y << 0, 0, 1, 1, 0, 0, 1, 1;
    g << 0, 0, 0, 0, 1, 1, 1, 1;
    const Vector w = reweight(y, g);
    for (Index i = 0; i < 8; ++i) CHECK(w[i] == 1.0);
  }
  SUBCASE("cells {90,90,10,10} of N=200 weigh {0.556, 5.0}") {
    IntVector y(200), g(200);
    Index k = 0;
    for (int i = 0; i < 90; ++i) { y[k] = 0; g[k++] = 0; }
    for (int i = 0; i < 90; ++i) { y[k] = 1; g[k++] = 0; }
    for (int i = 0; i < 10; ++i) { y[k] = 0; g[k++] = 1; }
    for (int i = 0; i < 10; ++i) { y[k] = 1; g[k++] = 1; }
    const Vector w = reweight(y, g);
    CHECK(w[0] == doctest::Approx(0.5555555555555556).epsilon(1e-15));
    CHECK(w[199] == doctest::Approx(5.0).epsilon(1e-15));
    // Weighted mass of each cell equals N/4.
    double mass_major = 0.0, mass_minor = 0.0;
    for (Index i = 0; i < 90; ++i) mass_major += w[i];
    for (Index i = 180; i < 190; ++i) mass_minor += w[i];
    CHECK(mass_major == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(mass_minor == doctest::Approx(50.0).epsilon(1e-12));
  }
  SUBCASE("an empty cell names itself") {
    IntVector y(4), g(4);
    y << 0, 0, 1, 1;
    g << 0, 0, 0, 0;
    CHECK_THROWS_WITH_AS(reweight(y, g), doctest::Contains("group=1"),
                         InterventionError);
  }
}

TEST_CASE("resample") {
  SUBCASE("already balanced returns a permutation of the original indices") {
    IntVector y(8), g(8);
    y << 0, 0, 1, 1, 0, 0, 1, 1;
    g << 0, 0, 0, 0, 1, 1, 1, 1;
    std::vector<Index> idx = resample(y, g, 3);
    CHECK(idx.size() == 8);
    std::sort(idx.begin(), idx.end());
    for (Index i = 0; i < 8; ++i) CHECK(idx[i] == i);
  }
  SUBCASE("minority cells oversample to the majority size") {
    IntVector y(100), g(100);
    for (Index i = 0; i < 100; ++i) {
      g[i] = i < 90 ? 0 : 1;
      y[i] = static_cast<int>(i % 2);
    }
    const std::vector<Index> idx = resample(y, g, 4);
    CHECK(idx.size() == 4 * 45);
    int minority = 0;
    for (Index i : idx) minority += g[i] == 1;
    CHECK(minority == 90);  // both minority cells filled to 45
  }
  SUBCASE("deterministic per seed") {
    IntVector y(30), g(30);
    for (Index i = 0; i < 30; ++i) {
      g[i] = i < 20 ? 0 : 1;
      y[i] = static_cast<int>(i % 2);
    }
    CHECK(resample(y, g, 9) == resample(y, g, 9));
  }
}

TEST_CASE("deo surrogate penalty") {
  SUBCASE("identical group means give zero value and gradient") {
    Vector p(4);
    p << 0.6, 0.4, 0.6, 0.4;
    IntVector y(4), g(4);
    y << 1, 0, 1, 0;
    g << 0, 0, 1, 1;
    const DeoPenalty pen = deo_surrogate_penalty(p, y, g);
    CHECK(pen.value == 0.0);
    CHECK(pen.grad.cwiseAbs().maxCoeff() == 0.0);
    CHECK_FALSE(pen.degenerate);
  }
  SUBCASE("single-group batch is zero with the degenerate flag") {
    Vector p(3);
    p << 0.2, 0.5, 0.9;
    IntVector y(3), g(3);
    y << 1, 1, 0;
    g << 0, 0, 0;
    const DeoPenalty pen = deo_surrogate_penalty(p, y, g);
    CHECK(pen.value == 0.0);
    CHECK(pen.degenerate);
  }
  SUBCASE("hand case: (0.8 - 0.5)^2 = 0.09") {
    Vector p(4);
    p << 0.9, 0.7, 0.5, 0.5;
    IntVector y = IntVector::Ones(4);
    IntVector g(4);
    g << 0, 0, 1, 1;
    const DeoPenalty pen = deo_surrogate_penalty(p, y, g);
    CHECK(pen.value == doctest::Approx(0.09).epsilon(1e-15));
    CHECK_FALSE(pen.degenerate);
  }
  SUBCASE("gradient matches central finite differences") {
    Rng rng(8);
    Vector p(10);
    IntVector y(10), g(10);
    for (Index i = 0; i < 10; ++i) {
      p[i] = 0.1 + 0.8 * rng.uniform();
      y[i] = static_cast<int>(rng.uniform_int(2));
      g[i] = static_cast<int>(rng.uniform_int(2));
    }
    y[0] = 0; y[1] = 1; g[0] = 0; g[1] = 1; g[2] = 0; g[3] = 1;
    const DeoPenalty pen = deo_surrogate_penalty(p, y, g);
    const double h = 1e-6;
    for (Index i = 0; i < 10; ++i) {
      Vector up = p, dn = p;
      up[i] += h;
      dn[i] -= h;
      const double num = (deo_surrogate_penalty(up, y, g).value -
                          deo_surrogate_penalty(dn, y, g).value) /
                         (2 * h);
      CHECK(pen.grad[i] == doctest::Approx(num).epsilon(1e-6));
    }
  }
}

TEST_CASE("adversarial reversal") {
  SUBCASE("a model without the head is rejected") {
    const Mlp m = Mlp::make(3, {4}, false, 1);
    CHECK_THROWS_AS(attach_adversarial(m, 1.0), ConfigError);
  }
  SUBCASE("lambda_adv 0 reproduces the baseline trajectory bit-for-bit") {
    Rng rng(6);
    Matrix x = Matrix::Random(24, 3);
    IntVector y(24), g(24);
    for (Index i = 0; i < 24; ++i) {
      y[i] = static_cast<int>(rng.uniform_int(2));
      g[i] = static_cast<int>(rng.uniform_int(2));
    }
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 6;
    cfg.seed = 3;

    Mlp base = Mlp::make(3, {5}, true, 9);
    Mlp adv = base;
    train(base, x, y, g, cfg);
    InterventionPlan plan = attach_adversarial(adv, 0.0);
    train(adv, x, y, g, cfg, &plan.hooks);
    for (Index l = 0; l < base.n_layers(); ++l)
      CHECK(base.weights[l] == adv.weights[l]);
  }
  SUBCASE("backbone gradient equals -lambda_adv x FD of the attribute loss") {
    const Mlp m = Mlp::make(3, {5}, true, 12);
    Matrix x = Matrix::Random(6, 3);
    IntVector y(6), g(6);
    y << 0, 1, 1, 0, 1, 0;
    g << 1, 0, 1, 1, 0, 0;
    const double lambda = 0.7;
    BackwardOptions opts;
    opts.groups = &g;
    opts.lambda_adv = lambda;
    opts.train_attr_head = true;
    opts.include_target_loss = false;  // isolate the attribute path
    const ForwardCache cache = forward_cached(m, x);
    const Gradients grads = backward(m, cache, one_hot(y), opts).grads;

    Mlp probe = m;
    const double h = 1e-5;
    for (Index l = 0; l < m.n_layers(); ++l)
      for (Index r = 0; r < m.weights[l].rows(); ++r)
        for (Index c = 0; c < m.weights[l].cols(); ++c) {
          const double saved = probe.weights[l](r, c);
          probe.weights[l](r, c) = saved + h;
          const double up = loss_only(probe, x, one_hot(y), Vector(),
                                      Objective::AttributeLoss, &g);
          probe.weights[l](r, c) = saved - h;
          const double dn = loss_only(probe, x, one_hot(y), Vector(),
                                      Objective::AttributeLoss, &g);
          probe.weights[l](r, c) = saved;
          const double fd = (up - dn) / (2 * h);
          CHECK(grads.weights[l](r, c) ==
                doctest::Approx(-lambda * fd).epsilon(1e-4));
        }
    // The head itself receives the true (unreversed) gradient.
    {
      Mlp hp = m;
      const double saved = hp.attr_weight(0, 0);
      hp.attr_weight(0, 0) = saved + h;
      const double up =
          loss_only(hp, x, one_hot(y), Vector(), Objective::AttributeLoss, &g);
      hp.attr_weight(0, 0) = saved - h;
      const double dn =
          loss_only(hp, x, one_hot(y), Vector(), Objective::AttributeLoss, &g);
      const double fd = (up - dn) / (2 * h);
      CHECK(grads.attr_weight(0, 0) == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("reweighted loss equals the resampling expectation") {
  // Fixed per-example losses; compare the weighted mean against the mean of
  // 1000 resampled means.
  Rng rng(15);
  const Index n = 60;
  IntVector y(n), g(n);
  Vector loss(n);
  for (Index i = 0; i < n; ++i) {
    g[i] = i < 40 ? 0 : 1;
    y[i] = static_cast<int>(i % 2);
    loss[i] = rng.uniform();
  }
  const Vector w = reweight(y, g);
  double weighted = 0.0;
  for (Index i = 0; i < n; ++i) weighted += w[i] * loss[i];
  weighted /= static_cast<double>(n);

  const int trials = 1000;
  std::vector<double> means;
  for (int t = 0; t < trials; ++t) {
    const std::vector<Index> idx = resample(y, g, 1000 + t);
    double m = 0.0;
    for (Index i : idx) m += loss[i];
    means.push_back(m / static_cast<double>(idx.size()));
  }
  double mean = 0.0;
  for (double m : means) mean += m;
  mean /= trials;
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  var /= (trials - 1);
  const double se = std::sqrt(var / trials);
  CHECK(std::abs(mean - weighted) < 3.0 * se + 1e-12);
}

TEST_CASE("every intervention reduces DEO against the skewed baseline") {
  // Median over 5 seeds on a 0.9-skew synthetic universe, all five kinds.
  auto run_kind = [](const std::string& kind) {
    std::vector<double> deo_bias, deo_fair;
    for (int s = 0; s < 5; ++s) {
      nlohmann::json cfg = {
          {"dataset",
           {{"kind", "synthetic"},
            {"synth",
             {{"n_examples", 16000}, {"n_features", 8}, {"class_gap", 2.0},
              {"group_gap", 1.0}, {"seed", 7}}}}},
          {"skew",
           {{"majority_fraction", 0.9}, {"majority_group", 0}, {"n_total", 4000}}},
          {"split", {{"shadow_fraction", 0.5}, {"shadow_overlaps_audit", true}}},
          {"train",
           {{"epochs", 60}, {"batch_size", 32}, {"learning_rate", 0.1},
            {"momentum", 0.9}, {"l2", 1e-3}, {"hidden", {32, 16}}}},
          {"intervention",
           {{"kind", kind},
            {"params", {{"alpha", 1.0}, {"lambda_f", 2.0}, {"lambda_adv", 0.3}}}}},
          {"attacks", nlohmann::json::array()},
          {"n_shadows", 4},
          {"master_seed", 100 + s},
      };
      const fairaudit::AuditReport r =
          fairaudit::run_audit(fairaudit::parse_config(cfg));
      REQUIRE(r.errors.empty());
      for (const auto& m : r.models)
        (m.model == "bias" ? deo_bias : deo_fair).push_back(m.fairness.deo);
    }
    CAPTURE(kind);
    CHECK(testutil::median(deo_fair) < testutil::median(deo_bias));
  };
  for (const char* kind :
       {"mixup", "reweight", "resample", "constraint", "adversarial"})
    run_kind(kind);
}

TEST_CASE("gradient reversal suppresses the attribute head on held-out data") {
  // Group-correlated features; the reversed backbone should hide them.
  const SynthConfig sc = SynthConfig::biased_binary(2000, 8, 2.0, 1.0);
  const Dataset ds = synth_generate(sc, 3);
  const AuditSplit split = split_audit(ds, 0.0, 5);
  const Standardizer st = fit_standardizer(ds, split.member_ids);
  const Dataset all = apply_standardizer(ds, st);
  const Dataset train_ds = all.subset(split.member_ids);
  const Dataset held = all.subset(split.nonmember_ids);

  auto attr_accuracy = [&](double lambda) {
    Mlp m = Mlp::make(all.n_features(), {32, 16}, true, 17);
    InterventionPlan plan = attach_adversarial(m, lambda);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.1;
    cfg.seed = 23;
    train(m, train_ds.features, train_ds.target, train_ds.group, cfg,
          &plan.hooks);
    const ForwardCache cache = forward_cached(m, held.features);
    double correct = 0.0;
    for (Index i = 0; i < held.n_examples(); ++i) {
      const int pred = cache.attr_probs(i, 1) > 0.5 ? 1 : 0;
      correct += pred == held.group[i];
    }
    return correct / static_cast<double>(held.n_examples());
  };
  const double baseline = attr_accuracy(0.0);
  const double reversed = attr_accuracy(0.3);
  CAPTURE(baseline);
  CAPTURE(reversed);
  CHECK(reversed < baseline);
}

TEST_CASE("plan_intervention validates its inputs") {
  Matrix x = Matrix::Random(8, 2);
  IntVector y(8), g = IntVector::Zero(8);
  y << 0, 1, 0, 1, 0, 1, 0, 1;
  Intervention iv;
  iv.kind = InterventionKind::Mixup;
  CHECK_THROWS_AS(plan_intervention(iv, x, y, g, 1), InterventionError);

  iv.kind = InterventionKind::Adversarial;
  CHECK_THROWS_AS(plan_intervention(iv, x, y, g, 1), ConfigError);

  iv.kind = InterventionKind::Mixup;
  iv.mixup_gamma = 0.5;
  CHECK_THROWS_AS(plan_intervention(iv, x, y, g, 1), ConfigError);
}
