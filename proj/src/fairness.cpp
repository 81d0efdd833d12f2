#include "fairaudit/fairness.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "fairaudit/errors.hpp"

namespace fairaudit {

std::string to_string(InterventionKind kind) {
  switch (kind) {
    case InterventionKind::None: return "none";
    case InterventionKind::Mixup: return "mixup";
    case InterventionKind::Reweight: return "reweight";
    case InterventionKind::Resample: return "resample";
    case InterventionKind::Constraint: return "constraint";
    case InterventionKind::Adversarial: return "adversarial";
  }
  return "none";
}

InterventionKind intervention_kind_from_string(const std::string& s) {
  if (s == "none") return InterventionKind::None;
  if (s == "mixup") return InterventionKind::Mixup;
  if (s == "reweight") return InterventionKind::Reweight;
  if (s == "resample") return InterventionKind::Resample;
  if (s == "constraint") return InterventionKind::Constraint;
  if (s == "adversarial") return InterventionKind::Adversarial;
  throw ConfigError("unknown intervention kind: " + s);
}

void Intervention::validate() const {
  if (!(mixup_alpha > 0.0)) throw ConfigError("mixup alpha must be positive");
  if (mixup_gamma < 0.0 || lambda_f < 0.0 || lambda_adv < 0.0)
    throw ConfigError("intervention weights must be non-negative");
  if (mixup_gamma != 0.0)
    throw ConfigError("mixup smoothness weight is not supported; use gamma = 0");
}

MixedBatch mixup_batch(const Matrix& x_g0, const Matrix& y_g0,
                       const Matrix& x_g1, const Matrix& y_g1, double lambda) {
  if (x_g0.rows() != x_g1.rows() || y_g0.rows() != y_g1.rows() ||
      x_g0.rows() != y_g0.rows())
    throw DimensionError("mixup batches must have equal size");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ConfigError("mixup lambda must lie in [0, 1]");
  MixedBatch out;
  out.features = lambda * x_g0 + (1.0 - lambda) * x_g1;
  out.soft_targets = lambda * y_g0 + (1.0 - lambda) * y_g1;
  return out;
}

namespace {

std::array<std::array<std::vector<Index>, 2>, 2> cell_indices(
    const IntVector& target, const IntVector& group) {
  std::array<std::array<std::vector<Index>, 2>, 2> cells;
  for (Index i = 0; i < target.size(); ++i)
    cells[group[i]][target[i]].push_back(i);
  return cells;
}

void require_cells_nonempty(
    const std::array<std::array<std::vector<Index>, 2>, 2>& cells) {
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y)
      if (cells[g][y].empty())
        throw InterventionError("empty (group=" + std::to_string(g) +
                                ", target=" + std::to_string(y) + ") cell");
}

}  // namespace

Vector reweight(const IntVector& target, const IntVector& group) {
  const auto cells = cell_indices(target, group);
  require_cells_nonempty(cells);
  const double n = static_cast<double>(target.size());
  Vector w(target.size());
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y) {
      const double cell_w = n / (4.0 * static_cast<double>(cells[g][y].size()));
      for (Index i : cells[g][y]) w[i] = cell_w;
    }
  return w;
}

std::vector<Index> resample(const IntVector& target, const IntVector& group,
                            std::uint64_t seed) {
  const auto cells = cell_indices(target, group);
  require_cells_nonempty(cells);
  std::size_t majority = 0;
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y) majority = std::max(majority, cells[g][y].size());

  Rng rng(seed);
  std::vector<Index> out;
  out.reserve(4 * majority);
  for (int g = 0; g < 2; ++g)
    for (int y = 0; y < 2; ++y) {
      const auto& cell = cells[g][y];
      out.insert(out.end(), cell.begin(), cell.end());
      for (std::size_t k = cell.size(); k < majority; ++k)
        out.push_back(cell[rng.uniform_int(cell.size())]);
    }
  rng.shuffle(out);
  return out;
}

DeoPenalty deo_surrogate_penalty(const Vector& probs, const IntVector& targets,
                                 const IntVector& groups) {
  if (probs.size() != targets.size() || probs.size() != groups.size())
    throw DimensionError("penalty inputs disagree on length");
  DeoPenalty out;
  out.grad = Vector::Zero(probs.size());
  const auto cells = cell_indices(targets, groups);
  for (int y = 0; y < 2; ++y) {
    const auto& c0 = cells[0][y];
    const auto& c1 = cells[1][y];
    if (c0.empty() && c1.empty()) continue;  // class absent from the batch
    if (c0.empty() || c1.empty()) {
      out.degenerate = true;
      continue;
    }
    double m0 = 0.0, m1 = 0.0;
    for (Index i : c0) m0 += probs[i];
    for (Index i : c1) m1 += probs[i];
    m0 /= static_cast<double>(c0.size());
    m1 /= static_cast<double>(c1.size());
    const double gap = m0 - m1;
    out.value += gap * gap;
    for (Index i : c0) out.grad[i] += 2.0 * gap / static_cast<double>(c0.size());
    for (Index i : c1) out.grad[i] -= 2.0 * gap / static_cast<double>(c1.size());
  }
  return out;
}

InterventionPlan attach_adversarial(const Mlp& model, double lambda_adv) {
  if (!model.has_attr_head)
    throw ConfigError("adversarial intervention needs a model with an attribute head");
  if (lambda_adv < 0.0) throw ConfigError("lambda_adv must be non-negative");
  InterventionPlan plan;
  plan.hooks.lambda_adv = lambda_adv;
  plan.hooks.train_attr_head = true;
  return plan;
}

InterventionPlan plan_intervention(const Intervention& intervention,
                                   const Matrix& features,
                                   const IntVector& target,
                                   const IntVector& group, std::uint64_t seed,
                                   const Mlp* model) {
  intervention.validate();
  InterventionPlan plan;
  switch (intervention.kind) {
    case InterventionKind::None:
      break;
    case InterventionKind::Reweight:
      plan.per_example_weights = reweight(target, group);
      break;
    case InterventionKind::Resample: {
      const IntVector y = target;
      const IntVector g = group;
      plan.hooks.epoch_indices = [y, g, seed](int epoch, Rng&) {
        return resample(y, g,
                        derive_seed(seed, "resample", static_cast<std::uint64_t>(epoch)));
      };
      break;
    }
    case InterventionKind::Constraint: {
      plan.hooks.penalty_scale = intervention.lambda_f;
      plan.hooks.prob_penalty = [](const Vector& p_pos, const IntVector& y,
                                   const IntVector& g, double& value) {
        DeoPenalty pen = deo_surrogate_penalty(p_pos, y, g);
        value = pen.value;
        return pen.grad;
      };
      break;
    }
    case InterventionKind::Adversarial: {
      if (!model)
        throw ConfigError("adversarial intervention needs the model up front");
      plan = attach_adversarial(*model, intervention.lambda_adv);
      break;
    }
    case InterventionKind::Mixup: {
      // Row pools per subgroup over the whole training set; batches missing a
      // group pad from here.
      std::vector<Index> pool_g0, pool_g1;
      for (Index i = 0; i < group.size(); ++i)
        (group[i] == 0 ? pool_g0 : pool_g1).push_back(i);
      if (pool_g0.empty() || pool_g1.empty())
        throw InterventionError("mixup needs both subgroups in the training data");

      const double alpha = intervention.mixup_alpha;
      const Matrix* data = &features;
      const IntVector y_all = target;
      plan.hooks.batch_transform = [alpha, pool_g0, pool_g1, data, y_all](
                                       Matrix& x, Matrix& y_soft, IntVector& g,
                                       Vector& w, Rng& rng) {
        const double lambda = rng.beta(alpha, alpha);
        std::vector<Index> rows0, rows1;
        for (Index i = 0; i < g.size(); ++i)
          (g[i] == 0 ? rows0 : rows1).push_back(i);
        const Index m = std::max<Index>(
            {static_cast<Index>(rows0.size()), static_cast<Index>(rows1.size()), 1});

        auto gather = [&](const std::vector<Index>& rows,
                          const std::vector<Index>& pool, Matrix& gx, Matrix& gy) {
          gx.resize(m, x.cols());
          gy.resize(m, 2);
          for (Index k = 0; k < m; ++k) {
            if (!rows.empty()) {
              // Existing rows first, then pad by resampling the same rows.
              const Index r = k < static_cast<Index>(rows.size())
                                  ? rows[k]
                                  : rows[rng.uniform_int(rows.size())];
              gx.row(k) = x.row(r);
              gy.row(k) = y_soft.row(r);
            } else {
              const Index r = pool[rng.uniform_int(pool.size())];
              gx.row(k) = data->row(r);
              gy.row(k) = Eigen::RowVector2d(y_all[r] == 0 ? 1.0 : 0.0,
                                             y_all[r] == 1 ? 1.0 : 0.0);
            }
          }
        };
        Matrix x0, y0, x1, y1;
        gather(rows0, pool_g0, x0, y0);
        gather(rows1, pool_g1, x1, y1);
        MixedBatch mixed = mixup_batch(x0, y0, x1, y1, lambda);
        x = std::move(mixed.features);
        y_soft = std::move(mixed.soft_targets);
        g = IntVector::Zero(m);
        w = Vector::Ones(m);
      };
      break;
    }
  }
  return plan;
}

}  // namespace fairaudit
