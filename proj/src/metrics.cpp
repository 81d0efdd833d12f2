#include "fairaudit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fairaudit/errors.hpp"
#include "fairaudit/rng.hpp"

namespace fairaudit {

double GroupConfusion::tpr(int g) const {
  if (positives(g) == 0)
    throw MetricError("group " + std::to_string(g) + " has no positive examples");
  return static_cast<double>(tp[g]) / static_cast<double>(positives(g));
}

double GroupConfusion::fpr(int g) const {
  if (negatives(g) == 0)
    throw MetricError("group " + std::to_string(g) + " has no negative examples");
  return static_cast<double>(fp[g]) / static_cast<double>(negatives(g));
}

GroupConfusion confusion_by_group(const IntVector& pred,
                                  const IntVector& target,
                                  const IntVector& group) {
  if (pred.size() != target.size() || pred.size() != group.size())
    throw DimensionError("confusion inputs disagree on length");
  GroupConfusion gc;
  for (Index i = 0; i < pred.size(); ++i) {
    const int g = group[i];
    if (target[i] == 1)
      ++(pred[i] == 1 ? gc.tp[g] : gc.fn[g]);
    else
      ++(pred[i] == 1 ? gc.fp[g] : gc.tn[g]);
  }
  return gc;
}

double bias_amplification(const GroupConfusion& gc) {
  const double sum = static_cast<double>(gc.tp[0] + gc.tp[1]);
  if (sum <= 0.0)
    throw MetricError("bias amplification undefined: no true positives");
  return 0.5 * std::abs(static_cast<double>(gc.tp[0] - gc.tp[1])) / sum;
}

double deo(const GroupConfusion& gc, DeoMode mode) {
  const double tpr_gap = std::abs(gc.tpr(0) - gc.tpr(1));
  const double fpr_gap = std::abs(gc.fpr(0) - gc.fpr(1));
  return mode == DeoMode::SumOfGaps ? tpr_gap + fpr_gap
                                    : std::max(tpr_gap, fpr_gap);
}

void RocCurve::validate() const {
  if (points.size() < 2) throw MetricError("ROC curve needs at least two points");
  if (points.front().fpr != 0.0 || points.front().tpr != 0.0)
    throw MetricError("ROC curve must start at (0,0)");
  if (points.back().fpr != 1.0 || points.back().tpr != 1.0)
    throw MetricError("ROC curve must end at (1,1)");
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].fpr < points[i - 1].fpr || points[i].tpr < points[i - 1].tpr)
      throw MetricError("ROC coordinates must be non-decreasing");
    if (points[i].threshold > points[i - 1].threshold)
      throw MetricError("ROC thresholds must be descending");
  }
}

RocResult roc_and_auc(const Vector& scores, const IntVector& label) {
  if (scores.size() != label.size())
    throw DimensionError("scores and labels disagree on length");
  const Index n = scores.size();
  std::int64_t n_pos = 0;
  for (Index i = 0; i < n; ++i) n_pos += label[i] == 1;
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("ROC undefined with single-class labels");

  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return scores[a] > scores[b]; });

  RocResult result;
  auto& pts = result.curve.points;
  pts.push_back({scores[order[0]] + 1.0, 0.0, 0.0});
  std::int64_t tp = 0, fp = 0;
  double auc = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    std::int64_t tie_tp = 0, tie_fp = 0;
    while (i < order.size() && scores[order[i]] == s) {
      ++(label[order[i]] == 1 ? tie_tp : tie_fp);
      ++i;
    }
    const double prev_tpr = static_cast<double>(tp) / n_pos;
    const double prev_fpr = static_cast<double>(fp) / n_neg;
    tp += tie_tp;
    fp += tie_fp;
    const double cur_tpr = static_cast<double>(tp) / n_pos;
    const double cur_fpr = static_cast<double>(fp) / n_neg;
    auc += (cur_fpr - prev_fpr) * 0.5 * (prev_tpr + cur_tpr);
    pts.push_back({s, cur_fpr, cur_tpr});
  }
  result.auc = auc;
  result.curve.validate();
  return result;
}

double tpr_at_fpr(const RocCurve& curve, double fpr_target) {
  if (!(fpr_target > 0.0 && fpr_target < 1.0))
    throw ConfigError("fpr target must lie in (0, 1)");
  double best = 0.0;
  for (const auto& p : curve.points)
    if (p.fpr <= fpr_target) best = std::max(best, p.tpr);
  return best;
}

FairnessReport fairness_report(const IntVector& pred, const IntVector& target,
                               const IntVector& group, DeoMode mode) {
  const GroupConfusion gc = confusion_by_group(pred, target, group);
  FairnessReport r;
  double correct = 0.0;
  for (Index i = 0; i < pred.size(); ++i) correct += pred[i] == target[i];
  r.acc_t = correct / static_cast<double>(pred.size());
  r.ba = bias_amplification(gc);
  r.deo = deo(gc, mode);
  return r;
}

std::int64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}) +
         underflow + overflow;
}

Histogram histogram(const Vector& values, double lo, double hi, int nbins) {
  if (!(hi > lo) || nbins < 1) throw ConfigError("bad histogram range");
  Histogram h;
  h.edges.resize(nbins + 1);
  for (int b = 0; b <= nbins; ++b)
    h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / nbins;
  h.counts.assign(nbins, 0);
  const double width = (hi - lo) / nbins;
  for (Index i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (v < lo) {
      ++h.underflow;
    } else if (v >= hi) {
      if (v == hi)
        ++h.counts.back();  // closed upper edge
      else
        ++h.overflow;
    } else {
      ++h.counts[std::min(nbins - 1, static_cast<int>((v - lo) / width))];
    }
  }
  return h;
}

namespace {

constexpr std::int64_t kMaxPairs = 1000000;

template <class DistanceFn>
Histogram gap_histogram(Index n_m, Index n_n, DistanceFn&& distance, int nbins,
                        std::uint64_t seed, double lo, double hi) {
  if (n_m == 0 || n_n == 0)
    throw MetricError("score gap histogram needs both member and non-member scores");
  const std::int64_t total = static_cast<std::int64_t>(n_m) * n_n;
  Vector gaps;
  if (total <= kMaxPairs) {
    gaps.resize(total);
    Index k = 0;
    for (Index i = 0; i < n_m; ++i)
      for (Index j = 0; j < n_n; ++j) gaps[k++] = distance(i, j);
  } else {
    Rng rng(seed);
    gaps.resize(kMaxPairs);
    for (std::int64_t k = 0; k < kMaxPairs; ++k) {
      const Index i = static_cast<Index>(rng.uniform_int(n_m));
      const Index j = static_cast<Index>(rng.uniform_int(n_n));
      gaps[k] = distance(i, j);
    }
  }
  return histogram(gaps, lo, hi, nbins);
}

}  // namespace

Histogram score_gap_histogram(const Vector& member_scores,
                              const Vector& nonmember_scores, int nbins,
                              std::uint64_t seed, double lo, double hi) {
  return gap_histogram(
      member_scores.size(), nonmember_scores.size(),
      [&](Index i, Index j) {
        return std::abs(member_scores[i] - nonmember_scores[j]);
      },
      nbins, seed, lo, hi);
}

Histogram score_gap_histogram2(const Matrix& member_scores,
                               const Matrix& nonmember_scores, int nbins,
                               std::uint64_t seed, double lo, double hi) {
  if (member_scores.cols() != nonmember_scores.cols())
    throw DimensionError("gap histogram inputs disagree on width");
  return gap_histogram(
      member_scores.rows(), nonmember_scores.rows(),
      [&](Index i, Index j) {
        return (member_scores.row(i) - nonmember_scores.row(j)).norm();
      },
      nbins, seed, lo, hi);
}

}  // namespace fairaudit
