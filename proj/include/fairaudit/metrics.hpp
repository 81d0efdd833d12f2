#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fairaudit/linalg.hpp"

namespace fairaudit {

/// Confusion counts per subgroup.
struct GroupConfusion {
  std::array<std::int64_t, 2> tp{}, fp{}, tn{}, fn{};

  std::int64_t positives(int g) const { return tp[g] + fn[g]; }
  std::int64_t negatives(int g) const { return fp[g] + tn[g]; }
  double tpr(int g) const;
  double fpr(int g) const;
};

GroupConfusion confusion_by_group(const IntVector& pred,
                                  const IntVector& target,
                                  const IntVector& group);

/// Half the relative disparity of true-positive counts across subgroups,
/// |TP_0 - TP_1| / (2 (TP_0 + TP_1)), in [0, 0.5].
double bias_amplification(const GroupConfusion& gc);

enum class DeoMode { SumOfGaps, MaxGap };

/// Disparity of equalized odds: TPR gap plus FPR gap across subgroups
/// (range [0, 2]); MaxGap takes the larger of the two instead.
double deo(const GroupConfusion& gc, DeoMode mode = DeoMode::SumOfGaps);

struct RocPoint {
  double threshold;  // decision rule: score >= threshold
  double fpr;
  double tpr;
};

/// Threshold sweep, thresholds descending; starts at (0,0), ends at (1,1),
/// tied scores grouped into one step.
struct RocCurve {
  std::vector<RocPoint> points;
  void validate() const;
};

struct RocResult {
  RocCurve curve;
  double auc = 0.0;
};

RocResult roc_and_auc(const Vector& scores, const IntVector& label);

/// TPR at the largest achieved FPR <= target (conservative step
/// interpolation; no interpolation between points).
double tpr_at_fpr(const RocCurve& curve, double fpr_target);

struct FairnessReport {
  double acc_t = 0.0;
  double ba = 0.0;
  double deo = 0.0;
};

FairnessReport fairness_report(const IntVector& pred, const IntVector& target,
                               const IntVector& group,
                               DeoMode mode = DeoMode::SumOfGaps);

struct Histogram {
  Vector edges;  // nbins + 1, uniform
  std::vector<std::int64_t> counts;
  std::int64_t underflow = 0;
  std::int64_t overflow = 0;

  std::int64_t total() const;
};

Histogram histogram(const Vector& values, double lo, double hi, int nbins);

/// Histogram of |m_i - n_j| over member/non-member score pairs: all pairs
/// when there are at most 10^6 of them, otherwise a seeded subsample of 10^6.
Histogram score_gap_histogram(const Vector& member_scores,
                              const Vector& nonmember_scores, int nbins,
                              std::uint64_t seed, double lo = 0.0,
                              double hi = 1.0);

/// Same, with Euclidean distances over paired (bias, fair) score rows.
Histogram score_gap_histogram2(const Matrix& member_scores,
                               const Matrix& nonmember_scores, int nbins,
                               std::uint64_t seed, double lo, double hi);

}  // namespace fairaudit
