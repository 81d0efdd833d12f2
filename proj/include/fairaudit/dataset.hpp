#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fairaudit/linalg.hpp"

namespace fairaudit {

enum class ColumnKind { Numeric, Categorical };

struct FeatureColumn {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
};

/// Column layout of a tabular source. The sensitive column is binarized: rows
/// whose value equals `sensitive_s1_value` map to subgroup 1, everything else
/// collapses to subgroup 0. The target column maps the same way onto
/// `target_positive_value`.
struct TabularSchema {
  std::vector<FeatureColumn> feature_columns;
  std::string target_column;
  std::string target_positive_value;
  std::string sensitive_column;
  std::string sensitive_s1_value;

  void validate() const;  // throws SchemaError
};

/// Immutable feature table with per-example target and subgroup labels.
/// Rows are examples; `ids` are stable identifiers inherited from the source
/// (CSV data-row index or synthetic generation index) and survive sampling.
struct Dataset {
  Matrix features;                         // n x d
  IntVector target;                        // in {0,1}
  IntVector group;                         // in {0,1}
  std::vector<std::int64_t> ids;
  std::vector<std::string> feature_names;  // size d
  std::vector<bool> numeric_dim;           // size d; false for one-hot dims
  std::int64_t dropped_rows = 0;           // rows removed during ingestion

  Index n_examples() const { return features.rows(); }
  Index n_features() const { return features.cols(); }

  void validate() const;

  /// Rows with the given ids, in the given order. Unknown id -> CapacityError.
  Dataset subset(std::span<const std::int64_t> keep_ids) const;

  /// Targets as n x 2 one-hot rows.
  Matrix one_hot_targets() const;
};

/// Controlled subgroup imbalance: the majority group receives
/// `majority_fraction` of the sampled rows, targets stay 50/50.
struct SkewConfig {
  double majority_fraction = 0.9;  // in (0.5, 1.0)
  int majority_group = 0;
  Index n_total = 0;               // requested sample size, > 0

  void validate() const;  // throws ConfigError
};

struct AuditSplit {
  std::vector<std::int64_t> member_ids;
  std::vector<std::int64_t> nonmember_ids;
  std::vector<std::int64_t> shadow_pool_ids;
  std::uint64_t rng_seed = 0;
};

/// Gaussian cell model: one mean vector per (group, target) cell, a shared
/// diagonal covariance, and cell proportions.
struct SynthConfig {
  Index n_examples = 0;
  Index n_features = 0;
  std::array<std::array<Vector, 2>, 2> cell_means;  // [group][target]
  Vector cov_diag;                                  // entries > 0
  std::array<std::array<double, 2>, 2> cell_proportions{{{0.25, 0.25}, {0.25, 0.25}}};
  double separability_gap = 1.0;

  void validate() const;  // throws ConfigError

  /// Cell layout where the two groups separate their classes along different
  /// feature directions sharing one common component, so a model trained
  /// mostly on one group transfers only partially to the other. The group gap
  /// shifts subgroup 1 along a dedicated dimension. Needs n_features >= 4.
  static SynthConfig biased_binary(Index n_examples, Index n_features,
                                   double class_gap, double group_gap);
};

/// Parses RFC 4180 CSV text (header row required) and assembles the feature
/// matrix: categorical columns one-hot expanded into one dim per distinct
/// value (sorted), numeric columns passed through raw. Rows with a missing
/// value ("" or "?") or an unparsable numeric in any schema column are
/// dropped and counted in `dropped_rows`. Standardization happens later,
/// against member-pool statistics only (see fit_standardizer).
Dataset load_tabular(std::string_view csv_text, const TabularSchema& schema);

Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed);

/// Samples without replacement so that group proportions hit
/// cfg.majority_fraction (+-1 row) and targets stay 50/50 (+-1 row). Rows are
/// copied verbatim, ids preserved.
Dataset skew_sample(const Dataset& ds, const SkewConfig& cfg, std::uint64_t seed);

/// Shuffles ids and carves |member| = |nonmember| audit halves plus a shadow
/// pool of floor(shadow_fraction * n) ids. With `shadow_overlaps_audit` the
/// shadow pool is the whole id set, which online reference attacks need.
AuditSplit split_audit(const Dataset& ds, double shadow_fraction,
                       std::uint64_t seed, bool shadow_overlaps_audit = false);

/// Z-score statistics for numeric dims, fitted on the member pool only and
/// applied identically everywhere else.
struct Standardizer {
  Vector mean;   // size d; zero for non-numeric dims
  Vector scale;  // size d; one for non-numeric or near-constant dims
};

Standardizer fit_standardizer(const Dataset& ds,
                              std::span<const std::int64_t> member_ids);
Dataset apply_standardizer(const Dataset& ds, const Standardizer& st);

}  // namespace fairaudit
