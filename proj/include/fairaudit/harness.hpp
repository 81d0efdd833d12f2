#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairaudit/attacks.hpp"
#include "fairaudit/dataset.hpp"
#include "fairaudit/defense.hpp"
#include "fairaudit/fairness.hpp"
#include "fairaudit/metrics.hpp"

namespace fairaudit {

enum class AttackKind { Score, Lira, FdScore, FdLira };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& s);

enum class DataSourceKind { Synthetic, Csv };

struct SynthSpec {
  Index n_examples = 8000;
  Index n_features = 8;
  double class_gap = 3.0;
  double group_gap = 1.0;
  std::uint64_t seed = 7;
};

struct DataConfig {
  DataSourceKind kind = DataSourceKind::Synthetic;
  std::string path;    // csv only
  std::string preset;  // csv only: "adult" | "compas" | ""
  TabularSchema schema;
  SynthSpec synth;
};

struct SplitConfig {
  double shadow_fraction = 0.5;
  bool shadow_overlaps_audit = true;
};

struct DpSpec {
  DpConfig config;
  /// When set and noise_multiplier is 0, the noise multiplier is calibrated
  /// against the accountant before training.
  std::optional<double> target_epsilon;
};

struct AuditOptions {
  bool warm_start = false;
  bool withhold_scores = false;
  bool lira_offline = false;
  bool fd_shared_covariance = false;
  DeoMode deo_mode = DeoMode::SumOfGaps;
  bool vary_split_seed = true;
  bool vary_init_seed = true;
  double fpr_target = 0.001;
  int histogram_bins = 30;
};

struct AuditConfig {
  DataConfig data;
  SkewConfig skew;
  SplitConfig split;
  TrainConfig train;
  std::vector<Index> hidden{32, 16};
  TrainConfig attack_train;
  Intervention intervention;
  std::vector<AttackKind> attacks;
  std::optional<DpSpec> dp;
  int n_shadows = 32;
  std::uint64_t master_seed = 1;
  std::string output_dir = "out";
  AuditOptions options;

  void validate() const;
};

/// Strict parse: every key must be known, fd attacks require an intervention.
AuditConfig parse_config(const nlohmann::json& j);
nlohmann::json config_to_json(const AuditConfig& cfg);

/// Named column schemas for the public tabular benchmarks.
TabularSchema preset_schema(const std::string& name);

struct ModelReportEntry {
  std::string model;  // "bias" | "fair"
  FairnessReport fairness;
};

struct AttackReportEntry {
  std::string attack;  // "score" | "lira" | "fd_score" | "fd_lira"
  std::string model;   // "bias" | "fair" | "pair"
  AttackOutcome outcome;
  MembershipScores scores;
};

struct NamedHistogram {
  std::string name;
  Histogram hist;
};

struct StageError {
  std::string stage;
  std::string message;
};

struct AuditReport {
  std::string config_hash;
  std::uint64_t master_seed = 0;
  double wall_clock_seconds = 0.0;
  std::optional<double> epsilon;
  std::vector<std::int64_t> audit_ids;  // members first, then non-members
  std::vector<int> truth_member;        // aligned with audit_ids
  std::vector<ModelReportEntry> models;
  std::vector<AttackReportEntry> attacks;
  std::vector<NamedHistogram> histograms;
  std::vector<StageError> errors;
  nlohmann::json config;
};

/// The full pipeline: skewed member data, biased + intervened target models,
/// shadow ensemble, every requested attack on the single models and on the
/// pair, fairness and attack metrics, histograms. A stage failure is recorded
/// under its stage tag and the partial report is still returned.
AuditReport run_audit(const AuditConfig& cfg);

nlohmann::json report_to_json(const AuditReport& report);
AuditReport report_from_json(const nlohmann::json& j);

/// Writes report.json, summary.csv, roc_<attack>.csv, hist_<name>.csv and
/// per_example_<attack>.csv into out_dir.
void emit_report(const AuditReport& report, const std::string& out_dir);

struct PerSampleRow {
  std::int64_t id = 0;
  double mean_loss_bias = 0.0;
  double mean_loss_fair = 0.0;
  double success_rate_bias = 0.0;
  double success_rate_fair = 0.0;
};

/// Decisions for the member rows of one run; replaceable for testing.
using MemberAttackFn = std::function<IntVector(
    const ModelPair& pair, ModelKind which, const Dataset& members)>;

/// Repeats the audit across n_runs split/init seeds and aggregates the naive
/// score attack's per-member-example success rate and model loss.
std::vector<PerSampleRow> per_sample_success(const AuditConfig& cfg, int n_runs,
                                             const MemberAttackFn& attack = {});

void write_per_sample_csv(const std::vector<PerSampleRow>& rows,
                          const std::string& path);

struct SweepCell {
  std::size_t index = 0;
  std::vector<std::pair<std::string, nlohmann::json>> coordinates;
  AuditReport report;
  std::string error;  // empty on success
};

struct SweepResult {
  std::vector<std::string> grid_keys;
  std::vector<SweepCell> cells;
};

/// Cartesian product over the grid, one audit per cell. `grid` maps
/// dotted config paths to value lists. Cell failures are isolated.
SweepResult sweep(const nlohmann::json& base_config, const nlohmann::json& grid);

void emit_sweep(const SweepResult& result, const std::string& out_dir);

std::string config_hash(const nlohmann::json& canonical);

}  // namespace fairaudit
