#include "fairaudit/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fairaudit/errors.hpp"
#include "fairaudit/rng.hpp"

namespace fairaudit {

namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError(path + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown key " + path + "." + key);
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

TrainConfig parse_train(const json& j, const std::string& path,
                        const TrainConfig& defaults) {
  check_keys(j, path,
             {"epochs", "batch_size", "learning_rate", "momentum", "l2", "hidden"});
  TrainConfig cfg = defaults;
  cfg.epochs = get_or(j, "epochs", cfg.epochs);
  cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
  cfg.learning_rate = get_or(j, "learning_rate", cfg.learning_rate);
  cfg.momentum = get_or(j, "momentum", cfg.momentum);
  cfg.l2 = get_or(j, "l2", cfg.l2);
  cfg.validate();
  return cfg;
}

}  // namespace

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::Score: return "score";
    case AttackKind::Lira: return "lira";
    case AttackKind::FdScore: return "fd_score";
    case AttackKind::FdLira: return "fd_lira";
  }
  return "score";
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "score") return AttackKind::Score;
  if (s == "lira") return AttackKind::Lira;
  if (s == "fd_score") return AttackKind::FdScore;
  if (s == "fd_lira") return AttackKind::FdLira;
  throw ConfigError("unknown attack kind: " + s);
}

TabularSchema preset_schema(const std::string& name) {
  TabularSchema s;
  if (name == "adult") {
    s.feature_columns = {{"age", ColumnKind::Numeric},
                         {"workclass", ColumnKind::Categorical},
                         {"education_num", ColumnKind::Numeric},
                         {"marital_status", ColumnKind::Categorical},
                         {"occupation", ColumnKind::Categorical},
                         {"capital_gain", ColumnKind::Numeric},
                         {"capital_loss", ColumnKind::Numeric},
                         {"hours_per_week", ColumnKind::Numeric}};
    s.target_column = "income";
    s.target_positive_value = ">50K";
    s.sensitive_column = "sex";
    s.sensitive_s1_value = "Female";
  } else if (name == "compas") {
    s.feature_columns = {{"age", ColumnKind::Numeric},
                         {"priors_count", ColumnKind::Numeric},
                         {"juv_fel_count", ColumnKind::Numeric},
                         {"c_charge_degree", ColumnKind::Categorical},
                         {"sex", ColumnKind::Categorical}};
    s.target_column = "two_year_recid";
    s.target_positive_value = "1";
    s.sensitive_column = "race";
    s.sensitive_s1_value = "African-American";
  } else {
    throw ConfigError("unknown dataset preset: " + name);
  }
  return s;
}

void AuditConfig::validate() const {
  skew.validate();
  train.validate();
  attack_train.validate();
  intervention.validate();
  if (hidden.empty()) throw ConfigError("target model needs at least one hidden layer");
  if (n_shadows < 2) throw ConfigError("n_shadows must be at least 2");
  if (!(split.shadow_fraction >= 0.0 && split.shadow_fraction < 1.0))
    throw ConfigError("shadow_fraction must lie in [0, 1)");
  if (dp) dp->config.validate();
  const bool has_fair = intervention.kind != InterventionKind::None;
  for (AttackKind a : attacks)
    if ((a == AttackKind::FdScore || a == AttackKind::FdLira) && !has_fair)
      throw ConfigError("fd attacks require an intervention so a fair model exists");
  if (data.kind == DataSourceKind::Csv) {
    if (data.path.empty()) throw ConfigError("csv dataset needs a path");
    data.schema.validate();
  }
  if (!(options.fpr_target > 0.0 && options.fpr_target < 1.0))
    throw ConfigError("fpr_target must lie in (0, 1)");
}

AuditConfig parse_config(const json& j) {
  check_keys(j, "config",
             {"dataset", "skew", "split", "train", "attack_train", "intervention",
              "attacks", "dp", "n_shadows", "master_seed", "output_dir", "options"});
  AuditConfig cfg;

  const json& data = j.at("dataset");
  check_keys(data, "dataset", {"kind", "path", "preset", "schema", "synth"});
  const std::string kind = data.at("kind").get<std::string>();
  if (kind == "synthetic") {
    cfg.data.kind = DataSourceKind::Synthetic;
    if (data.contains("synth")) {
      const json& sy = data.at("synth");
      check_keys(sy, "dataset.synth",
                 {"n_examples", "n_features", "class_gap", "group_gap", "seed"});
      cfg.data.synth.n_examples = get_or<Index>(sy, "n_examples", cfg.data.synth.n_examples);
      cfg.data.synth.n_features = get_or<Index>(sy, "n_features", cfg.data.synth.n_features);
      cfg.data.synth.class_gap = get_or(sy, "class_gap", cfg.data.synth.class_gap);
      cfg.data.synth.group_gap = get_or(sy, "group_gap", cfg.data.synth.group_gap);
      cfg.data.synth.seed = get_or<std::uint64_t>(sy, "seed", cfg.data.synth.seed);
    }
  } else if (kind == "csv") {
    cfg.data.kind = DataSourceKind::Csv;
    cfg.data.path = data.at("path").get<std::string>();
    cfg.data.preset = get_or<std::string>(data, "preset", "");
    if (!cfg.data.preset.empty()) {
      cfg.data.schema = preset_schema(cfg.data.preset);
    } else if (data.contains("schema")) {
      const json& sc = data.at("schema");
      check_keys(sc, "dataset.schema", {"features", "target", "sensitive"});
      for (const json& f : sc.at("features")) {
        check_keys(f, "dataset.schema.features[]", {"name", "kind"});
        FeatureColumn fc;
        fc.name = f.at("name").get<std::string>();
        const std::string k = f.at("kind").get<std::string>();
        if (k == "numeric")
          fc.kind = ColumnKind::Numeric;
        else if (k == "categorical")
          fc.kind = ColumnKind::Categorical;
        else
          throw ConfigError("unknown column kind: " + k);
        cfg.data.schema.feature_columns.push_back(std::move(fc));
      }
      const json& t = sc.at("target");
      check_keys(t, "dataset.schema.target", {"column", "positive"});
      cfg.data.schema.target_column = t.at("column").get<std::string>();
      cfg.data.schema.target_positive_value = t.at("positive").get<std::string>();
      const json& sv = sc.at("sensitive");
      check_keys(sv, "dataset.schema.sensitive", {"column", "s1"});
      cfg.data.schema.sensitive_column = sv.at("column").get<std::string>();
      cfg.data.schema.sensitive_s1_value = sv.at("s1").get<std::string>();
    } else {
      throw ConfigError("csv dataset needs either a preset or a schema");
    }
  } else {
    throw ConfigError("dataset.kind must be synthetic or csv");
  }

  if (j.contains("skew")) {
    const json& sk = j.at("skew");
    check_keys(sk, "skew", {"majority_fraction", "majority_group", "n_total"});
    cfg.skew.majority_fraction = get_or(sk, "majority_fraction", cfg.skew.majority_fraction);
    cfg.skew.majority_group = get_or(sk, "majority_group", cfg.skew.majority_group);
    cfg.skew.n_total = get_or<Index>(sk, "n_total", cfg.skew.n_total);
  }
  if (j.contains("split")) {
    const json& sp = j.at("split");
    check_keys(sp, "split", {"shadow_fraction", "shadow_overlaps_audit"});
    cfg.split.shadow_fraction = get_or(sp, "shadow_fraction", cfg.split.shadow_fraction);
    cfg.split.shadow_overlaps_audit =
        get_or(sp, "shadow_overlaps_audit", cfg.split.shadow_overlaps_audit);
  }

  if (j.contains("train")) {
    cfg.train = parse_train(j.at("train"), "train", cfg.train);
    if (j.at("train").contains("hidden"))
      cfg.hidden = j.at("train").at("hidden").get<std::vector<Index>>();
  }
  {
    TrainConfig defaults;
    defaults.epochs = 30;
    defaults.batch_size = 64;
    defaults.learning_rate = 0.05;
    cfg.attack_train = defaults;
    if (j.contains("attack_train"))
      cfg.attack_train = parse_train(j.at("attack_train"), "attack_train", defaults);
  }

  if (j.contains("intervention")) {
    const json& iv = j.at("intervention");
    check_keys(iv, "intervention", {"kind", "params"});
    cfg.intervention.kind =
        intervention_kind_from_string(iv.at("kind").get<std::string>());
    if (iv.contains("params")) {
      const json& p = iv.at("params");
      check_keys(p, "intervention.params",
                 {"alpha", "gamma", "lambda_f", "lambda_adv"});
      cfg.intervention.mixup_alpha = get_or(p, "alpha", cfg.intervention.mixup_alpha);
      cfg.intervention.mixup_gamma = get_or(p, "gamma", cfg.intervention.mixup_gamma);
      cfg.intervention.lambda_f = get_or(p, "lambda_f", cfg.intervention.lambda_f);
      cfg.intervention.lambda_adv = get_or(p, "lambda_adv", cfg.intervention.lambda_adv);
    }
  }

  if (j.contains("attacks"))
    for (const json& a : j.at("attacks"))
      cfg.attacks.push_back(attack_kind_from_string(a.get<std::string>()));

  if (j.contains("dp") && !j.at("dp").is_null()) {
    const json& dp = j.at("dp");
    check_keys(dp, "dp", {"clip_norm", "noise_multiplier", "delta", "target_epsilon"});
    DpSpec spec;
    spec.config.clip_norm = get_or(dp, "clip_norm", spec.config.clip_norm);
    spec.config.noise_multiplier =
        get_or(dp, "noise_multiplier", spec.config.noise_multiplier);
    spec.config.delta = get_or(dp, "delta", spec.config.delta);
    if (dp.contains("target_epsilon"))
      spec.target_epsilon = dp.at("target_epsilon").get<double>();
    cfg.dp = spec;
  }

  cfg.n_shadows = get_or(j, "n_shadows", cfg.n_shadows);
  cfg.master_seed = get_or<std::uint64_t>(j, "master_seed", cfg.master_seed);
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir);

  if (j.contains("options")) {
    const json& o = j.at("options");
    check_keys(o, "options",
               {"warm_start", "withhold_scores", "lira_offline",
                "fd_shared_covariance", "deo_mode", "vary_split_seed",
                "vary_init_seed", "fpr_target", "histogram_bins"});
    cfg.options.warm_start = get_or(o, "warm_start", cfg.options.warm_start);
    cfg.options.withhold_scores =
        get_or(o, "withhold_scores", cfg.options.withhold_scores);
    cfg.options.lira_offline = get_or(o, "lira_offline", cfg.options.lira_offline);
    cfg.options.fd_shared_covariance =
        get_or(o, "fd_shared_covariance", cfg.options.fd_shared_covariance);
    const std::string mode = get_or<std::string>(o, "deo_mode", "sum");
    if (mode == "sum")
      cfg.options.deo_mode = DeoMode::SumOfGaps;
    else if (mode == "max")
      cfg.options.deo_mode = DeoMode::MaxGap;
    else
      throw ConfigError("deo_mode must be sum or max");
    cfg.options.vary_split_seed =
        get_or(o, "vary_split_seed", cfg.options.vary_split_seed);
    cfg.options.vary_init_seed =
        get_or(o, "vary_init_seed", cfg.options.vary_init_seed);
    cfg.options.fpr_target = get_or(o, "fpr_target", cfg.options.fpr_target);
    cfg.options.histogram_bins =
        get_or(o, "histogram_bins", cfg.options.histogram_bins);
  }

  cfg.validate();
  return cfg;
}

json config_to_json(const AuditConfig& cfg) {
  json j;
  json data;
  if (cfg.data.kind == DataSourceKind::Synthetic) {
    data["kind"] = "synthetic";
    data["synth"] = {{"n_examples", cfg.data.synth.n_examples},
                     {"n_features", cfg.data.synth.n_features},
                     {"class_gap", cfg.data.synth.class_gap},
                     {"group_gap", cfg.data.synth.group_gap},
                     {"seed", cfg.data.synth.seed}};
  } else {
    data["kind"] = "csv";
    data["path"] = cfg.data.path;
    if (!cfg.data.preset.empty()) data["preset"] = cfg.data.preset;
    json features = json::array();
    for (const auto& fc : cfg.data.schema.feature_columns)
      features.push_back(
          {{"name", fc.name},
           {"kind", fc.kind == ColumnKind::Numeric ? "numeric" : "categorical"}});
    data["schema"] = {
        {"features", features},
        {"target",
         {{"column", cfg.data.schema.target_column},
          {"positive", cfg.data.schema.target_positive_value}}},
        {"sensitive",
         {{"column", cfg.data.schema.sensitive_column},
          {"s1", cfg.data.schema.sensitive_s1_value}}}};
  }
  j["dataset"] = std::move(data);
  j["skew"] = {{"majority_fraction", cfg.skew.majority_fraction},
               {"majority_group", cfg.skew.majority_group},
               {"n_total", cfg.skew.n_total}};
  j["split"] = {{"shadow_fraction", cfg.split.shadow_fraction},
                {"shadow_overlaps_audit", cfg.split.shadow_overlaps_audit}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"momentum", cfg.train.momentum},
                {"l2", cfg.train.l2},
                {"hidden", cfg.hidden}};
  j["attack_train"] = {{"epochs", cfg.attack_train.epochs},
                       {"batch_size", cfg.attack_train.batch_size},
                       {"learning_rate", cfg.attack_train.learning_rate},
                       {"momentum", cfg.attack_train.momentum},
                       {"l2", cfg.attack_train.l2}};
  j["intervention"] = {{"kind", to_string(cfg.intervention.kind)},
                       {"params",
                        {{"alpha", cfg.intervention.mixup_alpha},
                         {"gamma", cfg.intervention.mixup_gamma},
                         {"lambda_f", cfg.intervention.lambda_f},
                         {"lambda_adv", cfg.intervention.lambda_adv}}}};
  json attacks = json::array();
  for (AttackKind a : cfg.attacks) attacks.push_back(to_string(a));
  j["attacks"] = std::move(attacks);
  if (cfg.dp) {
    json dp = {{"clip_norm", cfg.dp->config.clip_norm},
               {"noise_multiplier", cfg.dp->config.noise_multiplier},
               {"delta", cfg.dp->config.delta}};
    if (cfg.dp->target_epsilon) dp["target_epsilon"] = *cfg.dp->target_epsilon;
    j["dp"] = std::move(dp);
  }
  j["n_shadows"] = cfg.n_shadows;
  j["master_seed"] = cfg.master_seed;
  j["output_dir"] = cfg.output_dir;
  j["options"] = {
      {"warm_start", cfg.options.warm_start},
      {"withhold_scores", cfg.options.withhold_scores},
      {"lira_offline", cfg.options.lira_offline},
      {"fd_shared_covariance", cfg.options.fd_shared_covariance},
      {"deo_mode", cfg.options.deo_mode == DeoMode::SumOfGaps ? "sum" : "max"},
      {"vary_split_seed", cfg.options.vary_split_seed},
      {"vary_init_seed", cfg.options.vary_init_seed},
      {"fpr_target", cfg.options.fpr_target},
      {"histogram_bins", cfg.options.histogram_bins}};
  return j;
}

std::string config_hash(const json& canonical) {
  const std::string s = canonical.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

Dataset load_source(const AuditConfig& cfg) {
  if (cfg.data.kind == DataSourceKind::Synthetic) {
    const SynthSpec& s = cfg.data.synth;
    const SynthConfig sc = SynthConfig::biased_binary(s.n_examples, s.n_features,
                                                      s.class_gap, s.group_gap);
    return synth_generate(sc, s.seed);
  }
  std::ifstream in(cfg.data.path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file: " + cfg.data.path);
  std::stringstream buf;
  buf << in.rdbuf();
  return load_tabular(buf.str(), cfg.data.schema);
}

Vector per_example_loss(const Mlp& model, const Dataset& ds) {
  const PredScores p = forward(model, ds.features);
  Vector loss(ds.n_examples());
  for (Index i = 0; i < loss.size(); ++i) {
    const double py = ds.target[i] == 1 ? p.p_pos[i] : 1.0 - p.p_pos[i];
    loss[i] = -std::log(std::max(py, 1e-12));
  }
  return loss;
}

struct PipelineData {
  Dataset universe;
  AuditSplit split;
  Dataset members, nonmembers, audit, pool;
};

PipelineData prepare_data(const AuditConfig& cfg, std::uint64_t split_seed) {
  PipelineData d;
  const Dataset source = load_source(cfg);
  d.universe = skew_sample(source, cfg.skew,
                           derive_seed(cfg.master_seed, "skew", 0));
  d.split = split_audit(d.universe, cfg.split.shadow_fraction, split_seed,
                        cfg.split.shadow_overlaps_audit);
  const Standardizer st = fit_standardizer(d.universe, d.split.member_ids);
  const Dataset standardized = apply_standardizer(d.universe, st);
  d.members = standardized.subset(d.split.member_ids);
  d.nonmembers = standardized.subset(d.split.nonmember_ids);
  std::vector<std::int64_t> audit_ids = d.split.member_ids;
  audit_ids.insert(audit_ids.end(), d.split.nonmember_ids.begin(),
                   d.split.nonmember_ids.end());
  d.audit = standardized.subset(audit_ids);
  d.pool = standardized.subset(d.split.shadow_pool_ids);
  return d;
}

}  // namespace

AuditReport run_audit(const AuditConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  AuditReport report;
  report.config = config_to_json(cfg);
  report.config_hash = config_hash(report.config);
  report.master_seed = cfg.master_seed;

  auto stage = [&](const std::string& name, auto&& fn) -> bool {
    try {
      fn();
      return true;
    } catch (const std::exception& e) {
      report.errors.push_back({name, e.what()});
      return false;
    }
  };

  PipelineData data;
  bool ok = stage("data", [&] {
    data = prepare_data(cfg, derive_seed(cfg.master_seed, "split", 0));
    report.audit_ids = data.audit.ids;
    report.truth_member.assign(report.audit_ids.size(), 0);
    for (std::size_t i = 0; i < data.split.member_ids.size(); ++i)
      report.truth_member[i] = 1;
  });

  DpConfig dp_config;
  const DpConfig* dp = nullptr;
  if (ok && cfg.dp) {
    ok = stage("dp_calibration", [&] {
      dp_config = cfg.dp->config;
      const Index n = data.members.n_examples();
      const Index batches = (n + cfg.train.batch_size - 1) / cfg.train.batch_size;
      const std::int64_t steps =
          static_cast<std::int64_t>(cfg.train.epochs) * batches;
      dp_config.sampling_rate =
          std::min(1.0, static_cast<double>(cfg.train.batch_size) /
                            static_cast<double>(n));
      if (cfg.dp->target_epsilon && dp_config.noise_multiplier == 0.0)
        dp_config.noise_multiplier =
            sigma_for_epsilon(*cfg.dp->target_epsilon, dp_config.delta,
                              dp_config.sampling_rate, steps);
      if (dp_config.noise_multiplier > 0.0)
        report.epsilon = epsilon_estimate(dp_config, steps);
      dp = &dp_config;
    });
  }

  const bool has_fair = cfg.intervention.kind != InterventionKind::None;
  PairTrainOptions pair_opts;
  pair_opts.warm_start = cfg.options.warm_start;
  pair_opts.dp = dp;

  ModelPair target;
  if (ok)
    ok = stage("target_models", [&] {
      target = train_model_pair(data.members, cfg.train, cfg.hidden,
                                cfg.intervention,
                                derive_seed(cfg.master_seed, "target", 0),
                                pair_opts);
    });

  if (ok)
    stage("fairness_metrics", [&] {
      const PredScores pb = forward(target.bias, data.nonmembers.features);
      report.models.push_back(
          {"bias", fairness_report(pb.label, data.nonmembers.target,
                                   data.nonmembers.group, cfg.options.deo_mode)});
      if (has_fair) {
        const PredScores pf = forward(target.fair, data.nonmembers.features);
        report.models.push_back(
            {"fair", fairness_report(pf.label, data.nonmembers.target,
                                     data.nonmembers.group, cfg.options.deo_mode)});
      }
    });

  ShadowEnsemble ensemble;
  bool have_shadows = false;
  if (ok && !cfg.attacks.empty())
    have_shadows = stage("shadows", [&] {
      ensemble = train_shadows(data.pool, cfg.n_shadows, cfg.train, cfg.hidden,
                               cfg.intervention,
                               derive_seed(cfg.master_seed, "shadows", 0),
                               pair_opts);
    });

  const IntVector truth = Eigen::Map<const IntVector>(
      report.truth_member.data(), static_cast<Index>(report.truth_member.size()));

  auto add_attack = [&](const std::string& attack, const std::string& model,
                        MembershipScores scores) {
    AttackReportEntry entry;
    entry.attack = attack;
    entry.model = model;
    entry.outcome = evaluate_attack(scores, truth, cfg.options.fpr_target);
    entry.scores = std::move(scores);
    report.attacks.push_back(std::move(entry));
  };

  if (ok && have_shadows) {
    ScoreAttackConfig sa;
    sa.attack_train = cfg.attack_train;
    sa.withhold_scores = cfg.options.withhold_scores;
    LiraOptions lo;
    lo.offline = cfg.options.lira_offline;
    FdLiraOptions fo;
    fo.offline = cfg.options.lira_offline;
    fo.shared_covariance = cfg.options.fd_shared_covariance;

    for (AttackKind kind : cfg.attacks) {
      switch (kind) {
        case AttackKind::Score:
          stage("attack_score_bias", [&] {
            add_attack("score", "bias",
                       score_attack(ensemble, data.pool, target, ModelKind::Bias,
                                    AttackMode::Score, data.audit, sa));
          });
          if (has_fair)
            stage("attack_score_fair", [&] {
              add_attack("score", "fair",
                         score_attack(ensemble, data.pool, target,
                                      ModelKind::Fair, AttackMode::Score,
                                      data.audit, sa));
            });
          break;
        case AttackKind::Lira:
          stage("attack_lira_bias", [&] {
            add_attack("lira", "bias",
                       lira_attack(ensemble, target, ModelKind::Bias, data.audit,
                                   lo));
          });
          if (has_fair)
            stage("attack_lira_fair", [&] {
              add_attack("lira", "fair",
                         lira_attack(ensemble, target, ModelKind::Fair,
                                     data.audit, lo));
            });
          break;
        case AttackKind::FdScore:
          stage("attack_fd_score", [&] {
            add_attack("fd_score", "pair",
                       score_attack(ensemble, data.pool, target, ModelKind::Bias,
                                    AttackMode::FdScore, data.audit, sa));
          });
          break;
        case AttackKind::FdLira:
          stage("attack_fd_lira", [&] {
            add_attack("fd_lira", "pair",
                       fd_lira_attack(ensemble, target, data.audit, fo));
          });
          break;
      }
    }
  }

  if (ok)
    stage("histograms", [&] {
      const int bins = cfg.options.histogram_bins;
      const std::uint64_t hseed = derive_seed(cfg.master_seed, "hist", 0);
      const PredScores bm = forward(target.bias, data.members.features);
      const PredScores bn = forward(target.bias, data.nonmembers.features);
      report.histograms.push_back(
          {"scores_bias_member", histogram(bm.p_pos, 0.0, 1.0, bins)});
      report.histograms.push_back(
          {"scores_bias_nonmember", histogram(bn.p_pos, 0.0, 1.0, bins)});
      report.histograms.push_back(
          {"gap_bias", score_gap_histogram(bm.p_pos, bn.p_pos, bins, hseed)});
      if (has_fair) {
        const PredScores fm = forward(target.fair, data.members.features);
        const PredScores fn = forward(target.fair, data.nonmembers.features);
        report.histograms.push_back(
            {"scores_fair_member", histogram(fm.p_pos, 0.0, 1.0, bins)});
        report.histograms.push_back(
            {"scores_fair_nonmember", histogram(fn.p_pos, 0.0, 1.0, bins)});
        report.histograms.push_back(
            {"gap_fair", score_gap_histogram(fm.p_pos, fn.p_pos, bins, hseed)});
        Matrix pm(bm.p_pos.size(), 2), pn(bn.p_pos.size(), 2);
        pm << bm.p_pos, fm.p_pos;
        pn << bn.p_pos, fn.p_pos;
        report.histograms.push_back(
            {"gap_pair", score_gap_histogram2(pm, pn, bins, hseed, 0.0,
                                              std::sqrt(2.0))});
      }
    });

  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

namespace {

json roc_to_json(const RocCurve& curve) {
  json pts = json::array();
  for (const auto& p : curve.points)
    pts.push_back({{"threshold", p.threshold}, {"fpr", p.fpr}, {"tpr", p.tpr}});
  return pts;
}

RocCurve roc_from_json(const json& j) {
  RocCurve curve;
  for (const json& p : j)
    curve.points.push_back({p.at("threshold").get<double>(),
                            p.at("fpr").get<double>(), p.at("tpr").get<double>()});
  return curve;
}

json histogram_to_json(const Histogram& h) {
  return {{"edges", std::vector<double>(h.edges.data(), h.edges.data() + h.edges.size())},
          {"counts", h.counts},
          {"underflow", h.underflow},
          {"overflow", h.overflow}};
}

Histogram histogram_from_json(const json& j) {
  Histogram h;
  const auto edges = j.at("edges").get<std::vector<double>>();
  h.edges = Eigen::Map<const Vector>(edges.data(), static_cast<Index>(edges.size()));
  h.counts = j.at("counts").get<std::vector<std::int64_t>>();
  h.underflow = j.at("underflow").get<std::int64_t>();
  h.overflow = j.at("overflow").get<std::int64_t>();
  return h;
}

}  // namespace

json report_to_json(const AuditReport& report) {
  json j;
  j["config_hash"] = report.config_hash;
  j["master_seed"] = report.master_seed;
  j["wall_clock_seconds"] = report.wall_clock_seconds;
  if (report.epsilon) j["epsilon"] = *report.epsilon;
  j["audit_ids"] = report.audit_ids;
  j["truth_member"] = report.truth_member;
  json models = json::array();
  for (const auto& m : report.models)
    models.push_back({{"model", m.model},
                      {"acc_t", m.fairness.acc_t},
                      {"ba", m.fairness.ba},
                      {"deo", m.fairness.deo}});
  j["models"] = std::move(models);
  json attacks = json::array();
  for (const auto& a : report.attacks) {
    json entry;
    entry["attack"] = a.attack;
    entry["model"] = a.model;
    entry["acc_a"] = a.outcome.acc_a;
    entry["auc_a"] = a.outcome.auc_a;
    entry["tpr_at_low_fpr"] = a.outcome.tpr_at_low_fpr;
    entry["roc"] = roc_to_json(a.outcome.roc);
    entry["tau"] = a.scores.tau;
    entry["ids"] = a.scores.ids;
    entry["raw"] = std::vector<double>(a.scores.raw.data(),
                                       a.scores.raw.data() + a.scores.raw.size());
    entry["decision"] = std::vector<int>(
        a.scores.decision.data(), a.scores.decision.data() + a.scores.decision.size());
    attacks.push_back(std::move(entry));
  }
  j["attacks"] = std::move(attacks);
  json hists = json::array();
  for (const auto& h : report.histograms)
    hists.push_back({{"name", h.name}, {"data", histogram_to_json(h.hist)}});
  j["histograms"] = std::move(hists);
  json errors = json::array();
  for (const auto& e : report.errors)
    errors.push_back({{"stage", e.stage}, {"message", e.message}});
  j["errors"] = std::move(errors);
  j["config"] = report.config;
  return j;
}

AuditReport report_from_json(const json& j) {
  AuditReport r;
  r.config_hash = j.at("config_hash").get<std::string>();
  r.master_seed = j.at("master_seed").get<std::uint64_t>();
  r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  if (j.contains("epsilon")) r.epsilon = j.at("epsilon").get<double>();
  r.audit_ids = j.at("audit_ids").get<std::vector<std::int64_t>>();
  r.truth_member = j.at("truth_member").get<std::vector<int>>();
  for (const json& m : j.at("models")) {
    ModelReportEntry e;
    e.model = m.at("model").get<std::string>();
    e.fairness.acc_t = m.at("acc_t").get<double>();
    e.fairness.ba = m.at("ba").get<double>();
    e.fairness.deo = m.at("deo").get<double>();
    r.models.push_back(std::move(e));
  }
  for (const json& a : j.at("attacks")) {
    AttackReportEntry e;
    e.attack = a.at("attack").get<std::string>();
    e.model = a.at("model").get<std::string>();
    e.outcome.acc_a = a.at("acc_a").get<double>();
    e.outcome.auc_a = a.at("auc_a").get<double>();
    e.outcome.tpr_at_low_fpr = a.at("tpr_at_low_fpr").get<double>();
    e.outcome.roc = roc_from_json(a.at("roc"));
    const auto ids = a.at("ids").get<std::vector<std::int64_t>>();
    const auto raw = a.at("raw").get<std::vector<double>>();
    e.scores = make_membership_scores(
        ids, Eigen::Map<const Vector>(raw.data(), static_cast<Index>(raw.size())),
        a.at("tau").get<double>());
    r.attacks.push_back(std::move(e));
  }
  for (const json& h : j.at("histograms"))
    r.histograms.push_back(
        {h.at("name").get<std::string>(), histogram_from_json(h.at("data"))});
  for (const json& e : j.at("errors"))
    r.errors.push_back(
        {e.at("stage").get<std::string>(), e.at("message").get<std::string>()});
  r.config = j.at("config");
  return r;
}

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write: " + path);
  out << content;
  if (!out) throw IoError("write failed: " + path);
}

const FairnessReport* find_fairness(const AuditReport& report,
                                    const std::string& model) {
  for (const auto& m : report.models)
    if (m.model == model) return &m.fairness;
  return nullptr;
}

}  // namespace

void emit_report(const AuditReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  write_file(out_dir + "/report.json", report_to_json(report).dump(2) + "\n");

  // summary.csv: fairness-only rows first, then one row per attack x model.
  // Metric values in percent.
  std::ostringstream summary;
  summary << "attack,model,acc_t,ba,deo,acc_a,auc_a,tpr_at_fpr\n";
  auto fairness_cols = [&](const std::string& model) {
    const FairnessReport* f = find_fairness(report, model);
    if (!f) return std::string(",,");
    return fmt(100.0 * f->acc_t) + "," + fmt(100.0 * f->ba) + "," +
           fmt(100.0 * f->deo);
  };
  for (const auto& m : report.models)
    summary << "," << m.model << "," << fairness_cols(m.model) << ",,,\n";
  for (const auto& a : report.attacks) {
    summary << a.attack << "," << a.model << "," << fairness_cols(a.model) << ","
            << fmt(100.0 * a.outcome.acc_a) << "," << fmt(100.0 * a.outcome.auc_a)
            << "," << fmt(100.0 * a.outcome.tpr_at_low_fpr) << "\n";
  }
  write_file(out_dir + "/summary.csv", summary.str());

  for (const auto& a : report.attacks) {
    const std::string tag = a.attack + "_" + a.model;
    std::ostringstream roc;
    roc << "threshold,fpr,tpr\n";
    for (const auto& p : a.outcome.roc.points)
      roc << fmt(p.threshold) << "," << fmt(p.fpr) << "," << fmt(p.tpr) << "\n";
    write_file(out_dir + "/roc_" + tag + ".csv", roc.str());

    std::ostringstream pe;
    pe << "example_id,truth_member,score_raw,decision,attack_kind,model_kind\n";
    for (std::size_t i = 0; i < a.scores.ids.size(); ++i)
      pe << a.scores.ids[i] << "," << report.truth_member[i] << ","
         << fmt(a.scores.raw[static_cast<Index>(i)]) << ","
         << a.scores.decision[static_cast<Index>(i)] << "," << a.attack << ","
         << a.model << "\n";
    write_file(out_dir + "/per_example_" + tag + ".csv", pe.str());
  }

  for (const auto& h : report.histograms) {
    std::ostringstream hist;
    hist << "bin_left,bin_right,count\n";
    for (std::size_t b = 0; b < h.hist.counts.size(); ++b)
      hist << fmt(h.hist.edges[static_cast<Index>(b)]) << ","
           << fmt(h.hist.edges[static_cast<Index>(b) + 1]) << ","
           << h.hist.counts[b] << "\n";
    write_file(out_dir + "/hist_" + h.name + ".csv", hist.str());
  }
}

std::vector<PerSampleRow> per_sample_success(const AuditConfig& cfg, int n_runs,
                                             const MemberAttackFn& attack) {
  if (n_runs < 2) throw ConfigError("per-sample analysis needs at least 2 runs");
  if (cfg.intervention.kind == InterventionKind::None)
    throw ConfigError("per-sample analysis needs an intervention");
  cfg.validate();

  struct Acc {
    double loss_bias = 0, loss_fair = 0, hit_bias = 0, hit_fair = 0;
    int runs = 0;
  };
  std::map<std::int64_t, Acc> acc;

  for (int r = 0; r < n_runs; ++r) {
    const std::uint64_t split_seed = derive_seed(
        cfg.master_seed, "ps_split",
        cfg.options.vary_split_seed ? static_cast<std::uint64_t>(r) : 0);
    const std::uint64_t init_seed = derive_seed(
        cfg.master_seed, "ps_train",
        cfg.options.vary_init_seed ? static_cast<std::uint64_t>(r) : 0);

    PipelineData data = prepare_data(cfg, split_seed);
    PairTrainOptions pair_opts;
    pair_opts.warm_start = cfg.options.warm_start;
    const ModelPair pair = train_model_pair(data.members, cfg.train, cfg.hidden,
                                            cfg.intervention, init_seed,
                                            pair_opts);

    const Vector loss_bias = per_example_loss(pair.bias, data.members);
    const Vector loss_fair = per_example_loss(pair.fair, data.members);

    IntVector dec_bias, dec_fair;
    if (attack) {
      dec_bias = attack(pair, ModelKind::Bias, data.members);
      dec_fair = attack(pair, ModelKind::Fair, data.members);
    } else {
      const ShadowEnsemble ensemble = train_shadows(
          data.pool, cfg.n_shadows, cfg.train, cfg.hidden, cfg.intervention,
          derive_seed(init_seed, "ps_shadows", 0), pair_opts);
      ScoreAttackConfig sa;
      sa.attack_train = cfg.attack_train;
      sa.withhold_scores = cfg.options.withhold_scores;
      dec_bias = score_attack(ensemble, data.pool, pair, ModelKind::Bias,
                              AttackMode::Score, data.members, sa)
                     .decision;
      dec_fair = score_attack(ensemble, data.pool, pair, ModelKind::Fair,
                              AttackMode::Score, data.members, sa)
                     .decision;
    }

    for (Index i = 0; i < data.members.n_examples(); ++i) {
      Acc& a = acc[data.members.ids[i]];
      a.loss_bias += loss_bias[i];
      a.loss_fair += loss_fair[i];
      a.hit_bias += dec_bias[i] == 1;
      a.hit_fair += dec_fair[i] == 1;
      ++a.runs;
    }
  }

  std::vector<PerSampleRow> rows;
  rows.reserve(acc.size());
  for (const auto& [id, a] : acc) {
    PerSampleRow row;
    row.id = id;
    row.mean_loss_bias = a.loss_bias / a.runs;
    row.mean_loss_fair = a.loss_fair / a.runs;
    row.success_rate_bias = a.hit_bias / a.runs;
    row.success_rate_fair = a.hit_fair / a.runs;
    rows.push_back(row);
  }
  return rows;
}

void write_per_sample_csv(const std::vector<PerSampleRow>& rows,
                          const std::string& path) {
  std::ostringstream out;
  out << "example_id,mean_loss_bias,mean_loss_fair,success_rate_bias,"
         "success_rate_fair\n";
  for (const auto& r : rows)
    out << r.id << "," << fmt(r.mean_loss_bias) << "," << fmt(r.mean_loss_fair)
        << "," << fmt(r.success_rate_bias) << "," << fmt(r.success_rate_fair)
        << "\n";
  write_file(path, out.str());
}

namespace {

void set_by_path(json& j, const std::string& dotted, const json& value) {
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

SweepResult sweep(const json& base_config, const json& grid) {
  if (!grid.is_object() || grid.empty())
    throw ConfigError("sweep grid must be a non-empty JSON object");
  SweepResult result;
  std::vector<std::vector<json>> values;
  for (const auto& [key, vals] : grid.items()) {
    if (!vals.is_array() || vals.empty())
      throw ConfigError("grid entry " + key + " must be a non-empty array");
    result.grid_keys.push_back(key);
    values.push_back(std::vector<json>(vals.begin(), vals.end()));
  }

  std::vector<std::size_t> odo(values.size(), 0);
  std::size_t cell_index = 0;
  for (;;) {
    SweepCell cell;
    cell.index = cell_index++;
    json patched = base_config;
    for (std::size_t k = 0; k < values.size(); ++k) {
      cell.coordinates.emplace_back(result.grid_keys[k], values[k][odo[k]]);
      set_by_path(patched, result.grid_keys[k], values[k][odo[k]]);
    }
    try {
      const AuditConfig cfg = parse_config(patched);
      cell.report = run_audit(cfg);
      for (const auto& e : cell.report.errors) {
        cell.error = "[" + e.stage + "] " + e.message;
        break;
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    result.cells.push_back(std::move(cell));

    std::size_t k = 0;
    for (; k < odo.size(); ++k) {
      if (++odo[k] < values[k].size()) break;
      odo[k] = 0;
    }
    if (k == odo.size()) break;
  }
  return result;
}

void emit_sweep(const SweepResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);

  std::ostringstream csv;
  csv << "cell";
  for (const auto& key : result.grid_keys) csv << "," << key;
  csv << ",model,attack,acc_t,ba,deo,acc_a,auc_a,tpr_at_fpr,error\n";

  for (const auto& cell : result.cells) {
    char name[32];
    std::snprintf(name, sizeof(name), "cell_%03zu", cell.index);
    const std::string cell_dir = out_dir + "/" + name;
    auto coords = [&] {
      std::string s;
      for (const auto& [key, value] : cell.coordinates) s += "," + value.dump();
      return s;
    }();
    if (!cell.error.empty()) {
      fs::create_directories(cell_dir, ec);
      write_file(cell_dir + "/error.txt", cell.error + "\n");
      csv << cell.index << coords << ",,,,,,,," << "\"" << cell.error << "\"\n";
      continue;
    }
    emit_report(cell.report, cell_dir);
    for (const auto& m : cell.report.models)
      csv << cell.index << coords << "," << m.model << ",,"
          << fmt(100.0 * m.fairness.acc_t) << "," << fmt(100.0 * m.fairness.ba)
          << "," << fmt(100.0 * m.fairness.deo) << ",,,\n";
    for (const auto& a : cell.report.attacks) {
      const FairnessReport* f = find_fairness(cell.report, a.model);
      csv << cell.index << coords << "," << a.model << "," << a.attack << ",";
      if (f)
        csv << fmt(100.0 * f->acc_t) << "," << fmt(100.0 * f->ba) << ","
            << fmt(100.0 * f->deo);
      else
        csv << ",,";
      csv << "," << fmt(100.0 * a.outcome.acc_a) << ","
          << fmt(100.0 * a.outcome.auc_a) << ","
          << fmt(100.0 * a.outcome.tpr_at_low_fpr) << ",\n";
    }
  }
  write_file(out_dir + "/sweep.csv", csv.str());
}

}  // namespace fairaudit
