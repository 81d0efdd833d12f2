#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fairaudit/errors.hpp"
#include "fairaudit/harness.hpp"
#include "testutil.hpp"

using namespace fairaudit;
using nlohmann::json;

namespace {

json tiny_config(const std::string& intervention = "none") {
  json j = {
      {"dataset",
       {{"kind", "synthetic"},
        {"synth",
         {{"n_examples", 1600}, {"n_features", 6}, {"class_gap", 3.0},
          {"group_gap", 1.0}, {"seed", 7}}}}},
      {"skew", {{"majority_fraction", 0.9}, {"majority_group", 0}, {"n_total", 400}}},
      {"split", {{"shadow_fraction", 0.5}, {"shadow_overlaps_audit", true}}},
      {"train",
       {{"epochs", 8}, {"batch_size", 32}, {"learning_rate", 0.1},
        {"momentum", 0.9}, {"l2", 0.0}, {"hidden", {8, 4}}}},
      {"attack_train",
       {{"epochs", 8}, {"batch_size", 64}, {"learning_rate", 0.05}}},
      {"intervention", {{"kind", intervention}}},
      {"attacks", {"score"}},
      {"n_shadows", 4},
      {"master_seed", 3},
  };
  return j;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("a minimal config parses with defaults") {
    const AuditConfig cfg = parse_config(tiny_config());
    CHECK(cfg.n_shadows == 4);
    CHECK(cfg.train.epochs == 8);
    CHECK(cfg.options.deo_mode == DeoMode::SumOfGaps);
  }
  SUBCASE("unknown keys are rejected with their path") {
    json j = tiny_config();
    j["skew"]["typo_key"] = 1;
    CHECK_THROWS_WITH_AS(parse_config(j), doctest::Contains("skew.typo_key"),
                         ConfigError);
  }
  SUBCASE("fd attacks require an intervention") {
    json j = tiny_config("none");
    j["attacks"] = {"fd_score"};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
  }
  SUBCASE("unknown attack kinds are rejected") {
    json j = tiny_config();
    j["attacks"] = {"scores"};
    CHECK_THROWS_AS(parse_config(j), ConfigError);
  }
  SUBCASE("presets resolve to full schemas") {
    const TabularSchema adult = preset_schema("adult");
    CHECK(adult.target_column == "income");
    CHECK(adult.sensitive_column == "sex");
    adult.validate();
    const TabularSchema compas = preset_schema("compas");
    CHECK(compas.sensitive_column == "race");
    compas.validate();
    CHECK_THROWS_AS(preset_schema("unknown"), ConfigError);
  }
  SUBCASE("config round-trips through its canonical json") {
    const AuditConfig cfg = parse_config(tiny_config("mixup"));
    const AuditConfig back = parse_config(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
  }
}

TEST_CASE("minimal pipeline: no intervention, one attack") {
  const AuditConfig cfg = parse_config(tiny_config("none"));
  const AuditReport report = run_audit(cfg);
  for (const auto& e : report.errors)
    MESSAGE("stage ", e.stage, ": ", e.message);
  CHECK(report.errors.empty());
  REQUIRE(report.models.size() == 1);  // only the biased model
  CHECK(report.models[0].model == "bias");
  REQUIRE(report.attacks.size() == 1);
  CHECK(report.attacks[0].attack == "score");
  CHECK(report.attacks[0].model == "bias");
  CHECK(report.attacks[0].scores.ids.size() == 200);  // 100 members + 100 non
  CHECK(report.audit_ids.size() == 200);
}

TEST_CASE("full pipeline with mixup runs all four attacks") {
  json j = tiny_config("mixup");
  j["attacks"] = {"score", "lira", "fd_score", "fd_lira"};
  const AuditConfig cfg = parse_config(j);
  const AuditReport report = run_audit(cfg);
  for (const auto& e : report.errors)
    MESSAGE("stage ", e.stage, ": ", e.message);
  CHECK(report.errors.empty());
  CHECK(report.models.size() == 2);
  // score x {bias, fair}, lira x {bias, fair}, fd_score, fd_lira
  CHECK(report.attacks.size() == 6);
  CHECK(report.histograms.size() == 7);
}

TEST_CASE("reports are byte-deterministic modulo wall clock") {
  const AuditConfig cfg = parse_config(tiny_config("reweight"));
  json a = report_to_json(run_audit(cfg));
  json b = report_to_json(run_audit(cfg));
  a.erase("wall_clock_seconds");
  b.erase("wall_clock_seconds");
  CHECK(a.dump() == b.dump());
}

TEST_CASE("report json round-trips") {
  const AuditConfig cfg = parse_config(tiny_config("none"));
  const AuditReport report = run_audit(cfg);
  const json j = report_to_json(report);
  const AuditReport back = report_from_json(j);
  CHECK(report_to_json(back).dump() == j.dump());
}

TEST_CASE("emit_report writes the documented files") {
  namespace fs = std::filesystem;
  const std::string dir = "emit_test_out";
  fs::remove_all(dir);
  json j = tiny_config("mixup");
  j["attacks"] = {"score"};
  const AuditConfig cfg = parse_config(j);
  const AuditReport report = run_audit(cfg);
  emit_report(report, dir);

  CHECK(fs::exists(dir + "/report.json"));
  CHECK(fs::exists(dir + "/summary.csv"));
  CHECK(fs::exists(dir + "/roc_score_bias.csv"));
  CHECK(fs::exists(dir + "/roc_score_fair.csv"));
  CHECK(fs::exists(dir + "/per_example_score_bias.csv"));
  CHECK(fs::exists(dir + "/hist_gap_pair.csv"));

  std::ifstream in(dir + "/summary.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "attack,model,acc_t,ba,deo,acc_a,auc_a,tpr_at_fpr");

  std::ifstream pe(dir + "/per_example_score_bias.csv");
  std::getline(pe, header);
  CHECK(header == "example_id,truth_member,score_raw,decision,attack_kind,model_kind");

  std::ifstream roc(dir + "/roc_score_bias.csv");
  std::getline(roc, header);
  CHECK(header == "threshold,fpr,tpr");

  std::ifstream hist(dir + "/hist_gap_pair.csv");
  std::getline(hist, header);
  CHECK(header == "bin_left,bin_right,count");
  fs::remove_all(dir);
}

TEST_CASE("summary has only fairness rows when no attacks are requested") {
  namespace fs = std::filesystem;
  const std::string dir = "emit_test_noattack";
  fs::remove_all(dir);
  json j = tiny_config("none");
  j["attacks"] = json::array();
  const AuditConfig cfg = parse_config(j);
  const AuditReport report = run_audit(cfg);
  CHECK(report.attacks.empty());
  emit_report(report, dir);
  std::ifstream in(dir + "/summary.csv");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2);  // header + bias fairness row
  fs::remove_all(dir);
}

TEST_CASE("per-sample analysis with an always-correct stub yields rate 1") {
  json j = tiny_config("reweight");
  j["split"]["shadow_fraction"] = 0.5;
  const AuditConfig cfg = parse_config(j);
  const MemberAttackFn stub = [](const ModelPair&, ModelKind,
                                 const Dataset& members) {
    return IntVector::Ones(members.n_examples()).eval();
  };
  const auto rows = per_sample_success(cfg, 2, stub);
  CHECK(!rows.empty());
  for (const auto& r : rows) {
    CHECK(r.success_rate_bias == 1.0);
    CHECK(r.success_rate_fair == 1.0);
    CHECK(r.mean_loss_bias > 0.0);
  }
  CHECK_THROWS_AS(per_sample_success(cfg, 1, stub), ConfigError);
}

TEST_CASE("sweep runs every grid cell and isolates failures") {
  json base = tiny_config("reweight");
  base["attacks"] = json::array();
  json grid = {{"skew.majority_fraction", {0.9, 0.7}}};
  const SweepResult result = sweep(base, grid);
  REQUIRE(result.cells.size() == 2);
  CHECK(result.cells[0].error.empty());
  CHECK(result.cells[1].error.empty());

  // A cell with an impossible skew request fails alone.
  json bad_grid = {{"skew.n_total", {400, 100000}}};
  const SweepResult mixed = sweep(base, bad_grid);
  REQUIRE(mixed.cells.size() == 2);
  CHECK(mixed.cells[0].error.empty());
  CHECK(!mixed.cells[1].error.empty());
}

TEST_CASE("csv sources flow through the pipeline") {
  namespace fs = std::filesystem;
  const std::string path = "census_fixture.csv";
  {
    std::ofstream out(path);
    out << testutil::make_census_csv(3000, 5);
  }
  json j = tiny_config("reweight");
  j["dataset"] = {{"kind", "csv"}, {"path", path}, {"preset", "adult"}};
  j["skew"]["n_total"] = 300;
  const AuditConfig cfg = parse_config(j);
  const AuditReport report = run_audit(cfg);
  for (const auto& e : report.errors)
    MESSAGE("stage ", e.stage, ": ", e.message);
  CHECK(report.errors.empty());
  CHECK(report.models.size() == 2);
  fs::remove(path);
}

TEST_CASE("a data-stage failure still emits a tagged partial report") {
  json j = tiny_config("none");
  j["dataset"] = {{"kind", "csv"}, {"path", "missing_file.csv"}, {"preset", "adult"}};
  const AuditConfig cfg = parse_config(j);
  const AuditReport report = run_audit(cfg);
  REQUIRE(!report.errors.empty());
  CHECK(report.errors[0].stage == "data");
  CHECK(report.models.empty());
}
