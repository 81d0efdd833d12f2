#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fairaudit/errors.hpp"
#include "fairaudit/harness.hpp"
#include "fairaudit/tinynn.hpp"

namespace {

using fairaudit::AuditConfig;
using nlohmann::json;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fairaudit::IoError("cannot open: " + path);
  json j;
  in >> j;
  return j;
}

int report_errors(const fairaudit::AuditReport& report) {
  for (const auto& e : report.errors)
    std::cerr << "[" << e.stage << "] " << e.message << "\n";
  return report.errors.empty() ? 0 : 1;
}

void pretty_print_summary(const std::string& dir) {
  std::ifstream in(dir + "/summary.csv");
  if (!in) throw fairaudit::IoError("cannot open: " + dir + "/summary.csv");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  std::vector<std::size_t> width;
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c >= width.size()) width.push_back(0);
      width[c] = std::max(width[c], row[c].size());
    }
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      std::cout << std::left << std::setw(static_cast<int>(width[c]) + 2)
                << (row[c].empty() ? "-" : row[c]);
    std::cout << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairness/privacy audit: biased vs intervened classifiers under "
               "membership inference"};
  app.require_subcommand(1);

  std::string config_path, grid_path, out_dir = "out", in_dir;
  int runs = 20;

  auto* cmd_run = app.add_subcommand("run", "run one end-to-end audit");
  cmd_run->add_option("--config", config_path, "audit config JSON")->required();
  cmd_run->add_option("--out", out_dir, "output directory");

  auto* cmd_sweep = app.add_subcommand("sweep", "grid of audits");
  cmd_sweep->add_option("--config", config_path, "base config JSON")->required();
  cmd_sweep->add_option("--grid", grid_path, "grid JSON: dotted path -> values")
      ->required();
  cmd_sweep->add_option("--out", out_dir, "output directory");

  auto* cmd_ps = app.add_subcommand("per-sample",
                                    "repeated-run per-example success rates");
  cmd_ps->add_option("--config", config_path, "audit config JSON")->required();
  cmd_ps->add_option("--runs", runs, "number of repeated runs");
  cmd_ps->add_option("--out", out_dir, "output directory");

  auto* cmd_gc = app.add_subcommand("grad-check",
                                    "finite-difference gradient self-check");

  auto* cmd_report = app.add_subcommand("report", "pretty-print a summary.csv");
  cmd_report->add_option("--in", in_dir, "audit output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_run) {
      const AuditConfig cfg = fairaudit::parse_config(load_json(config_path));
      const fairaudit::AuditReport report = fairaudit::run_audit(cfg);
      fairaudit::emit_report(report, out_dir);
      std::cout << "report written to " << out_dir << "\n";
      return report_errors(report);
    }
    if (*cmd_sweep) {
      const fairaudit::SweepResult result =
          fairaudit::sweep(load_json(config_path), load_json(grid_path));
      fairaudit::emit_sweep(result, out_dir);
      int failed = 0;
      for (const auto& cell : result.cells)
        if (!cell.error.empty()) {
          std::cerr << "[cell_" << cell.index << "] " << cell.error << "\n";
          ++failed;
        }
      std::cout << result.cells.size() << " cells written to " << out_dir << "\n";
      return failed ? 1 : 0;
    }
    if (*cmd_ps) {
      const AuditConfig cfg = fairaudit::parse_config(load_json(config_path));
      const auto rows = fairaudit::per_sample_success(cfg, runs);
      std::filesystem::create_directories(out_dir);
      fairaudit::write_per_sample_csv(rows, out_dir + "/per_sample.csv");
      std::cout << rows.size() << " examples written to " << out_dir
                << "/per_sample.csv\n";
      return 0;
    }
    if (*cmd_gc) {
      double worst = 0.0;
      for (std::uint64_t s = 0; s < 100; ++s)
        worst = std::max(worst, fairaudit::grad_check_random(s));
      std::cout << "max relative error over 100 random (model, batch) pairs: "
                << worst << "\n";
      if (worst >= 1e-5) {
        std::cerr << "[grad-check] exceeded tolerance 1e-5\n";
        return 1;
      }
      return 0;
    }
    if (*cmd_report) {
      pretty_print_summary(in_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "[fatal] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
