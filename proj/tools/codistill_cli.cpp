// Copyright 2026 The Codistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// codistill: experiment harness for federated co-distillation.
//
//   codistill run <config> [--threads N]
//   codistill validate <config>
//   codistill report <results> [--group-by strategy,skew]
//   codistill gradcheck [--configs 5] [--seed 0]

#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "codistill/experiment.hpp"
#include "codistill/gradcheck.hpp"

namespace {

using namespace codistill;

constexpr int kExitCellFailures = 1;
constexpr int kExitUsage = 2;

std::vector<std::string> split_keys(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string k; std::getline(in, k, ',');)
    if (!k.empty()) out.push_back(k);
  return out;
}

int cmd_run(const std::string& config, int threads) {
  exp::ExperimentPlan plan = exp::parse_config(config);
  exp::apply_output_dir_override(plan);
  if (threads > 0) plan.threads = threads;
  const auto cells = exp::enumerate_cells(plan);
  std::cerr << "running " << cells.size() << " cells\n";
  std::size_t done = 0;
  const exp::ResultsTable table = exp::run_experiment(plan, [&](const exp::ResultsRow& r) {
    ++done;
    std::cerr << '[' << done << '/' << cells.size() << "] " << r.strategy << " clients=" << r.clients
              << " skew=" << r.skew << " images=" << r.images_per_class << " seed=" << r.seed << ": ";
    if (r.ok) std::cerr << "mean minority acc " << r.mean_accuracy << " (" << r.wall_seconds << " s)\n";
    else std::cerr << "FAILED " << r.error << '\n';
  });
  exp::emit_results(table, plan.format, plan.output);
  exp::emit_timings(table, plan.output.string() + ".timing.csv");
  std::cerr << "wrote " << plan.output.string() << '\n';
  try {
    std::cout << exp::pivot_report(table, {"strategy", "skew"});
  } catch (const std::invalid_argument&) {
  }
  return table.all_ok() ? 0 : kExitCellFailures;
}

int cmd_validate(const std::string& config) {
  const exp::ExperimentPlan plan = exp::parse_config(config);
  std::cout << "ok: " << exp::enumerate_cells(plan).size() << " cells, " << plan.rounds << " rounds each\n";
  return 0;
}

int cmd_report(const std::string& results, const std::string& group_by) {
  std::cout << exp::pivot_report(exp::parse_results(results), split_keys(group_by));
  return 0;
}

int cmd_gradcheck(int configs, std::uint64_t seed) {
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  for (const auto& r : nn::gradient_check_suite(configs, seed)) {
    const bool pass = r.max_relative_error < kTolerance;
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " kernels " << r.arch.conv1_kernel << '/' << r.arch.conv2_kernel
              << " widths " << r.arch.conv1_channels << '/' << r.arch.conv2_channels << '/' << r.arch.conv3_channels
              << '/' << r.arch.fc1_width << " classes " << r.arch.classes << " params " << r.parameters
              << " max rel err " << r.max_relative_error << '\n';
  }
  return ok ? 0 : kExitCellFailures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated co-distillation experiment harness"};
  app.require_subcommand(1);

  std::string config, results, group_by = "strategy,skew";
  int threads = 0, configs = 5;
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "Run every cell of an experiment config");
  run->add_option("config", config, "Config file")->required();
  run->add_option("--threads", threads, "Concurrent cells (overrides [output] threads)");

  auto* validate = app.add_subcommand("validate", "Parse and validate a config");
  validate->add_option("config", config, "Config file")->required();

  auto* report = app.add_subcommand("report", "Pivot a results file");
  report->add_option("results", results, "Results file (.csv or .jsonl)")->required();
  report->add_option("--group-by", group_by, "One or two of strategy,clients,skew,images_per_class,seed");

  auto* gradcheck = app.add_subcommand("gradcheck", "Check backprop against finite differences");
  gradcheck->add_option("--configs", configs, "Number of random tiny configurations");
  gradcheck->add_option("--seed", seed, "Seed for configuration generation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, threads);
    if (*validate) return cmd_validate(config);
    if (*report) return cmd_report(results, group_by);
    if (*gradcheck) return cmd_gradcheck(configs, seed);
  } catch (const exp::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
