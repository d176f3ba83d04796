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

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "codistill/experiment.hpp"

namespace codistill::exp {
namespace {

namespace fs = std::filesystem;

const char* kTiny = R"(# small enough for unit tests
[dataset]
source = synthetic
side = 8

[model]
conv1 = 2
conv2 = 2
conv3 = 3
fc1 = 4
kernel1 = 3
kernel2 = 2

[grid]
strategy = codistill, fedavg
skew = 0, 60
images_per_class = 16
seeds = 0, 1

[training]
rounds = 2
batch = 8
)";

ExperimentPlan parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

int error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Config, MinimalConfigTakesDefaults) {
  const ExperimentPlan p = parse("[grid]\nstrategy = codistill\n");
  EXPECT_EQ(p.strategies, (std::vector<fed::Strategy>{fed::Strategy::kCodistill}));
  EXPECT_EQ(p.rounds, 100);
  EXPECT_EQ(p.local_epochs, 1);
  EXPECT_EQ(p.k, 32);
  EXPECT_EQ(p.lambda, 0.1);
  EXPECT_EQ(p.hyper.sgd.lr, 0.01);
  EXPECT_EQ(p.hyper.sgd.momentum, 0.9);
  EXPECT_EQ(p.hyper.batch_size, 32u);
  EXPECT_EQ(p.representation, nn::RepresentationMode::kLogits);
  EXPECT_EQ(p.distill_reduction, fed::DistillReduction::kMean);
  EXPECT_EQ(p.arch, nn::Architecture{});
  EXPECT_EQ(p.source, DataSource::kSynthetic);
}

TEST(Config, SkewList) {
  const ExperimentPlan p = parse("[grid]\nstrategy = fedavg\nskew = 0,20,40,60\n");
  EXPECT_EQ(p.skews, (std::vector<int>{0, 20, 40, 60}));
}

TEST(Config, ReservedStrategyRejected) {
  try {
    parse("[grid]\nstrategy = fedamp\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_NE(std::string(e.what()).find("not implemented"), std::string::npos);
  }
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("[grid]\nstrategy = fedavg\n\n[training]\nlearning_rate = 0.1\n"), 5);
  EXPECT_EQ(error_line("[grid]\nstrategy = fedavg\nskew = 0, ten\n"), 3);
  EXPECT_EQ(error_line("[grid]\nstrategy = fedavg\nseeds = \n"), 3);
  EXPECT_EQ(error_line("[grid]\nstrategy = fedavg\nskew = 100\n"), 3);
  EXPECT_EQ(error_line("rounds = 3\n"), 1);
  EXPECT_EQ(error_line("[grid]\nstrategy = fedavg\nstrategy = codistill\n"), 3);
  EXPECT_EQ(error_line("[nonsense]\n"), 1);
  EXPECT_EQ(error_line("[training]\nrounds = 3\n"), 0);  // no strategy at all
}

TEST(Config, ClientCountMustBeEven) {
  EXPECT_THROW(parse("[grid]\nstrategy = fedavg\nclients = 3\n"), ConfigError);
}

TEST(Config, OutputDirOverride) {
  ExperimentPlan p = parse("[grid]\nstrategy = fedavg\n[output]\npath = out/r.csv\n");
  ::setenv(kOutputDirEnv, "/tmp/elsewhere", 1);
  apply_output_dir_override(p);
  ::unsetenv(kOutputDirEnv);
  EXPECT_EQ(p.output, fs::path("/tmp/elsewhere/r.csv"));
}

TEST(Experiment, Cardinality) {
  ExperimentPlan p = parse(kTiny);
  EXPECT_EQ(enumerate_cells(p).size(), 8u);
  p.strategies = {fed::Strategy::kLocalOnly};
  p.skews = {20};
  p.seeds = {0};
  EXPECT_EQ(run_experiment(p).rows.size(), 1u);

  p.strategies = {fed::Strategy::kCodistill, fed::Strategy::kFedAvg, fed::Strategy::kFedDistill,
                  fed::Strategy::kFedProto, fed::Strategy::kLocalOnly};
  p.skews = {0, 20, 40, 60};
  p.seeds = {0, 1, 2};
  EXPECT_EQ(enumerate_cells(p).size(), 60u);
}

TEST(Experiment, RowsAreCompleteAndPaired) {
  const ResultsTable t = run_experiment(parse(kTiny));
  ASSERT_EQ(t.rows.size(), 8u);
  EXPECT_TRUE(t.all_ok());
  for (const auto& r : t.rows) {
    EXPECT_EQ(r.client_accuracies.size(), 4u);
    ASSERT_TRUE(r.sd_across_skews.has_value());
    EXPECT_GT(r.bytes_exchanged, 0u);
  }
  // Co-distillation rows carry 2-logit payloads: 16 bytes per client and round.
  EXPECT_EQ(t.rows.front().strategy, "codistill");
  EXPECT_EQ(t.rows.front().bytes_per_client_round, 16u);
}

TEST(Results, CsvFormatting) {
  ResultsTable t;
  ResultsRow r;
  r.strategy = "codistill";
  r.clients = 4;
  r.skew = 60;
  r.images_per_class = 200;
  r.client_accuracies = {0.81666, 0.5};
  r.mean_accuracy = 0.8167;
  r.sd_across_skews = 0.05504;
  r.bytes_exchanged = 1600;
  r.bytes_per_client_round = 16;
  t.rows.push_back(r);
  r.ok = false;
  r.error = "diverged, \"badly\"";
  t.rows.push_back(r);
  std::ostringstream out;
  emit_results(t, ResultsFormat::kCsv, out);
  const std::string csv = out.str();
  EXPECT_NE(csv.find(",0.8167,"), std::string::npos);
  EXPECT_NE(csv.find("0.8167;0.5000"), std::string::npos);
  EXPECT_NE(csv.find("\"diverged, \"\"badly\"\"\""), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

void expect_same(const ResultsTable& a, const ResultsTable& b) {
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const auto &x = a.rows[i], &y = b.rows[i];
    EXPECT_EQ(x.strategy, y.strategy);
    EXPECT_EQ(x.clients, y.clients);
    EXPECT_EQ(x.skew, y.skew);
    EXPECT_EQ(x.images_per_class, y.images_per_class);
    EXPECT_EQ(x.seed, y.seed);
    EXPECT_EQ(x.ok, y.ok);
    EXPECT_EQ(x.error, y.error);
    ASSERT_EQ(x.client_accuracies.size(), y.client_accuracies.size());
    for (std::size_t j = 0; j < x.client_accuracies.size(); ++j)
      EXPECT_NEAR(x.client_accuracies[j], y.client_accuracies[j], 5e-5);
    EXPECT_NEAR(x.mean_accuracy, y.mean_accuracy, 5e-5);
    EXPECT_EQ(x.sd_across_skews.has_value(), y.sd_across_skews.has_value());
    if (x.sd_across_skews) EXPECT_NEAR(*x.sd_across_skews, *y.sd_across_skews, 5e-5);
    EXPECT_EQ(x.bytes_exchanged, y.bytes_exchanged);
    EXPECT_EQ(x.bytes_per_client_round, y.bytes_per_client_round);
  }
}

TEST(Results, RoundTripBothFormats) {
  const ResultsTable t = run_experiment(parse(kTiny));
  for (auto format : {ResultsFormat::kCsv, ResultsFormat::kJsonLines}) {
    std::stringstream buf;
    emit_results(t, format, buf);
    expect_same(t, parse_results(buf, format));
  }
}

TEST(Results, RerunIsByteIdentical) {
  const fs::path dir = fs::temp_directory_path() / "codistill_rerun_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ExperimentPlan p = parse(kTiny);
  p.threads = 2;
  for (const char* name : {"a.csv", "b.csv"}) emit_results(run_experiment(p), ResultsFormat::kCsv, dir / name);
  p.threads = 1;
  emit_results(run_experiment(p), ResultsFormat::kCsv, dir / "c.csv");
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "c.csv"));
  fs::remove_all(dir);
}

TEST(Results, PivotPrintsPercents) {
  ResultsTable t;
  for (int skew : {0, 60}) {
    ResultsRow r;
    r.strategy = "fedavg";
    r.skew = skew;
    r.mean_accuracy = skew == 0 ? 0.9 : 0.817;
    t.rows.push_back(r);
  }
  const std::string report = pivot_report(t, {"strategy", "skew"});
  EXPECT_NE(report.find("90.0"), std::string::npos) << report;
  EXPECT_NE(report.find("81.7"), std::string::npos) << report;
}

}  // namespace
}  // namespace codistill::exp
