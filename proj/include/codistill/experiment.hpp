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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "codistill/federation.hpp"
#include "codistill/nn.hpp"

namespace codistill::exp {

/// Parse or validation failure, tagged with the offending config line
/// (0 when the problem is not tied to one line).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

enum class DataSource { kSynthetic, kDirectory };
enum class EvalSet { kHoldout, kTrain };
enum class ResultsFormat { kCsv, kJsonLines };

struct ExperimentPlan {
  // [dataset]
  DataSource source = DataSource::kSynthetic;
  std::filesystem::path data_path;
  double separation = 0.5;
  double noise = 0.3;
  double holdout_fraction = 0.2;

  // [model]; input side and class count live here too.
  nn::Architecture arch;
  std::optional<std::filesystem::path> init_checkpoint;

  // [grid]
  std::vector<fed::Strategy> strategies;
  std::vector<int> client_counts{4};
  std::vector<int> skews{0, 20, 40, 60};
  std::vector<std::size_t> images_per_class{600};
  std::vector<std::uint64_t> seeds{0, 1, 2};

  // [training]
  int rounds = 100;
  int local_epochs = 1;
  fed::Hyper hyper;
  double lambda = 0.1;
  int k = 32;
  nn::RepresentationMode representation = nn::RepresentationMode::kLogits;
  fed::DistillReduction distill_reduction = fed::DistillReduction::kMean;

  // [output]
  std::filesystem::path output = "results.csv";
  ResultsFormat format = ResultsFormat::kCsv;
  std::optional<std::filesystem::path> exchange_log_dir;
  EvalSet eval = EvalSet::kHoldout;
  int threads = 1;

  /// Throws ConfigError(0, ...) on an inconsistent plan.
  void validate() const;

  fed::StrategyConfig strategy_config(fed::Strategy strategy) const;
};

/// INI-style grammar: `[section]` headers, `key = value` lines, `#`
/// comments, comma-separated lists. Relative input paths resolve against
/// `base_dir`.
ExperimentPlan parse_config(std::istream& in, const std::filesystem::path& base_dir = {});
ExperimentPlan parse_config(const std::filesystem::path& path);

/// Re-homes the output file (and exchange log directory) under the
/// directory named by CODISTILL_OUTPUT_DIR, when that variable is set.
void apply_output_dir_override(ExperimentPlan& plan);

inline constexpr const char* kOutputDirEnv = "CODISTILL_OUTPUT_DIR";

struct ResultsRow {
  std::string strategy;
  int clients = 0;
  int skew = 0;
  std::size_t images_per_class = 0;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::vector<double> client_accuracies;
  double mean_accuracy = 0.0;
  std::optional<double> sd_across_skews;
  std::size_t bytes_exchanged = 0;
  std::size_t bytes_per_client_round = 0;
  double wall_seconds = 0.0;  // kept out of the results file
};

struct ResultsTable {
  std::vector<ResultsRow> rows;

  bool all_ok() const;
};

struct CellCoords {
  fed::Strategy strategy;
  int clients;
  int skew;
  std::size_t images_per_class;
  std::uint64_t seed;
};

/// Cells in emission order: strategy, clients, skew, budget, seed.
std::vector<CellCoords> enumerate_cells(const ExperimentPlan& plan);

/// Runs one (cell, seed). Throws on failure.
ResultsRow run_cell(const ExperimentPlan& plan, const CellCoords& cell);

/// Runs every cell (up to plan.threads at a time), records failures
/// per row, and fills sd_across_skews per (strategy, clients, budget, seed).
ResultsTable run_experiment(const ExperimentPlan& plan,
                            const std::function<void(const ResultsRow&)>& on_row = {});

/// Rows are written with accuracies rounded to 4 decimals.
void emit_results(const ResultsTable& table, ResultsFormat format, std::ostream& out);
void emit_results(const ResultsTable& table, ResultsFormat format, const std::filesystem::path& path);
/// Writes `<strategy,clients,skew,images_per_class,seed,wall_seconds>` rows.
void emit_timings(const ResultsTable& table, const std::filesystem::path& path);

ResultsTable parse_results(std::istream& in, ResultsFormat format);
/// Format chosen from the extension (.jsonl/.json -> json-lines, else csv).
ResultsTable parse_results(const std::filesystem::path& path);

/// Pivot of mean minority accuracy (percent, one decimal) averaged over
/// every dimension not named in `group_by`. The first key picks rows, the
/// optional second key picks columns; when the columns are skews an `sd`
/// column (0-1 scale) is appended.
std::string pivot_report(const ResultsTable& table, const std::vector<std::string>& group_by);

}  // namespace codistill::exp
