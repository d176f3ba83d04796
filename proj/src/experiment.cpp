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

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <tuple>

#include "codistill/checkpoint.hpp"
#include "codistill/data.hpp"
#include "codistill/experiment.hpp"
#include "codistill/metrics.hpp"
#include "codistill/parallel.hpp"
#include "codistill/rng.hpp"

namespace codistill::exp {

namespace {

std::uint64_t key(std::int64_t v) { return static_cast<std::uint64_t>(v); }

// Source dataset for a (seed, budget) pair. Synthetic sources are sized so
// that the training pool left after the holdout split holds exactly the
// budget (or slightly more, after flooring the holdout).
data::Dataset source_dataset(const ExperimentPlan& plan, std::uint64_t data_seed, std::size_t budget) {
  if (plan.source == DataSource::kDirectory)
    return data::load_image_dir(plan.data_path, static_cast<std::size_t>(plan.arch.input_side), plan.arch.classes);
  data::SyntheticSpec spec;
  spec.classes = plan.arch.classes;
  spec.per_class = static_cast<std::size_t>(std::ceil(static_cast<double>(budget) / (1.0 - plan.holdout_fraction)));
  spec.side = static_cast<std::size_t>(plan.arch.input_side);
  spec.separation = plan.separation;
  spec.noise = plan.noise;
  spec.seed = data_seed;
  return data::gen_synthetic(spec);
}

std::string cell_name(const CellCoords& c) {
  return std::string(fed::to_string(c.strategy)) + "_c" + std::to_string(c.clients) + "_s" + std::to_string(c.skew) +
         "_n" + std::to_string(c.images_per_class) + "_seed" + std::to_string(c.seed);
}

}  // namespace

bool ResultsTable::all_ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const ResultsRow& r) { return r.ok; });
}

std::vector<CellCoords> enumerate_cells(const ExperimentPlan& plan) {
  std::vector<CellCoords> cells;
  for (auto strategy : plan.strategies)
    for (int clients : plan.client_counts)
      for (int skew : plan.skews)
        for (std::size_t budget : plan.images_per_class)
          for (std::uint64_t seed : plan.seeds) cells.push_back({strategy, clients, skew, budget, seed});
  return cells;
}

ResultsRow run_cell(const ExperimentPlan& plan, const CellCoords& cell) {
  const auto started = std::chrono::steady_clock::now();
  ResultsRow row;
  row.strategy = std::string(fed::to_string(cell.strategy));
  row.clients = cell.clients;
  row.skew = cell.skew;
  row.images_per_class = cell.images_per_class;
  row.seed = cell.seed;

  // Seeds are keyed so that every skew of a (seed, budget, clients) group
  // shares the holdout, the zero-skew split and the initial model, and
  // every strategy shares all of it.
  const std::uint64_t data_seed = derive_seed(cell.seed, {stream::kCell, key(static_cast<std::int64_t>(cell.images_per_class))});
  const std::uint64_t group_seed = derive_seed(data_seed, {key(cell.clients)});
  const std::uint64_t train_seed = derive_seed(group_seed, {key(cell.skew)});

  const data::Dataset source = source_dataset(plan, data_seed, cell.images_per_class);
  const data::HoldoutSplit split = data::stratified_holdout(source, plan.holdout_fraction, data_seed);

  data::SkewSpec skew;
  skew.skew_percent = cell.skew;
  skew.per_class = cell.images_per_class / static_cast<std::size_t>(cell.clients);
  skew.clients = cell.clients;
  skew.seed = group_seed;
  auto shards = data::partition(split.train, skew);

  nn::ModelState base;
  if (plan.init_checkpoint) {
    base = nn::load_checkpoint(*plan.init_checkpoint);
    if (!(base.arch == plan.arch))
      throw std::invalid_argument("init checkpoint architecture does not match the configured model");
  } else {
    base = nn::init_model(plan.arch, group_seed);
  }

  fed::RunOptions options;
  options.rounds = plan.rounds;
  options.seed = train_seed;
  const fed::RunResult run =
      fed::run_strategy(fed::make_clients(std::move(shards), base), plan.strategy_config(cell.strategy), plan.hyper, options);

  if (plan.eval == EvalSet::kHoldout) {
    const metrics::EvalReport report = metrics::evaluate_run(run.clients, split.holdout);
    row.client_accuracies = report.accuracies;
  } else {
    for (const auto& c : run.clients)
      row.client_accuracies.push_back(metrics::minority_accuracy(c.model, c.shard.data, c.shard.minority));
  }
  row.mean_accuracy = metrics::mean(row.client_accuracies);

  row.bytes_exchanged = run.channel.total_bytes();
  std::size_t received = 0;
  for (const auto& t : run.channel.transfers())
    if (t.dst >= 0) received += t.bytes;
  if (plan.rounds > 0)
    row.bytes_per_client_round = received / (static_cast<std::size_t>(cell.clients) * static_cast<std::size_t>(plan.rounds));

  if (plan.exchange_log_dir) {
    std::filesystem::create_directories(*plan.exchange_log_dir);
    std::ofstream log(*plan.exchange_log_dir / (cell_name(cell) + ".log"));
    if (!log) throw std::runtime_error("cannot write exchange log in " + plan.exchange_log_dir->string());
    run.channel.write_log(log);
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return row;
}

ResultsTable run_experiment(const ExperimentPlan& plan, const std::function<void(const ResultsRow&)>& on_row) {
  plan.validate();
  const auto cells = enumerate_cells(plan);
  ResultsTable table;
  table.rows.resize(cells.size());
  std::mutex report_mutex;
  parallel_for(cells.size(), plan.threads, [&](std::size_t i) {
    ResultsRow row;
    try {
      row = run_cell(plan, cells[i]);
    } catch (const std::exception& e) {
      row = ResultsRow{};
      row.strategy = std::string(fed::to_string(cells[i].strategy));
      row.clients = cells[i].clients;
      row.skew = cells[i].skew;
      row.images_per_class = cells[i].images_per_class;
      row.seed = cells[i].seed;
      row.ok = false;
      row.error = e.what();
    }
    table.rows[i] = std::move(row);
    if (on_row) {
      std::lock_guard lock(report_mutex);
      on_row(table.rows[i]);
    }
  });

  // sd across the skew grid for each (strategy, clients, budget, seed).
  std::map<std::tuple<std::string, int, std::size_t, std::uint64_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    if (r.ok) groups[{r.strategy, r.clients, r.images_per_class, r.seed}].push_back(i);
  }
  for (const auto& [_, members] : groups) {
    if (members.size() < 2) continue;
    std::vector<double> accs;
    for (std::size_t i : members) accs.push_back(table.rows[i].mean_accuracy);
    const double sd = metrics::std_across_skews(accs);
    for (std::size_t i : members) table.rows[i].sd_across_skews = sd;
  }
  return table;
}

}  // namespace codistill::exp
