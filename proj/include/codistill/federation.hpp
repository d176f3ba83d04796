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
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "codistill/data.hpp"
#include "codistill/nn.hpp"
#include "codistill/rng.hpp"

namespace codistill::fed {

enum class Strategy { kCodistill, kFedAvg, kFedDistill, kFedProto, kLocalOnly };

std::string_view to_string(Strategy strategy);

/// Accepts codistill, fedavg, feddistill, fedproto, local-only. The
/// reserved tag "fedamp" is rejected with an explicit not-implemented error.
Strategy parse_strategy(std::string_view text);

/// How per-sample distillation MSE terms combine within a mini-batch.
/// kSum adds one term per matching sample; kMean divides that sum by the
/// number of matching samples.
enum class DistillReduction { kMean, kSum };

std::string_view to_string(DistillReduction reduction);
DistillReduction parse_distill_reduction(std::string_view text);

struct StrategyConfig {
  Strategy strategy = Strategy::kCodistill;
  double lambda = 0.1;
  int k = 32;
  int local_epochs = 1;
  nn::RepresentationMode representation = nn::RepresentationMode::kLogits;
  DistillReduction reduction = DistillReduction::kMean;

  void validate() const;
};

struct Hyper {
  nn::SgdConfig sgd;
  std::size_t batch_size = 32;
};

struct ClientState {
  int id = 0;
  data::ClientShard shard;
  nn::ModelState model;
  nn::Velocity velocity;
  int expertise = 0;
};

/// One client per shard, each starting from a copy of `base`.
std::vector<ClientState> make_clients(std::vector<data::ClientShard> shards, const nn::ModelState& base);

struct ClassRepresentation {
  int class_id = 0;
  std::vector<double> vector;
  int client = 0;
  int round = 0;
  int k_used = 0;
};

enum class PayloadKind { kRep, kParams, kProto };
std::string_view to_string(PayloadKind kind);

/// Pseudo-endpoint id for the FedAvg/FedDistill/FedProto aggregator.
inline constexpr int kAggregator = -1;

struct Transfer {
  int round = 0;
  int src = 0;
  int dst = 0;
  PayloadKind kind = PayloadKind::kRep;
  std::size_t bytes = 0;
};

/// Instrumented in-process exchange. The only payloads it can carry are
/// vectors of doubles and model parameter sets, and it records every
/// transfer. Not synchronized: transfers happen at round boundaries.
class ExchangeChannel {
 public:
  std::vector<double> send_vector(int round, int src, int dst, PayloadKind kind, std::span<const double> payload);
  nn::ModelState send_parameters(int round, int src, int dst, const nn::ModelState& model);

  const std::vector<Transfer>& transfers() const { return transfers_; }
  std::size_t total_bytes() const;
  std::size_t count(PayloadKind kind) const;
  std::size_t bytes_received(int client, int round) const;

  /// `round,src,dst,kind,bytes` lines.
  void write_log(std::ostream& out) const;

 private:
  std::vector<Transfer> transfers_;
};

struct ClientRoundLog {
  int client = 0;
  int teacher = -1;
  double ce = 0.0;
  double distill = 0.0;
  double total = 0.0;
  std::size_t batches = 0;
};

struct RoundLog {
  int round = 0;
  std::vector<ClientRoundLog> clients;
  std::size_t bytes = 0;
  std::vector<std::string> warnings;
};

struct RunOptions {
  int rounds = 100;
  std::uint64_t seed = 0;
  /// Clients train concurrently when > 1; results do not depend on it.
  int threads = 1;
};

struct RunResult {
  std::vector<ClientState> clients;
  std::vector<RoundLog> logs;
  ExchangeChannel channel;
};

/// Thrown when a loss or gradient stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int round, int client, const std::string& what);
  int round() const { return round_; }
  int client() const { return client_; }

 private:
  int round_;
  int client_;
};

/// Mean representation over min(k, available) expertise-class images drawn
/// uniformly without replacement.
ClassRepresentation teacher_representation(const nn::ModelState& model, const data::ClientShard& shard, int k,
                                           Rng& rng, nn::RepresentationMode mode, int round = 0);
ClassRepresentation teacher_representation(const ClientState& client, int k, Rng& rng,
                                           nn::RepresentationMode mode = nn::RepresentationMode::kLogits,
                                           int round = 0);

/// Uniform over every id in `ids` other than `student`.
int select_teacher(int student, std::span<const int> ids, Rng& rng);

/// Per-sample regression target by label, or null for no distillation term.
using TargetTable = std::vector<std::vector<double>>;

struct LocalLosses {
  double ce = 0.0;
  double distill = 0.0;
  double total = 0.0;
  std::size_t batches = 0;
};

/// Local epochs where each mini-batch loss is
///   CE + lambda * D,  D = reduce_{i : targets[y_i] non-empty} MSE(rep(x_i), targets[y_i])
/// with `reduction` choosing sum or mean for D. Reported losses are means
/// over mini-batches; `distill` reports D.
LocalLosses train_local(ClientState& client, const TargetTable& targets, double lambda, nn::RepresentationMode mode,
                        int epochs, const Hyper& hyper, Rng& shuffle_rng,
                        DistillReduction reduction = DistillReduction::kMean);

/// Student update for one round: distills toward `teacher_rep` on the
/// student's samples of the teacher's expertise class.
LocalLosses codistill_client_round(ClientState& student, const ClassRepresentation& teacher_rep, double lambda,
                                   const StrategyConfig& config, const Hyper& hyper, Rng& shuffle_rng);

/// Per-class mean representation over a client's local data; entry c is
/// empty when the client holds no samples of class c.
TargetTable local_class_means(const ClientState& client, nn::RepresentationMode mode);

/// Unweighted mean over the clients holding each class. Classes nobody
/// holds stay empty and get a warning appended.
TargetTable average_class_tables(std::span<const TargetTable> tables, std::vector<std::string>* warnings = nullptr);

/// Unweighted element-wise mean of congruent models.
nn::ModelState average_models(std::span<const nn::ModelState> models);

RunResult run_codistillation(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                             const RunOptions& options);
RunResult run_fedavg(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                     const RunOptions& options);
RunResult run_feddistill(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                         const RunOptions& options);
RunResult run_fedproto(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                       const RunOptions& options);
RunResult run_local_only(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                         const RunOptions& options);

/// Dispatches on `config.strategy`.
RunResult run_strategy(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                       const RunOptions& options);

}  // namespace codistill::fed
