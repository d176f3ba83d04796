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

#include "codistill/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "codistill/parallel.hpp"

namespace codistill::fed {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

std::uint64_t key(int v) { return static_cast<std::uint64_t>(static_cast<std::int64_t>(v)); }

std::vector<int> client_ids(const std::vector<ClientState>& clients) {
  std::vector<int> ids;
  for (const auto& c : clients) ids.push_back(c.id);
  auto sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "client ids must be unique");
  return ids;
}

std::size_t index_of(const std::vector<int>& ids, int id) {
  return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), id) - ids.begin());
}

void check_shared_architecture(const std::vector<ClientState>& clients) {
  for (const auto& c : clients)
    require(c.model.arch == clients.front().model.arch,
            "client " + std::to_string(c.id) + " has a different model architecture");
}

Rng shuffle_rng(const RunOptions& options, int client, int round) {
  return make_rng(options.seed, {stream::kShuffle, key(client), key(round)});
}

// Trains every client concurrently, turning per-client failures into
// TrainingDiverged tagged with the round.
template <typename Fn>
std::vector<LocalLosses> train_all(std::vector<ClientState>& clients, int round, int threads, Fn&& step) {
  std::vector<LocalLosses> losses(clients.size());
  parallel_for(clients.size(), threads, [&](std::size_t i) {
    try {
      losses[i] = step(i);
    } catch (const std::domain_error& e) {
      throw TrainingDiverged(round, clients[i].id, e.what());
    }
  });
  return losses;
}

RoundLog make_round_log(int round, const std::vector<ClientState>& clients, const std::vector<LocalLosses>& losses,
                        const ExchangeChannel& channel, std::size_t transfers_before) {
  RoundLog log;
  log.round = round;
  for (std::size_t i = 0; i < clients.size(); ++i)
    log.clients.push_back({clients[i].id, -1, losses[i].ce, losses[i].distill, losses[i].total, losses[i].batches});
  for (std::size_t t = transfers_before; t < channel.transfers().size(); ++t) log.bytes += channel.transfers()[t].bytes;
  return log;
}

std::vector<double> concat(const TargetTable& table) {
  std::vector<double> out;
  for (const auto& v : table) out.insert(out.end(), v.begin(), v.end());
  return out;
}

// Rebuilds a table from a concatenated payload using `layout` for which
// entries are present.
TargetTable split(const std::vector<double>& flat, const TargetTable& layout) {
  TargetTable out(layout.size());
  std::size_t pos = 0;
  for (std::size_t c = 0; c < layout.size(); ++c) {
    out[c].assign(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                  flat.begin() + static_cast<std::ptrdiff_t>(pos + layout[c].size()));
    pos += layout[c].size();
  }
  return out;
}

RunResult run_class_mean_regularized(std::vector<ClientState> clients, const StrategyConfig& config,
                                     const Hyper& hyper, const RunOptions& options, nn::RepresentationMode mode,
                                     PayloadKind kind) {
  config.validate();
  require(clients.size() >= 2, std::string(to_string(config.strategy)) + " needs at least 2 clients");
  check_shared_architecture(clients);
  RunResult result;
  for (int r = 0; r < options.rounds; ++r) {
    const std::size_t before = result.channel.transfers().size();
    std::vector<TargetTable> received;
    for (const auto& c : clients) {
      const TargetTable local = local_class_means(c, mode);
      received.push_back(split(result.channel.send_vector(r, c.id, kAggregator, kind, concat(local)), local));
    }
    RoundLog pending;
    const TargetTable global = average_class_tables(received, &pending.warnings);
    for (auto& w : pending.warnings) w = "round " + std::to_string(r) + ": " + w;

    std::vector<TargetTable> targets;
    for (const auto& c : clients)
      targets.push_back(split(result.channel.send_vector(r, kAggregator, c.id, kind, concat(global)), global));

    const auto losses = train_all(clients, r, options.threads, [&](std::size_t i) {
      Rng rng = shuffle_rng(options, clients[i].id, r);
      return train_local(clients[i], targets[i], config.lambda, mode, config.local_epochs, hyper, rng,
                         config.reduction);
    });
    RoundLog log = make_round_log(r, clients, losses, result.channel, before);
    log.warnings = std::move(pending.warnings);
    result.logs.push_back(std::move(log));
  }
  result.clients = std::move(clients);
  return result;
}

}  // namespace

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::kCodistill: return "codistill";
    case Strategy::kFedAvg: return "fedavg";
    case Strategy::kFedDistill: return "feddistill";
    case Strategy::kFedProto: return "fedproto";
    case Strategy::kLocalOnly: return "local-only";
  }
  return "?";
}

Strategy parse_strategy(std::string_view text) {
  for (Strategy s : {Strategy::kCodistill, Strategy::kFedAvg, Strategy::kFedDistill, Strategy::kFedProto,
                     Strategy::kLocalOnly})
    if (text == to_string(s)) return s;
  if (text == "fedamp")
    throw std::invalid_argument(
        "strategy 'fedamp' is not implemented: attentive message passing is a reserved tag with no algorithm here");
  throw std::invalid_argument("unknown strategy '" + std::string(text) +
                              "' (expected codistill, fedavg, feddistill, fedproto or local-only)");
}

std::string_view to_string(DistillReduction reduction) {
  return reduction == DistillReduction::kMean ? "mean" : "sum";
}

DistillReduction parse_distill_reduction(std::string_view text) {
  if (text == "mean") return DistillReduction::kMean;
  if (text == "sum") return DistillReduction::kSum;
  throw std::invalid_argument("distill reduction must be 'mean' or 'sum', got '" + std::string(text) + "'");
}

void StrategyConfig::validate() const {
  require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be a finite non-negative number");
  require(k >= 1, "k must be >= 1");
  require(local_epochs >= 1, "local_epochs must be >= 1");
}

std::vector<ClientState> make_clients(std::vector<data::ClientShard> shards, const nn::ModelState& base) {
  std::vector<ClientState> clients;
  for (auto& shard : shards) {
    require(shard.data.classes == base.arch.classes, "shard class count does not match the model");
    ClientState c;
    c.id = shard.client_id;
    c.expertise = shard.expertise;
    c.shard = std::move(shard);
    c.model = base;
    c.velocity = nn::zero_velocity(base);
    clients.push_back(std::move(c));
  }
  return clients;
}

std::string_view to_string(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::kRep: return "rep";
    case PayloadKind::kParams: return "params";
    case PayloadKind::kProto: return "proto";
  }
  return "?";
}

std::vector<double> ExchangeChannel::send_vector(int round, int src, int dst, PayloadKind kind,
                                                 std::span<const double> payload) {
  require(kind != PayloadKind::kParams, "send_vector: parameter payloads must go through send_parameters");
  transfers_.push_back({round, src, dst, kind, payload.size() * sizeof(double)});
  return {payload.begin(), payload.end()};
}

nn::ModelState ExchangeChannel::send_parameters(int round, int src, int dst, const nn::ModelState& model) {
  transfers_.push_back({round, src, dst, PayloadKind::kParams, model.parameter_count() * sizeof(double)});
  return model;
}

std::size_t ExchangeChannel::total_bytes() const {
  std::size_t n = 0;
  for (const auto& t : transfers_) n += t.bytes;
  return n;
}

std::size_t ExchangeChannel::count(PayloadKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(transfers_.begin(), transfers_.end(), [&](const Transfer& t) { return t.kind == kind; }));
}

std::size_t ExchangeChannel::bytes_received(int client, int round) const {
  std::size_t n = 0;
  for (const auto& t : transfers_)
    if (t.dst == client && t.round == round) n += t.bytes;
  return n;
}

void ExchangeChannel::write_log(std::ostream& out) const {
  for (const auto& t : transfers_)
    out << t.round << ',' << t.src << ',' << t.dst << ',' << to_string(t.kind) << ',' << t.bytes << '\n';
}

TrainingDiverged::TrainingDiverged(int round, int client, const std::string& what)
    : std::runtime_error("training diverged in round " + std::to_string(round) + " on client " +
                         std::to_string(client) + ": " + what),
      round_(round),
      client_(client) {}

ClassRepresentation teacher_representation(const nn::ModelState& model, const data::ClientShard& shard, int k,
                                           Rng& rng, nn::RepresentationMode mode, int round) {
  require(k >= 1, "teacher_representation: k must be >= 1");
  auto pool = shard.data.indices_of(shard.expertise);
  if (pool.empty())
    throw std::invalid_argument("teacher_representation: client " + std::to_string(shard.client_id) +
                                " has no samples of its expertise class " + std::to_string(shard.expertise));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(pool.size(), static_cast<std::size_t>(k)));

  const Tensor rep = nn::representation(nn::forward(model, gather_rows(shard.data.images, pool)), mode);
  ClassRepresentation out;
  out.class_id = shard.expertise;
  out.client = shard.client_id;
  out.round = round;
  out.k_used = static_cast<int>(pool.size());
  out.vector.assign(rep.row_size(), 0.0);
  for (std::size_t i = 0; i < rep.dim(0); ++i)
    for (std::size_t j = 0; j < out.vector.size(); ++j) out.vector[j] += rep.row(i)[j];
  for (double& v : out.vector) v /= static_cast<double>(pool.size());
  return out;
}

ClassRepresentation teacher_representation(const ClientState& client, int k, Rng& rng, nn::RepresentationMode mode,
                                           int round) {
  return teacher_representation(client.model, client.shard, k, rng, mode, round);
}

int select_teacher(int student, std::span<const int> ids, Rng& rng) {
  if (std::find(ids.begin(), ids.end(), student) == ids.end())
    throw std::invalid_argument("select_teacher: student " + std::to_string(student) + " is not in the client list");
  std::vector<int> candidates;
  for (int id : ids)
    if (id != student) candidates.push_back(id);
  if (candidates.empty()) throw std::invalid_argument("select_teacher: co-distillation needs at least 2 clients");
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return candidates[pick(rng)];
}

LocalLosses train_local(ClientState& client, const TargetTable& targets, double lambda, nn::RepresentationMode mode,
                        int epochs, const Hyper& hyper, Rng& shuffle_rng, DistillReduction reduction) {
  require(hyper.batch_size >= 1, "batch size must be >= 1");
  const data::Dataset& local = client.shard.data;
  const std::size_t width = nn::representation_width(client.model.arch, mode);
  for (const auto& t : targets)
    require(t.empty() || t.size() == width, "distillation target width does not match the representation");

  std::vector<std::size_t> order(local.size());
  std::iota(order.begin(), order.end(), 0);
  LocalLosses sums;
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
      labels.clear();
      for (std::size_t r : rows) labels.push_back(local.labels[r]);

      const nn::ForwardTrace trace = nn::forward(client.model, gather_rows(local.images, rows));
      nn::LossGrad ce = nn::cross_entropy(trace.logits, labels);
      Tensor dpenultimate(trace.penultimate.shape());

      double distill = 0.0;
      std::size_t matched = 0;
      bool any_target = false;
      const Tensor rep = nn::representation(trace, mode);
      Tensor drep(rep.shape());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto label = static_cast<std::size_t>(labels[i]);
        if (label >= targets.size() || targets[label].empty()) continue;
        any_target = true;
        const Tensor mine({width}, std::vector<double>(rep.row(i).begin(), rep.row(i).end()));
        const nn::LossGrad term = nn::mse(mine, Tensor({width}, targets[label]));
        distill += term.loss;
        ++matched;
        auto d = drep.row(i);
        for (std::size_t j = 0; j < width; ++j) d[j] = lambda * term.grad[j];
      }
      if (any_target) {
        if (reduction == DistillReduction::kMean) {
          const double inv = 1.0 / static_cast<double>(matched);
          distill *= inv;
          for (double& v : drep.data()) v *= inv;
        }
        nn::accumulate_representation_grad(trace, mode, drep, ce.grad, dpenultimate);
      }

      const double total = ce.loss + lambda * distill;
      if (!std::isfinite(total)) throw std::domain_error("non-finite loss");
      const nn::Gradients grads = nn::backward(client.model, trace, ce.grad,
                                               mode == nn::RepresentationMode::kPenultimate ? &dpenultimate : nullptr);
      nn::sgd_step(client.model, grads, hyper.sgd, client.velocity);

      sums.ce += ce.loss;
      sums.distill += distill;
      sums.total += total;
      ++sums.batches;
    }
  }
  if (sums.batches > 0) {
    const auto n = static_cast<double>(sums.batches);
    sums.ce /= n;
    sums.distill /= n;
    sums.total /= n;
  }
  return sums;
}

LocalLosses codistill_client_round(ClientState& student, const ClassRepresentation& teacher_rep, double lambda,
                                   const StrategyConfig& config, const Hyper& hyper, Rng& shuffle_rng) {
  require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be a finite non-negative number");
  require(teacher_rep.class_id >= 0 && teacher_rep.class_id < student.model.arch.classes,
          "teacher representation has an invalid class " + std::to_string(teacher_rep.class_id));
  TargetTable targets(static_cast<std::size_t>(student.model.arch.classes));
  targets[static_cast<std::size_t>(teacher_rep.class_id)] = teacher_rep.vector;
  return train_local(student, targets, lambda, config.representation, config.local_epochs, hyper, shuffle_rng,
                     config.reduction);
}

TargetTable local_class_means(const ClientState& client, nn::RepresentationMode mode) {
  const data::Dataset& local = client.shard.data;
  const Tensor rep = nn::batched_representation(client.model, local.images, mode);
  const std::size_t width = rep.row_size();
  TargetTable means(static_cast<std::size_t>(client.model.arch.classes));
  std::vector<std::size_t> counts(means.size(), 0);
  for (std::size_t i = 0; i < local.size(); ++i) {
    auto& m = means[static_cast<std::size_t>(local.labels[i])];
    if (m.empty()) m.assign(width, 0.0);
    for (std::size_t j = 0; j < width; ++j) m[j] += rep.row(i)[j];
    ++counts[static_cast<std::size_t>(local.labels[i])];
  }
  for (std::size_t c = 0; c < means.size(); ++c)
    for (double& v : means[c]) v /= static_cast<double>(counts[c]);
  return means;
}

TargetTable average_class_tables(std::span<const TargetTable> tables, std::vector<std::string>* warnings) {
  require(!tables.empty(), "average_class_tables: no tables");
  const std::size_t classes = tables.front().size();
  TargetTable global(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t holders = 0;
    for (const auto& t : tables) {
      require(t.size() == classes, "average_class_tables: class count mismatch");
      if (t[c].empty()) continue;
      if (global[c].empty()) global[c].assign(t[c].size(), 0.0);
      require(t[c].size() == global[c].size(), "average_class_tables: width mismatch");
      for (std::size_t j = 0; j < t[c].size(); ++j) global[c][j] += t[c][j];
      ++holders;
    }
    if (holders == 0) {
      if (warnings) warnings->push_back("class " + std::to_string(c) + " has no holders; skipped");
      continue;
    }
    for (double& v : global[c]) v /= static_cast<double>(holders);
  }
  return global;
}

nn::ModelState average_models(std::span<const nn::ModelState> models) {
  require(!models.empty(), "average_models: no models");
  const nn::ModelState& first = models.front();
  for (const auto& m : models) require(m.arch == first.arch, "average_models: architecture mismatch");
  // Offsets from the first model keep the mean of identical models exact.
  nn::ModelState out = first;
  const double n = static_cast<double>(models.size());
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    auto dst = out[i].data();
    auto base = first[i].data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double offset = 0.0;
      for (const auto& m : models) offset += m[i][j] - base[j];
      dst[j] = base[j] + offset / n;
    }
  }
  return out;
}

RunResult run_codistillation(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                             const RunOptions& options) {
  config.validate();
  require(clients.size() >= 2, "co-distillation needs at least 2 clients");
  check_shared_architecture(clients);
  const auto ids = client_ids(clients);
  RunResult result;
  for (int r = 0; r < options.rounds; ++r) {
    const std::size_t before = result.channel.transfers().size();
    // Every representation is computed before any client trains, so
    // teachers always answer with their end-of-previous-round model.
    std::vector<ClassRepresentation> reps(clients.size());
    std::vector<int> teachers(clients.size());
    for (std::size_t s = 0; s < clients.size(); ++s) {
      Rng choice = make_rng(options.seed, {stream::kTeacherChoice, key(ids[s]), key(r)});
      teachers[s] = select_teacher(ids[s], ids, choice);
      const ClientState& teacher = clients[index_of(ids, teachers[s])];
      Rng sample = make_rng(options.seed, {stream::kTeacherSample, key(teacher.id), key(ids[s]), key(r)});
      reps[s] = teacher_representation(teacher, config.k, sample, config.representation, r);
      reps[s].vector = result.channel.send_vector(r, teacher.id, ids[s], PayloadKind::kRep, reps[s].vector);
    }
    const auto losses = train_all(clients, r, options.threads, [&](std::size_t i) {
      Rng rng = shuffle_rng(options, clients[i].id, r);
      return codistill_client_round(clients[i], reps[i], config.lambda, config, hyper, rng);
    });
    RoundLog log = make_round_log(r, clients, losses, result.channel, before);
    for (std::size_t i = 0; i < clients.size(); ++i) log.clients[i].teacher = teachers[i];
    result.logs.push_back(std::move(log));
  }
  result.clients = std::move(clients);
  return result;
}

RunResult run_fedavg(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                     const RunOptions& options) {
  config.validate();
  require(!clients.empty(), "fedavg needs at least one client");
  check_shared_architecture(clients);
  RunResult result;
  for (int r = 0; r < options.rounds; ++r) {
    const std::size_t before = result.channel.transfers().size();
    const auto losses = train_all(clients, r, options.threads, [&](std::size_t i) {
      Rng rng = shuffle_rng(options, clients[i].id, r);
      return train_local(clients[i], {}, 0.0, nn::RepresentationMode::kLogits, config.local_epochs, hyper, rng);
    });
    std::vector<nn::ModelState> uploads;
    for (const auto& c : clients) uploads.push_back(result.channel.send_parameters(r, c.id, kAggregator, c.model));
    const nn::ModelState mean = average_models(uploads);
    for (auto& c : clients) c.model = result.channel.send_parameters(r, kAggregator, c.id, mean);
    result.logs.push_back(make_round_log(r, clients, losses, result.channel, before));
  }
  result.clients = std::move(clients);
  return result;
}

RunResult run_feddistill(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                         const RunOptions& options) {
  return run_class_mean_regularized(std::move(clients), config, hyper, options, config.representation,
                                    PayloadKind::kRep);
}

RunResult run_fedproto(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                       const RunOptions& options) {
  return run_class_mean_regularized(std::move(clients), config, hyper, options, nn::RepresentationMode::kPenultimate,
                                    PayloadKind::kProto);
}

RunResult run_local_only(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                         const RunOptions& options) {
  config.validate();
  RunResult result;
  for (int r = 0; r < options.rounds; ++r) {
    const auto losses = train_all(clients, r, options.threads, [&](std::size_t i) {
      Rng rng = shuffle_rng(options, clients[i].id, r);
      return train_local(clients[i], {}, 0.0, config.representation, config.local_epochs, hyper, rng);
    });
    result.logs.push_back(make_round_log(r, clients, losses, result.channel, 0));
  }
  result.clients = std::move(clients);
  return result;
}

RunResult run_strategy(std::vector<ClientState> clients, const StrategyConfig& config, const Hyper& hyper,
                       const RunOptions& options) {
  switch (config.strategy) {
    case Strategy::kCodistill: return run_codistillation(std::move(clients), config, hyper, options);
    case Strategy::kFedAvg: return run_fedavg(std::move(clients), config, hyper, options);
    case Strategy::kFedDistill: return run_feddistill(std::move(clients), config, hyper, options);
    case Strategy::kFedProto: return run_fedproto(std::move(clients), config, hyper, options);
    case Strategy::kLocalOnly: return run_local_only(std::move(clients), config, hyper, options);
  }
  throw std::logic_error("unreachable strategy");
}

}  // namespace codistill::fed
