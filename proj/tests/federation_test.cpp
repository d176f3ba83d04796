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
#include <cmath>
#include <map>

#include <gtest/gtest.h>

#include "codistill/checkpoint.hpp"
#include "codistill/federation.hpp"

namespace codistill::fed {
namespace {

nn::Architecture tiny_arch() {
  nn::Architecture a;
  a.input_side = 8;
  a.conv1_kernel = 3;
  a.conv2_kernel = 2;
  a.conv1_channels = 2;
  a.conv2_channels = 3;
  a.conv3_channels = 4;
  a.fc1_width = 5;
  return a;
}

std::vector<ClientState> setup(int skew, std::size_t per_client_class = 12, int clients = 4, std::uint64_t seed = 0) {
  data::SyntheticSpec s;
  s.side = 8;
  s.per_class = per_client_class * static_cast<std::size_t>(clients);
  s.seed = seed;
  const data::Dataset d = data::gen_synthetic(s);
  auto shards = data::partition(d, {skew, per_client_class, clients, seed});
  return make_clients(std::move(shards), nn::init_model(tiny_arch(), seed));
}

Hyper small_batches() {
  Hyper h;
  h.batch_size = 8;
  return h;
}

std::vector<std::vector<std::uint8_t>> snapshot(const std::vector<ClientState>& clients) {
  std::vector<std::vector<std::uint8_t>> out;
  for (const auto& c : clients) out.push_back(nn::encode_checkpoint(c.model));
  return out;
}

std::vector<double> mean_rep(const ClientState& c, std::span<const std::size_t> rows, nn::RepresentationMode mode) {
  const Tensor rep = nn::representation(nn::forward(c.model, gather_rows(c.shard.data.images, rows)), mode);
  std::vector<double> m(rep.row_size(), 0.0);
  for (std::size_t i = 0; i < rep.dim(0); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += rep.row(i)[j] / static_cast<double>(rep.dim(0));
  return m;
}

TEST(TeacherRepresentation, ExhaustiveSampleIsClassMean) {
  auto clients = setup(60);
  const ClientState& t = clients[2];
  const auto rows = t.shard.data.indices_of(t.expertise);
  const auto expected = mean_rep(t, rows, nn::RepresentationMode::kLogits);
  Rng rng(1);
  const ClassRepresentation r = teacher_representation(t, 1000, rng);
  EXPECT_EQ(r.class_id, 1);
  EXPECT_EQ(r.client, 2);
  EXPECT_EQ(r.k_used, static_cast<int>(rows.size()));
  ASSERT_EQ(r.vector.size(), 2u);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(r.vector[j], expected[j], 1e-12);
}

TEST(TeacherRepresentation, SubsampleIsUnbiased) {
  auto clients = setup(0);
  const ClientState& t = clients[0];
  const auto expected = mean_rep(t, t.shard.data.indices_of(t.expertise), nn::RepresentationMode::kLogits);
  Rng rng(2);
  std::vector<double> acc(2, 0.0);
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    const auto r = teacher_representation(t, 3, rng);
    EXPECT_EQ(r.k_used, 3);
    for (std::size_t j = 0; j < 2; ++j) acc[j] += r.vector[j] / draws;
  }
  // The subsample spread is small for a freshly initialised model; 1e-3 is many standard errors.
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(acc[j], expected[j], 1e-3);
}

TEST(TeacherRepresentation, ModesHaveExpectedWidth) {
  auto clients = setup(0);
  Rng rng(0);
  EXPECT_EQ(teacher_representation(clients[0], 4, rng, nn::RepresentationMode::kPenultimate).vector.size(), 5u);
  const auto p = teacher_representation(clients[0], 4, rng, nn::RepresentationMode::kProbabilities).vector;
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
}

TEST(SelectTeacher, NeverSelf) {
  const std::vector<int> ids{0, 1};
  Rng rng(0);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(select_teacher(0, ids, rng), 1);
    EXPECT_EQ(select_teacher(1, ids, rng), 0);
  }
}

TEST(SelectTeacher, UniformOverOthers) {
  const std::vector<int> ids{0, 1, 2, 3};
  Rng rng(42);
  for (int student : ids) {
    std::map<int, int> freq;
    const int n = 30000;
    for (int i = 0; i < n; ++i) ++freq[select_teacher(student, ids, rng)];
    EXPECT_EQ(freq.count(student), 0u);
    double chi2 = 0.0;
    for (const auto& [id, f] : freq) chi2 += std::pow(f - n / 3.0, 2) / (n / 3.0);
    EXPECT_LT(chi2, 13.816);  // chi-square, 2 dof, p = 0.001
  }
}

TEST(SelectTeacher, Errors) {
  Rng rng(0);
  EXPECT_THROW(select_teacher(0, std::vector<int>{0}, rng), std::invalid_argument);
  EXPECT_THROW(select_teacher(5, std::vector<int>{0, 1}, rng), std::invalid_argument);
}

class ZeroLambda : public ::testing::TestWithParam<Strategy> {};

TEST_P(ZeroLambda, MatchesLocalOnly) {
  StrategyConfig cfg;
  cfg.strategy = GetParam();
  cfg.lambda = 0.0;
  StrategyConfig local;
  local.strategy = Strategy::kLocalOnly;
  const RunOptions opt{3, 7, 1};
  const auto a = run_strategy(setup(40), cfg, small_batches(), opt);
  const auto b = run_strategy(setup(40), local, small_batches(), opt);
  EXPECT_EQ(snapshot(a.clients), snapshot(b.clients));
}

INSTANTIATE_TEST_SUITE_P(Strategies, ZeroLambda,
                         ::testing::Values(Strategy::kCodistill, Strategy::kFedDistill, Strategy::kFedProto));

TEST(Codistill, ZeroRoundsLeaveModelsUntouched) {
  auto clients = setup(20);
  const auto before = snapshot(clients);
  const auto r = run_codistillation(std::move(clients), {}, small_batches(), {0, 1, 1});
  EXPECT_EQ(snapshot(r.clients), before);
  EXPECT_TRUE(r.channel.transfers().empty());
  EXPECT_TRUE(r.logs.empty());
}

TEST(Codistill, StudentWithoutTeacherClassTrainsPlainly) {
  auto clients = setup(0, 12, 2);
  ClientState student = clients[0];
  std::vector<std::size_t> rows = student.shard.data.indices_of(0);
  student.shard.data = student.shard.data.subset(rows);
  ClientState plain = student;
  ClassRepresentation rep;
  rep.class_id = 1;
  rep.vector = {5.0, -5.0};
  Rng r1(3), r2(3);
  const auto l = codistill_client_round(student, rep, 1.0, {}, small_batches(), r1);
  train_local(plain, TargetTable(2), 0.0, nn::RepresentationMode::kLogits, 1, small_batches(), r2);
  EXPECT_EQ(l.distill, 0.0);
  EXPECT_EQ(nn::encode_checkpoint(student.model), nn::encode_checkpoint(plain.model));
}

TEST(Codistill, TwoSampleLossOracle) {
  auto clients = setup(0, 12, 2);
  ClientState c = clients[0];
  const auto zeros = c.shard.data.indices_of(0);
  const auto ones = c.shard.data.indices_of(1);
  const std::vector<std::size_t> rows{zeros[0], ones[0]};
  c.shard.data = c.shard.data.subset(rows);
  const std::vector<double> R{0.4, -0.3};

  const Tensor logits = nn::forward(c.model, c.shard.data.images).logits;
  auto ce_of = [](double z0, double z1, int y) {
    const double m = std::max(z0, z1);
    const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
    return lse - (y == 0 ? z0 : z1);
  };
  double ce = 0.0;
  for (std::size_t i = 0; i < 2; ++i) ce += ce_of(logits[2 * i], logits[2 * i + 1], c.shard.data.labels[i]) / 2.0;
  const std::size_t cls1 = c.shard.data.labels[0] == 1 ? 0 : 1;
  const double d0 = logits[2 * cls1] - R[0], d1 = logits[2 * cls1 + 1] - R[1];
  const double mse = (d0 * d0 + d1 * d1) / 2.0;

  for (double lambda : {0.0, 0.5, 2.0}) {
    for (auto reduction : {DistillReduction::kMean, DistillReduction::kSum}) {
      ClientState s = c;
      StrategyConfig cfg;
      cfg.reduction = reduction;
      ClassRepresentation rep;
      rep.class_id = 1;
      rep.vector = R;
      Rng rng(0);
      const auto l = codistill_client_round(s, rep, lambda, cfg, small_batches(), rng);
      EXPECT_EQ(l.batches, 1u);
      EXPECT_NEAR(l.ce, ce, 1e-9);
      EXPECT_NEAR(l.distill, mse, 1e-9);
      EXPECT_NEAR(l.total, ce + lambda * mse, 1e-9);
    }
  }
}

TEST(Codistill, LossIsAffineInLambda) {
  auto base = setup(20);
  ClassRepresentation rep;
  rep.class_id = 0;
  rep.vector = {1.0, -1.0};
  std::vector<LocalLosses> ls;
  for (double lambda : {0.0, 1.0, 3.0}) {
    ClientState s = base[3];
    Hyper h = small_batches();
    h.batch_size = 1000;  // one batch, so the reported losses come from the unchanged model
    Rng rng(0);
    ls.push_back(codistill_client_round(s, rep, lambda, {}, h, rng));
  }
  EXPECT_NEAR(ls[1].total - ls[0].total, ls[1].distill, 1e-9);
  EXPECT_NEAR(ls[2].total - ls[0].total, 3.0 * ls[2].distill, 1e-9);
}

TEST(Codistill, TwoClientsTeachEachOther) {
  const auto r = run_codistillation(setup(20, 12, 2), {}, small_batches(), {4, 2, 1});
  for (const auto& log : r.logs) {
    EXPECT_EQ(log.clients[0].teacher, 1);
    EXPECT_EQ(log.clients[1].teacher, 0);
  }
}

TEST(Codistill, OnlyRepresentationsCrossTheWire) {
  StrategyConfig cfg;
  const auto r = run_codistillation(setup(40), cfg, small_batches(), {3, 5, 1});
  EXPECT_EQ(r.channel.count(PayloadKind::kParams), 0u);
  EXPECT_EQ(r.channel.count(PayloadKind::kRep), 12u);
  const std::size_t params = nn::init_model(nn::Architecture{}, 0).parameter_count();
  for (int round = 0; round < 3; ++round)
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(r.channel.bytes_received(c, round), 2u * sizeof(double));
      EXPECT_LT(r.channel.bytes_received(c, round), params * sizeof(double));
    }
}

TEST(Codistill, ThreadCountDoesNotChangeResults) {
  const auto a = run_codistillation(setup(40), {}, small_batches(), {3, 9, 1});
  const auto b = run_codistillation(setup(40), {}, small_batches(), {3, 9, 4});
  EXPECT_EQ(snapshot(a.clients), snapshot(b.clients));
}

TEST(Codistill, DivergenceIsReported) {
  StrategyConfig cfg;
  cfg.lambda = 1e30;
  cfg.reduction = DistillReduction::kSum;
  try {
    run_codistillation(setup(20), cfg, small_batches(), {20, 0, 1});
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.client(), 0);
    EXPECT_GE(e.round(), 0);
  }
}

TEST(FedAvg, ClientsAgreeAfterEveryRound) {
  auto clients = setup(60);
  for (int round = 0; round < 3; ++round) {
    auto r = run_fedavg(std::move(clients), {}, small_batches(), {1, static_cast<std::uint64_t>(round), 1});
    clients = std::move(r.clients);
    for (const auto& c : clients) EXPECT_EQ(c.model, clients[0].model);
  }
}

TEST(FedAvg, AveragingArithmetic) {
  const nn::ModelState m = nn::init_model(tiny_arch(), 3);
  const std::vector<nn::ModelState> same{m, m, m};
  EXPECT_EQ(average_models(same), m);

  std::vector<nn::ModelState> ms(3, m);
  const double v[] = {1.0, 2.0, 6.0};
  for (std::size_t i = 0; i < 3; ++i)
    for (auto& p : ms[i].params) p.value.fill(v[i]);
  for (const auto& p : average_models(ms).params)
    for (double x : p.value.data()) EXPECT_EQ(x, 3.0);

  nn::ModelState neg = m;
  for (auto& p : neg.params)
    for (double& x : p.value.data()) x = -x;
  for (const auto& p : average_models(std::vector<nn::ModelState>{m, neg}).params)
    for (double x : p.value.data()) EXPECT_EQ(x, 0.0);
}

TEST(FedAvg, PayloadIsTheParameterVector) {
  const auto r = run_fedavg(setup(0), {}, small_batches(), {2, 0, 1});
  const std::size_t bytes = nn::init_model(tiny_arch(), 0).parameter_count() * sizeof(double);
  EXPECT_EQ(r.channel.count(PayloadKind::kParams), 16u);
  EXPECT_EQ(r.channel.bytes_received(0, 1), bytes);
}

TEST(ClassTables, UnweightedMeanOverHolders) {
  const std::vector<TargetTable> tables{{{1.0, 1.0}, {}}, {{3.0, 3.0}, {4.0, 0.5}}};
  std::vector<std::string> warnings;
  const TargetTable g = average_class_tables(tables, &warnings);
  EXPECT_EQ(g[0], (std::vector<double>{2.0, 2.0}));
  EXPECT_EQ(g[1], (std::vector<double>{4.0, 0.5}));
  EXPECT_TRUE(warnings.empty());

  const std::vector<TargetTable> gap{{{1.0}, {}}, {{2.0}, {}}};
  const TargetTable h = average_class_tables(gap, &warnings);
  EXPECT_TRUE(h[1].empty());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("class 1"), std::string::npos);
}

TEST(ClassTables, LocalMeansAndPrototypeWidth) {
  auto clients = setup(0);
  const auto logits = local_class_means(clients[1], nn::RepresentationMode::kLogits);
  const auto expected = mean_rep(clients[1], clients[1].shard.data.indices_of(1), nn::RepresentationMode::kLogits);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(logits[1][j], expected[j], 1e-12);

  auto full = make_clients({clients[0].shard}, nn::init_model(nn::Architecture{}, 0));
  data::SyntheticSpec s;
  s.per_class = 4;
  full[0].shard.data = data::gen_synthetic(s);
  EXPECT_EQ(local_class_means(full[0], nn::RepresentationMode::kPenultimate)[0].size(), 84u);
}

TEST(FedProto, SendsPrototypesOnly) {
  StrategyConfig cfg;
  cfg.strategy = Strategy::kFedProto;
  const auto r = run_strategy(setup(20), cfg, small_batches(), {2, 0, 1});
  EXPECT_EQ(r.channel.count(PayloadKind::kParams), 0u);
  EXPECT_GT(r.channel.count(PayloadKind::kProto), 0u);
}

TEST(Strategy, ParseAndReservedTag) {
  EXPECT_EQ(parse_strategy("local-only"), Strategy::kLocalOnly);
  EXPECT_EQ(parse_strategy("fedavg"), Strategy::kFedAvg);
  try {
    parse_strategy("fedamp");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("not implemented"), std::string::npos);
  }
  EXPECT_THROW(parse_strategy("fedsgd"), std::invalid_argument);
}

}  // namespace
}  // namespace codistill::fed
