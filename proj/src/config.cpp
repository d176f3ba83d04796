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
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "codistill/experiment.hpp"

namespace codistill::exp {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value, int line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError(line, "empty list element");
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError(line, "empty list");
  return out;
}

template <typename T>
T parse_number(const std::string& text, int line, const std::string& key) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(line, "'" + key + "' expects a number, got '" + text + "'");
  return value;
}

template <typename T>
std::vector<T> parse_number_list(const std::string& value, int line, const std::string& key) {
  std::vector<T> out;
  for (const auto& item : split_list(value, line)) out.push_back(parse_number<T>(item, line, key));
  return out;
}

int positive_int(const std::string& text, int line, const std::string& key) {
  const int v = parse_number<int>(text, line, key);
  if (v < 1) throw ConfigError(line, "'" + key + "' must be >= 1");
  return v;
}

struct Entry {
  std::string value;
  int line;
};

using Handler = std::function<void(ExperimentPlan&, const Entry&, const std::filesystem::path&)>;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  return p.is_relative() && !base.empty() ? base / p : p;
}

const std::map<std::string, std::map<std::string, Handler>>& grammar() {
  using P = ExperimentPlan;
  using Path = std::filesystem::path;
  static const std::map<std::string, std::map<std::string, Handler>> g = {
      {"dataset",
       {
           {"source",
            [](P& p, const Entry& e, const Path&) {
              if (e.value == "synthetic") p.source = DataSource::kSynthetic;
              else if (e.value == "directory") p.source = DataSource::kDirectory;
              else throw ConfigError(e.line, "source must be 'synthetic' or 'directory', got '" + e.value + "'");
            }},
           {"path", [](P& p, const Entry& e, const Path& base) { p.data_path = resolve(base, e.value); }},
           {"side", [](P& p, const Entry& e, const Path&) { p.arch.input_side = positive_int(e.value, e.line, "side"); }},
           {"classes",
            [](P& p, const Entry& e, const Path&) { p.arch.classes = parse_number<int>(e.value, e.line, "classes"); }},
           {"separation",
            [](P& p, const Entry& e, const Path&) { p.separation = parse_number<double>(e.value, e.line, "separation"); }},
           {"noise", [](P& p, const Entry& e, const Path&) { p.noise = parse_number<double>(e.value, e.line, "noise"); }},
           {"holdout",
            [](P& p, const Entry& e, const Path&) { p.holdout_fraction = parse_number<double>(e.value, e.line, "holdout"); }},
       }},
      {"model",
       {
           {"conv1", [](P& p, const Entry& e, const Path&) { p.arch.conv1_channels = positive_int(e.value, e.line, "conv1"); }},
           {"conv2", [](P& p, const Entry& e, const Path&) { p.arch.conv2_channels = positive_int(e.value, e.line, "conv2"); }},
           {"conv3", [](P& p, const Entry& e, const Path&) { p.arch.conv3_channels = positive_int(e.value, e.line, "conv3"); }},
           {"fc1", [](P& p, const Entry& e, const Path&) { p.arch.fc1_width = positive_int(e.value, e.line, "fc1"); }},
           {"kernel1", [](P& p, const Entry& e, const Path&) { p.arch.conv1_kernel = positive_int(e.value, e.line, "kernel1"); }},
           {"kernel2", [](P& p, const Entry& e, const Path&) { p.arch.conv2_kernel = positive_int(e.value, e.line, "kernel2"); }},
           {"init_checkpoint", [](P& p, const Entry& e, const Path& base) { p.init_checkpoint = resolve(base, e.value); }},
       }},
      {"grid",
       {
           {"strategy",
            [](P& p, const Entry& e, const Path&) {
              p.strategies.clear();
              for (const auto& s : split_list(e.value, e.line)) {
                try {
                  p.strategies.push_back(fed::parse_strategy(s));
                } catch (const std::invalid_argument& ex) {
                  throw ConfigError(e.line, ex.what());
                }
              }
            }},
           {"clients", [](P& p, const Entry& e, const Path&) { p.client_counts = parse_number_list<int>(e.value, e.line, "clients"); }},
           {"skew",
            [](P& p, const Entry& e, const Path&) {
              p.skews = parse_number_list<int>(e.value, e.line, "skew");
              for (int s : p.skews)
                if (s < 0 || s >= 100) throw ConfigError(e.line, "skew must be in [0,100), got " + std::to_string(s));
            }},
           {"images_per_class",
            [](P& p, const Entry& e, const Path&) {
              p.images_per_class = parse_number_list<std::size_t>(e.value, e.line, "images_per_class");
            }},
           {"seeds", [](P& p, const Entry& e, const Path&) { p.seeds = parse_number_list<std::uint64_t>(e.value, e.line, "seeds"); }},
       }},
      {"training",
       {
           {"rounds", [](P& p, const Entry& e, const Path&) { p.rounds = parse_number<int>(e.value, e.line, "rounds"); }},
           {"local_epochs", [](P& p, const Entry& e, const Path&) { p.local_epochs = positive_int(e.value, e.line, "local_epochs"); }},
           {"lr", [](P& p, const Entry& e, const Path&) { p.hyper.sgd.lr = parse_number<double>(e.value, e.line, "lr"); }},
           {"momentum",
            [](P& p, const Entry& e, const Path&) { p.hyper.sgd.momentum = parse_number<double>(e.value, e.line, "momentum"); }},
           {"batch",
            [](P& p, const Entry& e, const Path&) {
              p.hyper.batch_size = static_cast<std::size_t>(positive_int(e.value, e.line, "batch"));
            }},
           {"lambda", [](P& p, const Entry& e, const Path&) { p.lambda = parse_number<double>(e.value, e.line, "lambda"); }},
           {"k", [](P& p, const Entry& e, const Path&) { p.k = positive_int(e.value, e.line, "k"); }},
           {"distill_reduction",
            [](P& p, const Entry& e, const Path&) {
              try {
                p.distill_reduction = fed::parse_distill_reduction(e.value);
              } catch (const std::invalid_argument& ex) {
                throw ConfigError(e.line, ex.what());
              }
            }},
           {"representation",
            [](P& p, const Entry& e, const Path&) {
              try {
                p.representation = nn::parse_representation_mode(e.value);
              } catch (const std::invalid_argument& ex) {
                throw ConfigError(e.line, ex.what());
              }
            }},
       }},
      {"output",
       {
           {"path", [](P& p, const Entry& e, const Path&) { p.output = e.value; }},
           {"format",
            [](P& p, const Entry& e, const Path&) {
              if (e.value == "csv") p.format = ResultsFormat::kCsv;
              else if (e.value == "jsonl" || e.value == "json-lines") p.format = ResultsFormat::kJsonLines;
              else throw ConfigError(e.line, "format must be 'csv' or 'jsonl', got '" + e.value + "'");
            }},
           {"exchange_log", [](P& p, const Entry& e, const Path&) { p.exchange_log_dir = e.value; }},
           {"eval",
            [](P& p, const Entry& e, const Path&) {
              if (e.value == "holdout") p.eval = EvalSet::kHoldout;
              else if (e.value == "train") p.eval = EvalSet::kTrain;
              else throw ConfigError(e.line, "eval must be 'holdout' or 'train', got '" + e.value + "'");
            }},
           {"threads", [](P& p, const Entry& e, const Path&) { p.threads = positive_int(e.value, e.line, "threads"); }},
       }},
  };
  return g;
}

}  // namespace

ConfigError::ConfigError(int line, const std::string& what)
    : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + what : "config: " + what),
      line_(line) {}

ExperimentPlan parse_config(std::istream& in, const std::filesystem::path& base_dir) {
  ExperimentPlan plan;
  std::string section;
  std::set<std::string> seen;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(line, "malformed section header '" + text + "'");
      section = trim(std::string_view(text).substr(1, text.size() - 2));
      if (!grammar().contains(section)) throw ConfigError(line, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value', got '" + text + "'");
    const std::string k = trim(std::string_view(text).substr(0, eq));
    const std::string v = trim(std::string_view(text).substr(eq + 1));
    if (section.empty()) throw ConfigError(line, "key '" + k + "' appears before any [section]");
    const auto& keys = grammar().at(section);
    const auto handler = keys.find(k);
    if (handler == keys.end()) throw ConfigError(line, "unknown key '" + k + "' in [" + section + "]");
    if (!seen.insert(section + "." + k).second) throw ConfigError(line, "duplicate key '" + k + "'");
    if (v.empty()) throw ConfigError(line, "key '" + k + "' has an empty value");
    handler->second(plan, Entry{v, line}, base_dir);
  }
  plan.validate();
  return plan;
}

ExperimentPlan parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open " + path.string());
  return parse_config(in, path.parent_path());
}

void ExperimentPlan::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigError(0, what); };
  if (strategies.empty()) fail("no strategy given ([grid] strategy = ...)");
  if (client_counts.empty() || skews.empty() || images_per_class.empty() || seeds.empty()) fail("empty grid");
  for (int c : client_counts)
    if (c < 2 || c % 2 != 0) fail("client counts must be even and >= 2, got " + std::to_string(c));
  for (int s : skews)
    if (s < 0 || s >= 100) fail("skews must be in [0,100), got " + std::to_string(s));
  for (std::size_t n : images_per_class)
    if (n < 1) fail("images_per_class must be >= 1");
  std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) fail("seeds must be distinct");
  if (rounds < 0) fail("rounds must be >= 0");
  if (!(hyper.sgd.lr > 0.0)) fail("lr must be positive");
  if (!(hyper.sgd.momentum >= 0.0 && hyper.sgd.momentum < 1.0)) fail("momentum must be in [0,1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be a finite non-negative number");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) fail("holdout must be in (0,1)");
  if (source == DataSource::kSynthetic && !(separation > 0.0)) fail("separation must be positive");
  if (source == DataSource::kSynthetic && !(noise >= 0.0)) fail("noise must be non-negative");
  if (source == DataSource::kDirectory && data_path.empty()) fail("directory source needs [dataset] path");
  try {
    arch.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
}

fed::StrategyConfig ExperimentPlan::strategy_config(fed::Strategy strategy) const {
  fed::StrategyConfig c;
  c.strategy = strategy;
  c.lambda = lambda;
  c.k = k;
  c.local_epochs = local_epochs;
  c.representation = representation;
  c.reduction = distill_reduction;
  return c;
}

void apply_output_dir_override(ExperimentPlan& plan) {
  const char* dir = std::getenv(kOutputDirEnv);
  if (!dir || !*dir) return;
  plan.output = std::filesystem::path(dir) / plan.output.filename();
  if (plan.exchange_log_dir) plan.exchange_log_dir = std::filesystem::path(dir) / plan.exchange_log_dir->filename();
}

}  // namespace codistill::exp
