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

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "codistill/experiment.hpp"
#include "codistill/metrics.hpp"

namespace codistill::exp {

namespace {

using nlohmann::json;

const std::vector<std::string> kColumns = {
    "strategy",      "clients",         "skew",          "images_per_class", "seed",
    "status",        "client_accuracies", "mean_accuracy", "sd_across_skews", "sd_convention",
    "bytes_exchanged", "bytes_per_client_round", "error"};

std::string fixed4(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

double round4(double v) { return std::stod(fixed4(v)); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

// One RFC 4180 record; quoted fields may span lines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  std::string field;
  bool quoted = false;
  for (int ch; (ch = in.get()) != std::char_traits<char>::eof();) {
    const char c = static_cast<char>(ch);
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw std::runtime_error("results csv: unterminated quoted field");
  fields.push_back(std::move(field));
  return true;
}

std::vector<std::string> row_fields(const ResultsRow& r) {
  std::string accs;
  for (std::size_t i = 0; i < r.client_accuracies.size(); ++i) accs += (i ? ";" : "") + fixed4(r.client_accuracies[i]);
  return {r.strategy,
          std::to_string(r.clients),
          std::to_string(r.skew),
          std::to_string(r.images_per_class),
          std::to_string(r.seed),
          r.ok ? "ok" : "failed",
          accs,
          r.ok ? fixed4(r.mean_accuracy) : "",
          r.sd_across_skews ? fixed4(*r.sd_across_skews) : "",
          metrics::kSdConvention,
          std::to_string(r.bytes_exchanged),
          std::to_string(r.bytes_per_client_round),
          r.error};
}

json row_json(const ResultsRow& r) {
  json j;
  j["strategy"] = r.strategy;
  j["clients"] = r.clients;
  j["skew"] = r.skew;
  j["images_per_class"] = r.images_per_class;
  j["seed"] = r.seed;
  j["status"] = r.ok ? "ok" : "failed";
  json accs = json::array();
  for (double a : r.client_accuracies) accs.push_back(round4(a));
  j["client_accuracies"] = accs;
  j["mean_accuracy"] = r.ok ? json(round4(r.mean_accuracy)) : json(nullptr);
  j["sd_across_skews"] = r.sd_across_skews ? json(round4(*r.sd_across_skews)) : json(nullptr);
  j["sd_convention"] = metrics::kSdConvention;
  j["bytes_exchanged"] = r.bytes_exchanged;
  j["bytes_per_client_round"] = r.bytes_per_client_round;
  j["error"] = r.error;
  return j;
}

ResultsRow row_from_json(const json& j) {
  ResultsRow r;
  r.strategy = j.at("strategy").get<std::string>();
  r.clients = j.at("clients").get<int>();
  r.skew = j.at("skew").get<int>();
  r.images_per_class = j.at("images_per_class").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("status").get<std::string>() == "ok";
  r.client_accuracies = j.at("client_accuracies").get<std::vector<double>>();
  if (!j.at("mean_accuracy").is_null()) r.mean_accuracy = j.at("mean_accuracy").get<double>();
  if (!j.at("sd_across_skews").is_null()) r.sd_across_skews = j.at("sd_across_skews").get<double>();
  r.bytes_exchanged = j.at("bytes_exchanged").get<std::size_t>();
  r.bytes_per_client_round = j.at("bytes_per_client_round").get<std::size_t>();
  r.error = j.at("error").get<std::string>();
  return r;
}

template <typename T>
T field_number(const std::string& s) {
  std::istringstream in(s);
  T v{};
  if (!(in >> v) || in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("results csv: bad numeric field '" + s + "'");
  return v;
}

ResultsRow row_from_fields(const std::vector<std::string>& f) {
  if (f.size() != kColumns.size())
    throw std::runtime_error("results csv: expected " + std::to_string(kColumns.size()) + " fields, got " +
                             std::to_string(f.size()));
  ResultsRow r;
  r.strategy = f[0];
  r.clients = field_number<int>(f[1]);
  r.skew = field_number<int>(f[2]);
  r.images_per_class = field_number<std::size_t>(f[3]);
  r.seed = field_number<std::uint64_t>(f[4]);
  r.ok = f[5] == "ok";
  if (!f[6].empty()) {
    std::istringstream in(f[6]);
    for (std::string a; std::getline(in, a, ';');) r.client_accuracies.push_back(field_number<double>(a));
  }
  if (!f[7].empty()) r.mean_accuracy = field_number<double>(f[7]);
  if (!f[8].empty()) r.sd_across_skews = field_number<double>(f[8]);
  r.bytes_exchanged = field_number<std::size_t>(f[10]);
  r.bytes_per_client_round = field_number<std::size_t>(f[11]);
  r.error = f[12];
  return r;
}

std::string key_value(const ResultsRow& r, const std::string& key) {
  if (key == "strategy") return r.strategy;
  if (key == "clients") return std::to_string(r.clients);
  if (key == "skew") return std::to_string(r.skew);
  if (key == "images" || key == "images_per_class") return std::to_string(r.images_per_class);
  if (key == "seed") return std::to_string(r.seed);
  throw std::invalid_argument("cannot group by '" + key + "' (use strategy, clients, skew, images_per_class, seed)");
}

bool numeric_key(const std::string& key) { return key != "strategy"; }

// Keeps first-appearance order for strategies, numeric order otherwise.
std::vector<std::string> ordered_values(const ResultsTable& t, const std::string& key) {
  std::vector<std::string> out;
  for (const auto& r : t.rows) {
    const auto v = key_value(r, key);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  if (numeric_key(key))
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) { return std::stod(a) < std::stod(b); });
  return out;
}

}  // namespace

void emit_results(const ResultsTable& table, ResultsFormat format, std::ostream& out) {
  if (table.rows.empty()) throw std::invalid_argument("emit_results: empty table");
  if (format == ResultsFormat::kCsv) {
    for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << kColumns[i];
    out << "\r\n";
    for (const auto& r : table.rows) {
      const auto f = row_fields(r);
      for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << csv_field(f[i]);
      out << "\r\n";
    }
  } else {
    for (const auto& r : table.rows) out << row_json(r).dump() << '\n';
  }
}

void emit_results(const ResultsTable& table, ResultsFormat format, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write results to " + path.string());
  emit_results(table, format, out);
  if (!out) throw std::runtime_error("failed writing results to " + path.string());
}

void emit_timings(const ResultsTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write timings to " + path.string());
  out << "strategy,clients,skew,images_per_class,seed,wall_seconds\n";
  for (const auto& r : table.rows)
    out << r.strategy << ',' << r.clients << ',' << r.skew << ',' << r.images_per_class << ',' << r.seed << ','
        << std::fixed << std::setprecision(3) << r.wall_seconds << '\n';
}

ResultsTable parse_results(std::istream& in, ResultsFormat format) {
  ResultsTable table;
  if (format == ResultsFormat::kJsonLines) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      table.rows.push_back(row_from_json(json::parse(line)));
    }
    return table;
  }
  std::vector<std::string> fields;
  if (!read_csv_record(in, fields) || fields != kColumns) throw std::runtime_error("results csv: unexpected header");
  while (read_csv_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    table.rows.push_back(row_from_fields(fields));
  }
  return table;
}

ResultsTable parse_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open results file " + path.string());
  const auto ext = path.extension().string();
  return parse_results(in, ext == ".jsonl" || ext == ".json" ? ResultsFormat::kJsonLines : ResultsFormat::kCsv);
}

std::string pivot_report(const ResultsTable& table, const std::vector<std::string>& group_by) {
  if (group_by.empty() || group_by.size() > 2) throw std::invalid_argument("group-by takes one or two keys");
  ResultsTable ok;
  for (const auto& r : table.rows)
    if (r.ok) ok.rows.push_back(r);
  if (ok.rows.empty()) throw std::invalid_argument("no successful rows to report");

  const std::string& row_key = group_by[0];
  const std::string col_key = group_by.size() == 2 ? group_by[1] : "";
  const auto row_vals = ordered_values(ok, row_key);
  const auto col_vals = col_key.empty() ? std::vector<std::string>{""} : ordered_values(ok, col_key);

  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
  for (const auto& r : ok.rows)
    cells[{key_value(r, row_key), col_key.empty() ? "" : key_value(r, col_key)}].push_back(r.mean_accuracy);

  const bool with_sd = col_key == "skew" && col_vals.size() >= 2;
  std::ostringstream os;
  os << std::left << std::setw(12) << row_key;
  for (const auto& c : col_vals) os << std::right << std::setw(9) << (col_key.empty() ? "acc%" : c);
  if (with_sd) os << std::right << std::setw(7) << "sd";
  os << '\n';
  for (const auto& rv : row_vals) {
    os << std::left << std::setw(12) << rv;
    std::vector<double> row_means;
    bool complete = true;
    for (const auto& cv : col_vals) {
      const auto it = cells.find({rv, cv});
      if (it == cells.end()) {
        os << std::right << std::setw(9) << "-";
        complete = false;
        continue;
      }
      const double m = metrics::mean(it->second);
      row_means.push_back(m);
      os << std::right << std::setw(9) << std::fixed << std::setprecision(1) << 100.0 * m;
    }
    if (with_sd) {
      os << std::right << std::setw(7);
      if (complete) os << std::fixed << std::setprecision(2) << metrics::std_across_skews(row_means);
      else os << "-";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace codistill::exp
