#pragma once

// Artifact formats: JSON-lines explanations and ranked lists, hash-stamped
// text files, stage manifests and evaluation reports.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "counter/config.hpp"
#include "counter/corpus.hpp"
#include "counter/counterfactual.hpp"
#include "counter/error.hpp"
#include "counter/metrics.hpp"
#include "counter/recsys.hpp"

namespace counter {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("missing file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path.string());
  return out;
}

inline void require_file(const fs::path& path, std::string_view produced_by) {
  if (!fs::exists(path)) {
    throw InputError("missing prerequisite " + path.string() + " (run `" +
                     std::string(produced_by) + "` first)");
  }
}

/// Value of the first leading `#config_hash=` / `# config_hash=` comment.
inline std::optional<std::string> header_hash(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing file: " + path.string());
  std::string line;
  while (std::getline(in, line) && !line.empty() && line.front() == '#') {
    auto body = detail::trim(std::string_view(line).substr(1));
    constexpr std::string_view kKey = "config_hash=";
    if (body.starts_with(kKey)) return std::string(body.substr(kKey.size()));
  }
  return std::nullopt;
}

inline void expect_hash(const fs::path& path, const std::optional<std::string>& found,
                        const std::string& expected) {
  if (!found) throw ConfigError(path.string() + " carries no config hash");
  if (*found != expected) {
    throw ConfigError(path.string() + " was produced under config hash " + *found +
                      " but the current config gives " + expected +
                      "; rerun the producing stage");
  }
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Name lookups

class NameIndex {
 public:
  explicit NameIndex(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) index_.emplace(names[i], i);
  }
  std::size_t at(const std::string& name, std::string_view what) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown " + std::string(what) + " '" + name + "'");
    return it->second;
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Ranked lists

inline Json list_to_json(const RankedList& list, const Corpus& corpus, const std::string& hash) {
  Json items = Json::array();
  for (const auto& s : list.top) {
    items.push_back(Json{{"item_id", corpus.item_ids[s.item]}, {"score", s.score}});
  }
  return Json{{"user_id", corpus.user_ids[list.user]},
              {"k", list.k},
              {"items", std::move(items)},
              {"boundary",
               Json{{"item_id", corpus.item_ids[list.boundary.item]},
                    {"score", list.boundary.score}}},
              {"config_hash", hash}};
}

template <typename Fn>
void for_each_json_line(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw InputError("missing file: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      fn(Json::parse(line));
    } catch (const Json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline std::vector<RankedList> read_lists(const fs::path& path, const Corpus& corpus,
                                          const std::string& expected_hash) {
  const NameIndex users(corpus.user_ids), items(corpus.item_ids);
  std::vector<RankedList> out;
  for_each_json_line(path, [&](const Json& j) {
    expect_hash(path, j.at("config_hash").get<std::string>(), expected_hash);
    RankedList list;
    list.user = users.at(j.at("user_id").get<std::string>(), "user");
    list.k = j.at("k").get<std::size_t>();
    for (const auto& it : j.at("items")) {
      list.top.push_back({items.at(it.at("item_id").get<std::string>(), "item"),
                          it.at("score").get<double>()});
    }
    const auto& b = j.at("boundary");
    list.boundary = {items.at(b.at("item_id").get<std::string>(), "item"),
                     b.at("score").get<double>()};
    if (list.top.size() != list.k) throw InputError(path.string() + ": list length differs from k");
    out.push_back(std::move(list));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Explanations

inline Json explanation_to_json(const Explanation& e, const Corpus& corpus,
                                const std::string& hash) {
  Json aspects = Json::array();
  Json delta = Json::array();
  for (auto k : e.aspects) {
    aspects.push_back(corpus.catalog.name(k));
    delta.push_back(e.delta[static_cast<Eigen::Index>(k)]);
  }
  return Json{{"user_id", corpus.user_ids[e.user]},
              {"item_id", corpus.item_ids[e.item]},
              {"rank", e.rank},
              {"variant", std::string(to_string(e.variant))},
              {"aspects", std::move(aspects)},
              {"delta", std::move(delta)},
              {"complexity", e.complexity},
              {"strength", e.strength},
              {"epsilon", e.epsilon},
              {"degenerate", e.degenerate},
              {"valid", e.valid},
              {"original_score", e.original_score},
              {"counterfactual_score", e.counterfactual_score},
              {"boundary_score", e.boundary_score},
              {"config_hash", hash}};
}

inline Explanation explanation_from_json(const Json& j, const Corpus& corpus,
                                         const NameIndex& users, const NameIndex& items,
                                         const NameIndex& aspects) {
  Explanation e;
  e.user = users.at(j.at("user_id").get<std::string>(), "user");
  e.item = items.at(j.at("item_id").get<std::string>(), "item");
  e.rank = j.at("rank").get<std::size_t>();
  e.variant = parse_variant(j.at("variant").get<std::string>());
  e.delta = Vector::Zero(static_cast<Eigen::Index>(corpus.aspects()));
  const auto& names = j.at("aspects");
  const auto& values = j.at("delta");
  if (names.size() != values.size()) throw InputError("aspects and delta lengths differ");
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto k = aspects.at(names[i].get<std::string>(), "aspect");
    e.aspects.push_back(k);
    e.delta[static_cast<Eigen::Index>(k)] = values[i].get<double>();
  }
  std::sort(e.aspects.begin(), e.aspects.end());
  e.complexity = j.at("complexity").get<double>();
  e.strength = j.at("strength").get<double>();
  e.epsilon = j.at("epsilon").get<double>();
  e.degenerate = j.value("degenerate", false);
  e.valid = j.at("valid").get<bool>();
  e.original_score = j.value("original_score", 0.0);
  e.counterfactual_score = j.value("counterfactual_score", 0.0);
  e.boundary_score = j.value("boundary_score", 0.0);
  return e;
}

inline void write_explanations(const fs::path& path, std::span<const Explanation> batch,
                               const Corpus& corpus, const std::string& hash) {
  auto out = open_output(path);
  for (const auto& e : batch) out << explanation_to_json(e, corpus, hash).dump() << '\n';
}

inline std::vector<Explanation> read_explanations(const fs::path& path, const Corpus& corpus,
                                                  const std::string& expected_hash) {
  const NameIndex users(corpus.user_ids), items(corpus.item_ids), aspects(corpus.catalog.names());
  std::vector<Explanation> out;
  for_each_json_line(path, [&](const Json& j) {
    expect_hash(path, j.at("config_hash").get<std::string>(), expected_hash);
    out.push_back(explanation_from_json(j, corpus, users, items, aspects));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline Json report_to_json(const EvalReport& r) {
  Json j{{"label", r.label},
         {"attempted", r.attempted},
         {"valid", r.valid},
         {"fidelity", r.fidelity},
         {"mean_complexity", r.mean_complexity},
         {"mean_strength", r.mean_strength}};
  if (r.user.applicable()) {
    j["user_oriented"] = Json{{"pairs", r.user.pairs},
                              {"precision", r.user.mean.precision},
                              {"recall", r.user.mean.recall},
                              {"f1", r.user.mean.f1}};
  } else {
    j["user_oriented"] = Json{{"pairs", 0}, {"status", "not_applicable"}};
  }
  if (r.model.applicable()) {
    j["model_oriented"] = Json{{"pairs", r.model.pairs},
                               {"pn", r.model.pn},
                               {"ps", r.model.ps},
                               {"fns", r.model.fns}};
  } else {
    j["model_oriented"] = Json{{"pairs", 0}, {"status", "not_applicable"}};
  }
  Json profile = Json::array();
  for (const auto& p : r.profile) {
    profile.push_back(Json{{"rank", p.rank},
                           {"count", p.count},
                           {"mean_complexity", p.mean_complexity},
                           {"mean_strength", p.mean_strength},
                           {"mean_aspects", p.mean_aspects}});
  }
  j["profile"] = std::move(profile);
  return j;
}

namespace detail {
inline std::string csv_real(double v) { return format_real(v); }
inline std::string csv_flag(const std::optional<bool>& v) {
  return v ? (*v ? "1" : "0") : "";
}
}  // namespace detail

inline void write_pairs_csv(const fs::path& path, const EvalReport& r,
                            std::span<const Explanation> batch, const Corpus& corpus,
                            const std::string& hash) {
  auto out = open_output(path);
  out << "# config_hash=" << hash << '\n';
  out << "user_id,item_id,rank,valid,aspects,complexity,strength,precision,recall,f1,pn,ps\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& e = batch[i];
    out << corpus.user_ids[e.user] << ',' << corpus.item_ids[e.item] << ',' << e.rank << ','
        << (e.valid ? 1 : 0) << ',' << e.aspects.size() << ',' << detail::csv_real(e.complexity)
        << ',' << detail::csv_real(e.strength) << ',';
    if (const auto& pr = r.pair_scores[i]) {
      out << detail::csv_real(pr->precision) << ',' << detail::csv_real(pr->recall) << ','
          << detail::csv_real(pr->f1);
    } else {
      out << ",,";
    }
    out << ',' << detail::csv_flag(r.model.pn_flags[i]) << ','
        << detail::csv_flag(r.model.ps_flags[i]) << '\n';
  }
}

inline void write_profile_csv(const fs::path& path, const EvalReport& r,
                              const std::string& hash) {
  auto out = open_output(path);
  out << "# config_hash=" << hash << '\n';
  out << "rank,mean_complexity,mean_strength,count,mean_aspects\n";
  for (const auto& p : r.profile) {
    out << p.rank << ',' << detail::csv_real(p.mean_complexity) << ','
        << detail::csv_real(p.mean_strength) << ',' << p.count << ','
        << detail::csv_real(p.mean_aspects) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Manifests

struct Manifest {
  std::string stage;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  std::map<std::string, std::string> inputs;  // file -> config hash
  std::vector<std::string> outputs;
  std::map<std::string, std::string> config;
};

inline void write_manifest(const fs::path& dir, const Manifest& m) {
  Json inputs = Json::object();
  for (const auto& [file, hash] : m.inputs) inputs[file] = hash;
  Json config = Json::object();
  for (const auto& [key, value] : m.config) config[key] = value;
  Json j{{"stage", m.stage},
         {"config_hash", m.config_hash},
         {"seed", m.seed},
         {"started_at", m.started_at},
         {"finished_at", m.finished_at},
         {"inputs", std::move(inputs)},
         {"outputs", m.outputs},
         {"config", std::move(config)}};
  auto out = open_output(dir / "manifest.json");
  out << j.dump(2) << '\n';
}

inline Json read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  try {
    return Json::parse(read_bytes(path));
  } catch (const Json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace counter
