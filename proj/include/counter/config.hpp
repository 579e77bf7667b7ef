#pragma once

// Run configuration: a flat key=value namespace shared by the config file and
// the command line, with typed accessors and stage hashes.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "counter/corpus.hpp"
#include "counter/counterfactual.hpp"
#include "counter/error.hpp"
#include "counter/recsys.hpp"
#include "counter/synth.hpp"

namespace counter {

enum class KeyType { kText, kReal, kCount, kBool, kList, kRealList };

struct ConfigKey {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"out", KeyType::kText, "run", "output directory"},
      {"data", KeyType::kText, "", "interaction file to ingest"},
      {"catalog", KeyType::kText, "", "fixed aspect catalog, one name per line"},
      {"scale", KeyType::kCount, "5", "rating scale N when the data has no #scale header"},
      {"k", KeyType::kCount, "5", "length of recommendation lists"},
      {"lr", KeyType::kReal, "0.01", "learning rate"},
      {"epochs", KeyType::kCount, "50", "training epochs"},
      {"batch", KeyType::kCount, "256", "mini-batch size"},
      {"negatives", KeyType::kCount, "2", "negative samples per positive"},
      {"reduction", KeyType::kText, "mean", "batch gradient reduction: mean or sum"},
      {"lambda", KeyType::kReal, "100", "hinge weight"},
      {"gamma", KeyType::kReal, "1", "l1 weight"},
      {"alpha", KeyType::kReal, "0.2", "hinge margin"},
      {"tau", KeyType::kReal, "0.0001", "zero threshold for change entries"},
      {"step", KeyType::kReal, "0.01", "counterfactual step size"},
      {"iters", KeyType::kCount, "1000", "counterfactual iteration cap"},
      {"tol", KeyType::kReal, "0.000001", "stationarity tolerance"},
      {"scan_step", KeyType::kReal, "0.05", "single-aspect scan spacing"},
      {"reviewed_only", KeyType::kBool, "true", "only change aspects the item was reviewed on"},
      {"gamma_ramp", KeyType::kReal, "0.5", "fraction of iterations over which l1 ramps in"},
      {"restarts", KeyType::kBool, "true", "also descend from per-aspect optima"},
      {"variants", KeyType::kList, "multi,single", "explanation variants"},
      {"lambdas", KeyType::kRealList, "1,10,100,1000", "sweep grid"},
      {"sweep_variant", KeyType::kText, "multi", "variant used by the sweep"},
      {"seed", KeyType::kCount, "42", "random seed"},
      {"threads", KeyType::kCount, "0", "worker threads (0 = all cores)"},
      {"synth_users", KeyType::kCount, "100", "synthetic users"},
      {"synth_items", KeyType::kCount, "500", "synthetic items"},
      {"synth_aspects", KeyType::kCount, "20", "synthetic aspects"},
      {"synth_user_aspects", KeyType::kCount, "3", "preferred aspects per user"},
      {"synth_item_aspects", KeyType::kCount, "3", "quality aspects per item"},
      {"synth_density", KeyType::kReal, "0.02", "fraction of items each user interacts with"},
      {"synth_noise", KeyType::kReal, "0", "noise mention rate"},
      {"synth_mention_p", KeyType::kReal, "0.5", "geometric parameter of driver mentions"},
      {"synth_mention_cap", KeyType::kCount, "10", "cap on driver mentions"},
  };
  return keys;
}

inline const ConfigKey& config_key(std::string_view name) {
  for (const auto& key : config_keys()) {
    if (key.name == name) return key;
  }
  throw ConfigError("unknown config key '" + std::string(name) + "'");
}

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

inline std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto length = comma == std::string_view::npos ? text.npos : comma - start;
    const auto piece = trim(text.substr(start, length));
    if (!piece.empty()) out.emplace_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_real(const std::string& key, std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + std::string(text) + "'");
  }
  return v;
}

inline std::uint64_t parse_count(const std::string& key, std::string_view text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + std::string(text) + "'");
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& key : config_keys()) values_[key.name] = key.default_value;
  }

  void set(const std::string& name, std::string value) {
    config_key(name);
    values_[name] = std::string(detail::trim(value));
  }

  const std::string& text(const std::string& name) const {
    config_key(name);
    return values_.at(name);
  }

  double real(const std::string& name) const { return detail::parse_real(name, text(name)); }
  std::uint64_t count(const std::string& name) const {
    return detail::parse_count(name, text(name));
  }
  bool flag(const std::string& name) const { return detail::parse_bool(name, text(name)); }
  std::vector<std::string> list(const std::string& name) const {
    return detail::split_list(text(name));
  }
  std::vector<double> reals(const std::string& name) const {
    std::vector<double> out;
    for (const auto& piece : list(name)) out.push_back(detail::parse_real(name, piece));
    return out;
  }

  /// Value in a normal form so that equivalent spellings hash alike.
  std::string canonical(const std::string& name) const {
    const auto& key = config_key(name);
    switch (key.type) {
      case KeyType::kReal: return detail::format_real(real(name));
      case KeyType::kCount: return std::to_string(count(name));
      case KeyType::kBool: return flag(name) ? "true" : "false";
      case KeyType::kList: {
        std::string out;
        for (const auto& piece : list(name)) out += (out.empty() ? "" : ",") + piece;
        return out;
      }
      case KeyType::kRealList: {
        std::string out;
        for (double v : reals(name)) out += (out.empty() ? "" : ",") + detail::format_real(v);
        return out;
      }
      case KeyType::kText: break;
    }
    return text(name);
  }

  /// Chains `parent` with the canonical values of `keys`.
  std::string hash(std::string_view parent, std::initializer_list<const char*> keys) const {
    std::uint64_t h = fnv1a(parent);
    for (const char* name : keys) {
      h = fnv1a(name, h);
      h = fnv1a("=", h);
      h = fnv1a(canonical(name), h);
      h = fnv1a("\n", h);
    }
    return hex64(h);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::size_t threads() const {
    const auto t = count("threads");
    if (t > 0) return t;
    return std::max(1u, std::thread::hardware_concurrency());
  }

  int rating_scale() const {
    const auto n = count("scale");
    if (n < 2 || n > 1000) throw ConfigError("scale must lie in [2, 1000]");
    return static_cast<int>(n);
  }

  std::size_t k() const {
    const auto k = count("k");
    if (k == 0) throw ConfigError("k must be at least 1");
    return k;
  }

  TrainingHyper training() const {
    TrainingHyper h;
    h.learning_rate = real("lr");
    h.epochs = count("epochs");
    h.batch_size = count("batch");
    h.negatives = count("negatives");
    h.seed = count("seed");
    const auto& reduction = text("reduction");
    if (reduction == "mean") {
      h.reduction = Reduction::kMean;
    } else if (reduction == "sum") {
      h.reduction = Reduction::kSum;
    } else {
      throw ConfigError("reduction must be mean or sum, got '" + reduction + "'");
    }
    if (!(h.learning_rate > 0.0)) throw ConfigError("lr must be positive");
    if (h.epochs == 0 || h.batch_size == 0) throw ConfigError("epochs and batch must be positive");
    return h;
  }

  CfHyper counterfactual() const {
    CfHyper h;
    h.lambda = real("lambda");
    h.gamma = real("gamma");
    h.alpha = real("alpha");
    h.tau = real("tau");
    h.step = real("step");
    h.max_iterations = count("iters");
    h.tolerance = real("tol");
    h.scan_step = real("scan_step");
    h.reviewed_only = flag("reviewed_only");
    h.gamma_ramp = real("gamma_ramp");
    h.restarts = flag("restarts");
    h.validate();
    return h;
  }

  std::vector<Variant> variants() const {
    std::vector<Variant> out;
    for (const auto& name : list("variants")) out.push_back(parse_variant(name));
    if (out.empty()) throw ConfigError("variants must name at least one variant");
    return out;
  }

  SynthSpec synth() const {
    SynthSpec s;
    s.users = count("synth_users");
    s.items = count("synth_items");
    s.aspects = count("synth_aspects");
    s.user_aspects = count("synth_user_aspects");
    s.item_aspects = count("synth_item_aspects");
    s.density = real("synth_density");
    s.noise = real("synth_noise");
    s.mention_p = real("synth_mention_p");
    s.mention_cap = count("synth_mention_cap");
    s.rating_scale = rating_scale();
    s.seed = count("seed");
    s.validate();
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Parses `key = value` lines; blank lines and lines starting with # are
/// skipped.
inline std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(detail::trim(body.substr(0, eq)));
    config_key(key);
    if (out.count(key)) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    out[key] = std::string(detail::trim(body.substr(eq + 1)));
  }
  return out;
}

/// Defaults, then the file, then flags. Returns a notice for every flag that
/// overrides a different file value.
inline std::vector<std::string> merge_config(RunConfig& config,
                                             const std::map<std::string, std::string>& file,
                                             const std::map<std::string, std::string>& flags) {
  std::vector<std::string> notices;
  for (const auto& [key, value] : file) config.set(key, value);
  for (const auto& [key, value] : flags) {
    auto it = file.find(key);
    if (it != file.end() && detail::trim(it->second) != detail::trim(value)) {
      notices.push_back("--" + key + " " + value + " overrides config file value " + it->second);
    }
    config.set(key, value);
  }
  return notices;
}

}  // namespace counter
