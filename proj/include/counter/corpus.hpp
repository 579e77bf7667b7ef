#pragma once

// Review-derived interaction corpus: ingestion of the tab-separated
// interaction format, chronological holdout split, and the user-aspect /
// item-aspect / interaction matrices built from the training split.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "counter/error.hpp"

namespace counter {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class AspectCatalog {
 public:
  AspectCatalog() = default;
  explicit AspectCatalog(const std::vector<std::string>& names) {
    for (const auto& name : names) {
      if (index_.contains(name)) {
        throw InputError("duplicate aspect in catalog: " + name);
      }
      add(name);
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t k) const { return names_.at(k); }
  const std::vector<std::string>& names() const { return names_; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t add(const std::string& name) {
    auto [it, inserted] = index_.emplace(name, names_.size());
    if (inserted) names_.push_back(name);
    return it->second;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Mention {
  std::size_t aspect = 0;
  double sentiment = 0.0;

  friend bool operator==(const Mention&, const Mention&) = default;
};

struct InteractionRecord {
  std::size_t user = 0;
  std::size_t item = 0;
  int rating = 0;
  std::int64_t timestamp = 0;
  std::vector<Mention> mentions;
};

struct Corpus {
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  AspectCatalog catalog;
  std::vector<InteractionRecord> records;
  int rating_scale = 5;

  std::size_t users() const { return user_ids.size(); }
  std::size_t items() const { return item_ids.size(); }
  std::size_t aspects() const { return catalog.size(); }
};

enum class CatalogPolicy { kOpen, kFixed };

struct IngestOptions {
  CatalogPolicy policy = CatalogPolicy::kOpen;
  /// Aspects known up front; required when policy is kFixed.
  std::vector<std::string> fixed_aspects;
  /// Scale used when the file carries no `#scale=N` header.
  int default_scale = 5;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r' || s.front() == '\n')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' ||
                        s.back() == '\r' || s.back() == '\n')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  const bool tabbed = line.find('\t') != std::string_view::npos;
  if (tabbed) {
    std::size_t start = 0;
    while (true) {
      auto pos = line.find('\t', start);
      out.push_back(line.substr(start, pos - start));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  } else {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && line[i] == ' ') ++i;
      if (i >= line.size()) break;
      auto j = line.find(' ', i);
      if (j == std::string_view::npos) j = line.size();
      out.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline InputError line_error(std::size_t line_no, const std::string& what) {
  return InputError("line " + std::to_string(line_no) + ": " + what);
}

}  // namespace detail

/// Parses the interaction file format:
///   #scale=N                       (optional header)
///   user \t item \t rating \t timestamp \t aspect:sentiment,aspect:sentiment
/// Other `#` lines and blank lines are skipped. Repeated (user, item) pairs
/// are merged: mentions concatenate, the latest rating and timestamp win.
inline Corpus ingest(std::istream& in, const IngestOptions& options = {}) {
  Corpus corpus;
  corpus.rating_scale = options.default_scale;
  if (options.policy == CatalogPolicy::kFixed) {
    corpus.catalog = AspectCatalog(options.fixed_aspects);
  }

  std::unordered_map<std::string, std::size_t> user_index;
  std::unordered_map<std::string, std::size_t> item_index;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_index;

  auto intern = [](std::unordered_map<std::string, std::size_t>& index,
                   std::vector<std::string>& ids, std::string_view id) {
    auto [it, inserted] = index.emplace(std::string(id), ids.size());
    if (inserted) ids.emplace_back(id);
    return it->second;
  };

  std::string line;
  std::size_t line_no = 0;
  bool seen_record = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      constexpr std::string_view kScale = "#scale=";
      if (view.starts_with(kScale)) {
        if (seen_record) {
          throw detail::line_error(line_no, "scale header after records");
        }
        int scale = 0;
        if (!detail::parse_number(view.substr(kScale.size()), scale) ||
            scale < 2) {
          throw detail::line_error(line_no, "invalid rating scale");
        }
        corpus.rating_scale = scale;
      }
      continue;
    }

    auto fields = detail::split_fields(view);
    if (fields.size() < 4 || fields.size() > 5) {
      throw detail::line_error(line_no, "expected 4 or 5 fields, got " +
                                            std::to_string(fields.size()));
    }
    InteractionRecord record;
    auto user_id = detail::trim(fields[0]);
    auto item_id = detail::trim(fields[1]);
    if (user_id.empty() || item_id.empty()) {
      throw detail::line_error(line_no, "empty user or item id");
    }
    if (!detail::parse_number(fields[2], record.rating) || record.rating < 1 ||
        record.rating > corpus.rating_scale) {
      throw detail::line_error(line_no, "rating must be an integer in [1, " +
                                            std::to_string(corpus.rating_scale) +
                                            "]");
    }
    if (!detail::parse_number(fields[3], record.timestamp)) {
      throw detail::line_error(line_no, "invalid timestamp");
    }
    if (fields.size() == 5) {
      std::string_view mentions = detail::trim(fields[4]);
      while (!mentions.empty()) {
        auto comma = mentions.find(',');
        auto token = detail::trim(mentions.substr(0, comma));
        mentions = comma == std::string_view::npos
                       ? std::string_view{}
                       : mentions.substr(comma + 1);
        if (token.empty()) continue;
        auto colon = token.rfind(':');
        if (colon == std::string_view::npos || colon == 0) {
          throw detail::line_error(line_no, "mention must be aspect:sentiment");
        }
        std::string aspect(detail::trim(token.substr(0, colon)));
        double sentiment = 0.0;
        if (!detail::parse_number(token.substr(colon + 1), sentiment) ||
            !std::isfinite(sentiment)) {
          throw detail::line_error(line_no, "invalid sentiment for " + aspect);
        }
        if (sentiment < -1.0 || sentiment > 1.0) {
          throw detail::line_error(line_no,
                                   "sentiment outside [-1, 1] for " + aspect);
        }
        std::size_t k = 0;
        if (options.policy == CatalogPolicy::kFixed) {
          auto found = corpus.catalog.find(aspect);
          if (!found) throw detail::line_error(line_no, "unknown aspect " + aspect);
          k = *found;
        } else {
          k = corpus.catalog.add(aspect);
        }
        record.mentions.push_back({k, sentiment});
      }
    }

    seen_record = true;
    record.user = intern(user_index, corpus.user_ids, user_id);
    record.item = intern(item_index, corpus.item_ids, item_id);
    auto key = std::make_pair(record.user, record.item);
    auto found = pair_index.find(key);
    if (found == pair_index.end()) {
      pair_index.emplace(key, corpus.records.size());
      corpus.records.push_back(std::move(record));
    } else {
      auto& merged = corpus.records[found->second];
      merged.mentions.insert(merged.mentions.end(), record.mentions.begin(),
                             record.mentions.end());
      if (record.timestamp >= merged.timestamp) {
        merged.timestamp = record.timestamp;
        merged.rating = record.rating;
      }
    }
  }
  return corpus;
}

inline Corpus ingest_file(const std::string& path,
                          const IngestOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open interaction file: " + path);
  return ingest(in, options);
}

/// Two-column TSV: dense index, external id.
inline void write_index_map(std::ostream& out,
                            const std::vector<std::string>& ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) out << i << '\t' << ids[i] << '\n';
}

struct HoldoutSplit {
  static constexpr std::size_t kTestSize = 5;

  /// Record indices into Corpus::records, chronological per user.
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> test;
  std::vector<bool> evaluable;
};

/// Per user, the last five records by timestamp (ties: ascending item index)
/// form the test set. Users with fewer than six records keep everything in
/// training and are marked non-evaluable.
inline HoldoutSplit split(const Corpus& corpus) {
  const std::size_t m = corpus.users();
  std::vector<std::vector<std::size_t>> by_user(m);
  for (std::size_t idx = 0; idx < corpus.records.size(); ++idx) {
    by_user[corpus.records[idx].user].push_back(idx);
  }
  HoldoutSplit out;
  out.train.resize(m);
  out.test.resize(m);
  out.evaluable.assign(m, false);
  for (std::size_t u = 0; u < m; ++u) {
    auto& recs = by_user[u];
    std::sort(recs.begin(), recs.end(), [&](std::size_t a, std::size_t b) {
      const auto& ra = corpus.records[a];
      const auto& rb = corpus.records[b];
      if (ra.timestamp != rb.timestamp) return ra.timestamp < rb.timestamp;
      return ra.item < rb.item;
    });
    if (recs.size() > HoldoutSplit::kTestSize) {
      auto cut = recs.end() - HoldoutSplit::kTestSize;
      out.train[u].assign(recs.begin(), cut);
      out.test[u].assign(cut, recs.end());
      out.evaluable[u] = true;
    } else {
      out.train[u] = recs;
    }
  }
  return out;
}

/// X entry for an aspect mentioned `count` times: 1 + (N-1)(2 sigma(t) - 1).
/// Kept strictly inside (1, N) even where the sigmoid saturates in double.
inline double preference_score(double count, int scale) {
  const double n = scale;
  double value = 1.0 + (n - 1.0) * (2.0 / (1.0 + std::exp(-count)) - 1.0);
  if (value >= n) value = std::nextafter(n, 0.0);
  if (value <= 1.0) value = std::nextafter(1.0, n);
  return value;
}

/// Y entry for `count` mentions with mean sentiment `mean_sentiment`:
/// 1 + (N-1) sigma(t s), kept strictly inside (1, N).
inline double quality_score(double count, double mean_sentiment, int scale) {
  const double n = scale;
  double value = 1.0 + (n - 1.0) / (1.0 + std::exp(-count * mean_sentiment));
  if (value >= n) value = std::nextafter(n, 0.0);
  if (value <= 1.0) value = std::nextafter(1.0, n);
  return value;
}

/// Binary user-item interaction matrix, stored as sorted item lists per user.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  InteractionMatrix(std::size_t users, std::size_t items)
      : items_(items), rows_(users) {}

  void set(std::size_t user, std::size_t item) {
    auto& row = rows_.at(user);
    auto it = std::lower_bound(row.begin(), row.end(), item);
    if (it == row.end() || *it != item) row.insert(it, item);
  }
  bool operator()(std::size_t user, std::size_t item) const {
    const auto& row = rows_.at(user);
    return std::binary_search(row.begin(), row.end(), item);
  }
  std::span<const std::size_t> row(std::size_t user) const {
    return rows_.at(user);
  }
  std::size_t users() const { return rows_.size(); }
  std::size_t items() const { return items_; }
  std::size_t nonzeros() const {
    std::size_t total = 0;
    for (const auto& r : rows_) total += r.size();
    return total;
  }

  friend bool operator==(const InteractionMatrix&,
                         const InteractionMatrix&) = default;

 private:
  std::size_t items_ = 0;
  std::vector<std::vector<std::size_t>> rows_;
};

struct AspectMatrices {
  RowMatrix x;  // users x aspects
  RowMatrix y;  // items x aspects
  InteractionMatrix b;
  int rating_scale = 5;

  std::size_t aspects() const { return static_cast<std::size_t>(x.cols()); }
};

inline RowMatrix build_x(const Corpus& corpus, const HoldoutSplit& split) {
  RowMatrix counts = RowMatrix::Zero(corpus.users(), corpus.aspects());
  for (const auto& recs : split.train) {
    for (auto idx : recs) {
      const auto& rec = corpus.records[idx];
      for (const auto& m : rec.mentions) counts(rec.user, m.aspect) += 1.0;
    }
  }
  RowMatrix x = RowMatrix::Zero(counts.rows(), counts.cols());
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    for (Eigen::Index k = 0; k < counts.cols(); ++k) {
      if (counts(i, k) > 0) x(i, k) = preference_score(counts(i, k), corpus.rating_scale);
    }
  }
  return x;
}

inline RowMatrix build_y(const Corpus& corpus, const HoldoutSplit& split) {
  RowMatrix counts = RowMatrix::Zero(corpus.items(), corpus.aspects());
  RowMatrix sums = RowMatrix::Zero(corpus.items(), corpus.aspects());
  for (const auto& recs : split.train) {
    for (auto idx : recs) {
      const auto& rec = corpus.records[idx];
      for (const auto& m : rec.mentions) {
        counts(rec.item, m.aspect) += 1.0;
        sums(rec.item, m.aspect) += m.sentiment;
      }
    }
  }
  RowMatrix y = RowMatrix::Zero(counts.rows(), counts.cols());
  for (Eigen::Index j = 0; j < counts.rows(); ++j) {
    for (Eigen::Index k = 0; k < counts.cols(); ++k) {
      const double t = counts(j, k);
      if (t > 0) y(j, k) = quality_score(t, sums(j, k) / t, corpus.rating_scale);
    }
  }
  return y;
}

inline InteractionMatrix build_b(const Corpus& corpus,
                                 const HoldoutSplit& split) {
  InteractionMatrix b(corpus.users(), corpus.items());
  for (const auto& recs : split.train) {
    for (auto idx : recs) b.set(corpus.records[idx].user, corpus.records[idx].item);
  }
  return b;
}

inline AspectMatrices build_matrices(const Corpus& corpus,
                                     const HoldoutSplit& split) {
  return {build_x(corpus, split), build_y(corpus, split),
          build_b(corpus, split), corpus.rating_scale};
}

}  // namespace counter
