#pragma once

// Synthetic review corpora with planted structure. Each user prefers a few
// aspects and each item is good at a few; a user only interacts with items
// sharing at least one aspect, and the review mentions exactly the shared
// ("driver") aspects with positive sentiment, plus optional noise mentions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "counter/corpus.hpp"
#include "counter/error.hpp"
#include "counter/metrics.hpp"

namespace counter {

struct SynthSpec {
  std::size_t users = 100;
  std::size_t items = 500;
  std::size_t aspects = 20;
  std::size_t user_aspects = 3;
  std::size_t item_aspects = 3;
  /// Fraction of the catalog each user interacts with.
  double density = 0.02;
  /// Per-review probability of mentioning each non-driver aspect, with a
  /// sentiment uniform in [-1, 1].
  double noise = 0.0;
  /// Mention counts per driver aspect: 1 + Geometric(p), capped.
  double mention_p = 0.5;
  std::size_t mention_cap = 10;
  int rating_scale = 5;
  std::uint64_t seed = 42;

  std::size_t interactions_per_user() const {
    return static_cast<std::size_t>(std::llround(density * static_cast<double>(items)));
  }

  void validate() const {
    if (users == 0 || items == 0 || aspects == 0 || user_aspects == 0 || item_aspects == 0) {
      throw ConfigError("synthetic spec counts must be at least 1");
    }
    if (user_aspects > aspects || item_aspects > aspects) {
      throw ConfigError("planted aspect sets larger than the catalog");
    }
    if (!(density > 0.0 && density <= 1.0) || interactions_per_user() == 0) {
      throw ConfigError("density must give at least one interaction per user");
    }
    if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("noise must lie in [0, 1]");
    if (!(mention_p > 0.0 && mention_p <= 1.0) || mention_cap == 0) {
      throw ConfigError("mention distribution parameters out of range");
    }
    if (rating_scale < 2) throw ConfigError("rating scale must be at least 2");
  }
};

struct PlantedTruth {
  std::vector<std::vector<std::size_t>> preferred;  // per user, ascending
  std::vector<std::vector<std::size_t>> quality;    // per item, ascending
  std::map<PairKey, std::vector<std::size_t>> drivers;
};

struct SynthCorpus {
  Corpus corpus;
  PlantedTruth truth;
};

inline std::vector<std::size_t> intersect_sorted(const std::vector<std::size_t>& a,
                                                 const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SynthCorpus out;
  Corpus& corpus = out.corpus;
  PlantedTruth& truth = out.truth;
  corpus.rating_scale = spec.rating_scale;
  for (std::size_t u = 0; u < spec.users; ++u) corpus.user_ids.push_back("u" + std::to_string(u));
  for (std::size_t j = 0; j < spec.items; ++j) corpus.item_ids.push_back("i" + std::to_string(j));
  for (std::size_t k = 0; k < spec.aspects; ++k) corpus.catalog.add("a" + std::to_string(k));

  for (std::size_t u = 0; u < spec.users; ++u) {
    truth.preferred.push_back(random_aspects(spec.user_aspects, spec.aspects, rng));
  }
  for (std::size_t j = 0; j < spec.items; ++j) {
    truth.quality.push_back(random_aspects(spec.item_aspects, spec.aspects, rng));
  }

  const std::size_t per_user = spec.interactions_per_user();
  std::geometric_distribution<int> extra_mentions(spec.mention_p);
  std::uniform_real_distribution<double> positive(0.3, 1.0);
  std::uniform_real_distribution<double> any_sentiment(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> when(1, 1'000'000);

  for (std::size_t u = 0; u < spec.users; ++u) {
    std::vector<std::size_t> eligible;
    std::vector<double> weight;
    for (std::size_t j = 0; j < spec.items; ++j) {
      const auto shared = intersect_sorted(truth.preferred[u], truth.quality[j]);
      if (shared.empty()) continue;
      eligible.push_back(j);
      weight.push_back(static_cast<double>(shared.size() * shared.size()));
    }
    if (eligible.size() < per_user) {
      throw ConfigError("infeasible synthetic spec: user " + std::to_string(u) + " shares aspects with " +
                        std::to_string(eligible.size()) + " items but needs " +
                        std::to_string(per_user) + " distinct interactions");
    }
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < per_user; ++c) {
      std::discrete_distribution<std::size_t> pick(weight.begin(), weight.end());
      const std::size_t slot = pick(rng);
      chosen.push_back(eligible[slot]);
      weight[slot] = 0.0;
    }
    std::sort(chosen.begin(), chosen.end());
    for (auto j : chosen) {
      auto drivers = intersect_sorted(truth.preferred[u], truth.quality[j]);
      InteractionRecord rec;
      rec.user = u;
      rec.item = j;
      rec.rating = static_cast<int>(std::min<std::size_t>(spec.rating_scale, 2 + drivers.size()));
      rec.timestamp = when(rng);
      for (auto k : drivers) {
        const auto count = std::min<std::size_t>(spec.mention_cap, 1 + extra_mentions(rng));
        for (std::size_t c = 0; c < count; ++c) rec.mentions.push_back({k, positive(rng)});
      }
      if (spec.noise > 0.0) {
        for (std::size_t k = 0; k < spec.aspects; ++k) {
          if (std::binary_search(drivers.begin(), drivers.end(), k)) continue;
          if (unit(rng) < spec.noise) rec.mentions.push_back({k, any_sentiment(rng)});
        }
      }
      truth.drivers[{u, j}] = std::move(drivers);
      corpus.records.push_back(std::move(rec));
    }
  }
  return out;
}

/// Gold aspect sets per generated interaction.
inline const std::map<PairKey, std::vector<std::size_t>>& oracle_explanations(
    const PlantedTruth& truth) {
  return truth.drivers;
}

namespace detail {
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

/// Writes a corpus in the interaction file format accepted by ingest().
inline void write_interactions(std::ostream& out, const Corpus& corpus) {
  out << "#scale=" << corpus.rating_scale << '\n';
  for (const auto& rec : corpus.records) {
    out << corpus.user_ids[rec.user] << '\t' << corpus.item_ids[rec.item] << '\t' << rec.rating
        << '\t' << rec.timestamp << '\t';
    for (std::size_t i = 0; i < rec.mentions.size(); ++i) {
      if (i) out << ',';
      out << corpus.catalog.name(rec.mentions[i].aspect) << ':'
          << detail::format_real(rec.mentions[i].sentiment);
    }
    out << '\n';
  }
}

/// TSV: user id, item id, comma-separated driver aspect names.
inline void write_truth(std::ostream& out, const Corpus& corpus, const PlantedTruth& truth) {
  for (const auto& [key, drivers] : truth.drivers) {
    out << corpus.user_ids[key.first] << '\t' << corpus.item_ids[key.second] << '\t';
    for (std::size_t i = 0; i < drivers.size(); ++i) {
      if (i) out << ',';
      out << corpus.catalog.name(drivers[i]);
    }
    out << '\n';
  }
}

}  // namespace counter
