#pragma once

// Explanation scoring: fidelity, review-grounded precision/recall, and
// necessity/sufficiency via counterfactual re-ranking of the whole catalog.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "counter/corpus.hpp"
#include "counter/counterfactual.hpp"
#include "counter/error.hpp"
#include "counter/parallel.hpp"
#include "counter/recsys.hpp"

namespace counter {

using PairKey = std::pair<std::size_t, std::size_t>;  // (user, item)

/// Aspects of a review whose mean mention sentiment is positive, ascending.
inline std::vector<std::size_t> positive_aspects(const InteractionRecord& record) {
  std::map<std::size_t, std::pair<double, int>> acc;
  for (const auto& m : record.mentions) {
    auto& [sum, count] = acc[m.aspect];
    sum += m.sentiment;
    ++count;
  }
  std::vector<std::size_t> out;
  for (const auto& [aspect, sc] : acc) {
    if (sc.first / sc.second > 0.0) out.push_back(aspect);
  }
  return out;
}

/// Ground-truth positive aspect sets for every held-out (user, item) pair of
/// evaluable users. Pairs whose review has no positive aspect map to an
/// empty set and are skipped by user-oriented scoring.
inline std::map<PairKey, std::vector<std::size_t>> test_ground_truth(const Corpus& corpus,
                                                                     const HoldoutSplit& split) {
  std::map<PairKey, std::vector<std::size_t>> out;
  for (std::size_t u = 0; u < split.test.size(); ++u) {
    if (!split.evaluable[u]) continue;
    for (auto idx : split.test[u]) {
      const auto& rec = corpus.records[idx];
      out[{rec.user, rec.item}] = positive_aspects(rec);
    }
  }
  return out;
}

inline double fidelity(std::span<const Explanation> explanations) {
  if (explanations.empty()) throw InputError("fidelity of an empty explanation batch");
  const auto valid = std::count_if(explanations.begin(), explanations.end(),
                                   [](const Explanation& e) { return e.valid; });
  return static_cast<double>(valid) / static_cast<double>(explanations.size());
}

inline double harmonic_mean(double a, double b) {
  return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0;
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Precision and recall of one explanation's aspect set against the
/// positive aspects of the user's review. Both inputs sorted ascending.
inline PrecisionRecall pair_precision_recall(std::span<const std::size_t> explained,
                                             std::span<const std::size_t> positive) {
  std::vector<std::size_t> common;
  std::set_intersection(explained.begin(), explained.end(), positive.begin(), positive.end(),
                        std::back_inserter(common));
  PrecisionRecall pr;
  if (!explained.empty()) pr.precision = double(common.size()) / double(explained.size());
  if (!positive.empty()) pr.recall = double(common.size()) / double(positive.size());
  pr.f1 = harmonic_mean(pr.precision, pr.recall);
  return pr;
}

struct UserOrientedScore {
  PrecisionRecall mean;
  std::size_t pairs = 0;
  bool applicable() const { return pairs > 0; }
};

/// Averages per-pair scores over valid explanations of held-out pairs with a
/// nonempty ground truth, each pair weighted equally.
inline UserOrientedScore user_oriented(
    std::span<const Explanation> explanations,
    const std::map<PairKey, std::vector<std::size_t>>& truth,
    std::vector<std::optional<PrecisionRecall>>* per_pair = nullptr) {
  UserOrientedScore out;
  if (per_pair) per_pair->assign(explanations.size(), std::nullopt);
  for (std::size_t i = 0; i < explanations.size(); ++i) {
    const auto& e = explanations[i];
    if (!e.valid || e.aspects.empty()) continue;
    auto it = truth.find({e.user, e.item});
    if (it == truth.end() || it->second.empty()) continue;
    auto pr = pair_precision_recall(e.aspects, it->second);
    out.mean.precision += pr.precision;
    out.mean.recall += pr.recall;
    out.mean.f1 += pr.f1;
    ++out.pairs;
    if (per_pair) (*per_pair)[i] = pr;
  }
  if (out.pairs > 0) {
    const double n = static_cast<double>(out.pairs);
    out.mean.precision /= n;
    out.mean.recall /= n;
    out.mean.f1 /= n;
  }
  return out;
}

enum class Counterfactual { kNecessity, kSufficiency };

/// Re-ranks the user's candidates after editing every item's aspect vector:
/// for necessity the explanation's aspects are zeroed, for sufficiency all
/// other aspects are. Returns whether the item is in the new top-k.
template <UserScorerFactory Model>
bool stays_recommended(const Model& model, const AspectMatrices& matrices,
                       const Explanation& e, std::size_t k, Counterfactual kind) {
  const auto r = static_cast<Eigen::Index>(matrices.aspects());
  Vector keep = Vector::Ones(r);
  if (kind == Counterfactual::kSufficiency) keep.setZero();
  for (auto a : e.aspects) keep[static_cast<Eigen::Index>(a)] = kind == Counterfactual::kNecessity ? 0.0 : 1.0;
  const auto scorer = model.bind(matrices.x.row(static_cast<Eigen::Index>(e.user)).transpose());
  const auto candidates = candidate_items(matrices.b, e.user);
  const auto list = rank_candidates(
      scorer, e.user, candidates,
      [&](std::size_t j) -> Vector {
        return matrices.y.row(static_cast<Eigen::Index>(j)).transpose().cwiseProduct(keep);
      },
      k);
  return list.contains(e.item);
}

struct NecessitySufficiency {
  double pn = 0.0;
  double ps = 0.0;
  double fns = 0.0;
  std::size_t pairs = 0;  // explanations with a nonempty aspect set
  /// Per explanation; nullopt where the explanation did not count.
  std::vector<std::optional<bool>> pn_flags;
  std::vector<std::optional<bool>> ps_flags;
  bool applicable() const { return pairs > 0; }
};

inline double fns(double pn, double ps) { return harmonic_mean(pn, ps); }

template <UserScorerFactory Model>
NecessitySufficiency necessity_sufficiency(const Model& model, const AspectMatrices& matrices,
                                           std::span<const Explanation> explanations,
                                           std::size_t k, std::size_t threads = 1) {
  NecessitySufficiency out;
  out.pn_flags.assign(explanations.size(), std::nullopt);
  out.ps_flags.assign(explanations.size(), std::nullopt);
  parallel_for(explanations.size(), threads, [&](std::size_t i) {
    const auto& e = explanations[i];
    if (!e.valid || e.aspects.empty()) return;
    out.pn_flags[i] = !stays_recommended(model, matrices, e, k, Counterfactual::kNecessity);
    out.ps_flags[i] = stays_recommended(model, matrices, e, k, Counterfactual::kSufficiency);
  });
  std::size_t pn_hits = 0, ps_hits = 0;
  for (std::size_t i = 0; i < explanations.size(); ++i) {
    if (!out.pn_flags[i]) continue;
    ++out.pairs;
    pn_hits += *out.pn_flags[i] ? 1 : 0;
    ps_hits += *out.ps_flags[i] ? 1 : 0;
  }
  if (out.pairs > 0) {
    out.pn = double(pn_hits) / double(out.pairs);
    out.ps = double(ps_hits) / double(out.pairs);
    out.fns = fns(out.pn, out.ps);
  }
  return out;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

/// `size` distinct aspects drawn uniformly from [0, aspects), ascending.
inline std::vector<std::size_t> random_aspects(std::size_t size, std::size_t aspects,
                                               std::mt19937_64& rng) {
  if (size > aspects) {
    throw InputError("random explanation of " + std::to_string(size) + " aspects from " +
                     std::to_string(aspects));
  }
  std::vector<std::size_t> pool(aspects);
  for (std::size_t k = 0; k < aspects; ++k) pool[k] = k;
  for (std::size_t i = 0; i < size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, aspects - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(size);
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Random explanations for the same pairs as `reference`: one aspect each when
/// `single`, otherwise as many as the reference explanation used. Invalid
/// reference explanations yield invalid (empty) random ones.
inline std::vector<Explanation> random_baseline(std::span<const Explanation> reference,
                                                std::size_t aspects, bool single,
                                                std::uint64_t seed) {
  std::vector<Explanation> out;
  out.reserve(reference.size());
  for (const auto& ref : reference) {
    Explanation e;
    e.user = ref.user;
    e.item = ref.item;
    e.rank = ref.rank;
    e.variant = ref.variant;
    e.epsilon = ref.epsilon;
    e.delta = Vector::Zero(static_cast<Eigen::Index>(aspects));
    if (ref.valid) {
      std::mt19937_64 rng(mix_seed(seed, ref.user, ref.item));
      e.aspects = random_aspects(single ? 1 : ref.aspects.size(), aspects, rng);
      e.valid = true;
    }
    out.push_back(std::move(e));
  }
  return out;
}

struct RankProfile {
  std::size_t rank = 0;
  std::size_t count = 0;
  double mean_complexity = 0.0;
  double mean_strength = 0.0;
  double mean_aspects = 0.0;
};

/// Means over valid explanations grouped by list position 1..k; positions
/// without valid explanations are omitted.
inline std::vector<RankProfile> position_profile(std::span<const Explanation> explanations,
                                                 std::size_t k) {
  std::vector<RankProfile> acc(k);
  for (std::size_t p = 0; p < k; ++p) acc[p].rank = p + 1;
  for (const auto& e : explanations) {
    if (!e.valid || e.rank == 0 || e.rank > k) continue;
    auto& slot = acc[e.rank - 1];
    ++slot.count;
    slot.mean_complexity += e.complexity;
    slot.mean_strength += e.strength;
    slot.mean_aspects += static_cast<double>(e.aspects.size());
  }
  std::vector<RankProfile> out;
  for (auto& slot : acc) {
    if (slot.count == 0) continue;
    const double n = static_cast<double>(slot.count);
    slot.mean_complexity /= n;
    slot.mean_strength /= n;
    slot.mean_aspects /= n;
    out.push_back(slot);
  }
  return out;
}

struct EvalReport {
  std::string label;  // variant name or baseline name
  std::size_t attempted = 0;
  std::size_t valid = 0;
  double fidelity = 0.0;
  double mean_complexity = 0.0;  // over valid explanations
  double mean_strength = 0.0;
  UserOrientedScore user;
  NecessitySufficiency model;
  std::vector<RankProfile> profile;
  std::vector<std::optional<PrecisionRecall>> pair_scores;
};

template <UserScorerFactory Model>
EvalReport evaluate(std::string label, std::span<const Explanation> explanations,
                    const Model& model, const AspectMatrices& matrices,
                    const std::map<PairKey, std::vector<std::size_t>>& truth, std::size_t k,
                    std::size_t threads = 1) {
  EvalReport report;
  report.label = std::move(label);
  report.attempted = explanations.size();
  if (!explanations.empty()) report.fidelity = fidelity(explanations);
  for (const auto& e : explanations) {
    if (!e.valid) continue;
    ++report.valid;
    report.mean_complexity += e.complexity;
    report.mean_strength += e.strength;
  }
  if (report.valid > 0) {
    report.mean_complexity /= double(report.valid);
    report.mean_strength /= double(report.valid);
  }
  report.user = user_oriented(explanations, truth, &report.pair_scores);
  report.model = necessity_sufficiency(model, matrices, explanations, k, threads);
  report.profile = position_profile(explanations, k);
  return report;
}

}  // namespace counter
