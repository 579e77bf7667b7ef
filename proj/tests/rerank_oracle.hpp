#pragma once

// Exhaustive re-ranking: copy the item matrix, blank columns, score every
// unobserved item, sort, and look for the explained item in the head.

#include <algorithm>
#include <utility>
#include <vector>

#include "counter/counterfactual.hpp"

namespace counter::rerank_oracle {

inline bool in_top_k(const RecommenderModel& model, const AspectMatrices& m,
                     const RowMatrix& items, std::size_t user, std::size_t item, std::size_t k) {
  const auto scorer = model.bind(m.x.row(static_cast<Eigen::Index>(user)).transpose());
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t j = 0; j < m.b.items(); ++j) {
    if (m.b(user, j)) continue;
    scored.emplace_back(-scorer.score(items.row(static_cast<Eigen::Index>(j)).transpose()), j);
  }
  std::sort(scored.begin(), scored.end());
  for (std::size_t i = 0; i < k && i < scored.size(); ++i) {
    if (scored[i].second == item) return true;
  }
  return false;
}

struct Flags {
  bool counted = false;
  bool pn = false;
  bool ps = false;
};

inline Flags flags(const RecommenderModel& model, const AspectMatrices& m, const Explanation& e,
                   std::size_t k) {
  Flags f;
  if (!e.valid || e.aspects.empty()) return f;
  f.counted = true;
  RowMatrix without = m.y;
  RowMatrix only = RowMatrix::Zero(m.y.rows(), m.y.cols());
  for (auto a : e.aspects) {
    const auto c = static_cast<Eigen::Index>(a);
    without.col(c).setZero();
    only.col(c) = m.y.col(c);
  }
  f.pn = !in_top_k(model, m, without, e.user, e.item, k);
  f.ps = in_top_k(model, m, only, e.user, e.item, k);
  return f;
}

}  // namespace counter::rerank_oracle
