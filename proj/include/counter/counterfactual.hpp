#pragma once

// Counterfactual aspect explanations: find a small non-positive change to an
// item's aspect vector that pushes it below the (K+1)-th ranked item.
//
// Multi-aspect search minimizes
//   |D|^2 + gamma |D|_1 + lambda max(0, alpha + s(Y_j + D) - s_boundary)
// by projected proximal gradient steps on D <= 0, started from zero and from
// each aspect's one-dimensional optimum. The single-aspect search
// enumerates aspects and solves the scalar problem for each by a bracketing
// scan plus golden-section refinement.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "counter/corpus.hpp"
#include "counter/error.hpp"
#include "counter/parallel.hpp"
#include "counter/recsys.hpp"

namespace counter {

struct CfHyper {
  double lambda = 100.0;
  double gamma = 1.0;
  double alpha = 0.2;
  double tau = 1e-4;
  double step = 0.01;
  std::size_t max_iterations = 1000;
  double tolerance = 1e-6;
  /// Grid spacing of the single-aspect scalar scan.
  double scan_step = 0.05;
  /// Only aspects the item has been reviewed on (nonzero quality) may change.
  bool reviewed_only = true;
  /// Fraction of the iteration budget over which the l1 weight used in the
  /// proximal step ramps linearly from 0 to gamma (0 = no ramp).
  double gamma_ramp = 0.5;
  /// Also descend (without the ramp, for a quarter of the budget) from each
  /// free aspect's scalar optimum, keeping the best objective over all starts.
  bool restarts = true;

  void validate() const {
    if (!(lambda >= 0) || !(gamma >= 0) || !(alpha >= 0) || !(tau >= 0)) {
      throw ConfigError("lambda, gamma, alpha and tau must be non-negative");
    }
    if (!(gamma_ramp >= 0.0 && gamma_ramp <= 1.0)) {
      throw ConfigError("gamma_ramp must lie in [0, 1]");
    }
    if (!(step > 0) || !(scan_step > 0) || !(tolerance >= 0)) {
      throw ConfigError("step, scan_step must be positive and tolerance non-negative");
    }
  }
};

enum class Variant { kMulti, kSingle, kMaskedMulti, kMaskedSingle };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kMulti: return "multi";
    case Variant::kSingle: return "single";
    case Variant::kMaskedMulti: return "masked-multi";
    case Variant::kMaskedSingle: return "masked-single";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kMulti, Variant::kSingle, Variant::kMaskedMulti,
                 Variant::kMaskedSingle}) {
    if (to_string(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

inline bool is_single(Variant v) {
  return v == Variant::kSingle || v == Variant::kMaskedSingle;
}
inline bool is_masked(Variant v) {
  return v == Variant::kMaskedMulti || v == Variant::kMaskedSingle;
}

/// Number of entries with |delta| > tau.
inline std::size_t active_count(VectorRef delta, double tau) {
  return static_cast<std::size_t>((delta.array().abs() > tau).count());
}

/// |D|_2^2 + gamma |D|_0, entries within tau of zero counted as zero.
inline double complexity(VectorRef delta, double gamma, double tau = 0.0) {
  return delta.squaredNorm() + gamma * static_cast<double>(active_count(delta, tau));
}

/// Decrease of the item's score when delta is applied to its aspect vector.
template <ItemScorer Scorer>
double strength(const Scorer& scorer, VectorRef item, VectorRef delta) {
  return scorer.score(item) - scorer.score(Vector(item + delta));
}

struct Margin {
  double epsilon = 0.0;
  bool degenerate = false;  // score tied with the boundary item
};

inline Margin margin(const RankedList& list, std::size_t item) {
  const auto rank = list.rank_of(item);
  if (rank == 0) {
    throw InputError("item " + std::to_string(item) + " is not in the top-" +
                     std::to_string(list.k) + " list of user " + std::to_string(list.user));
  }
  const double eps = list.top[rank - 1].score - list.boundary.score;
  return {eps, eps == 0.0};
}

/// Outcome of one counterfactual search, after thresholding and re-scoring.
struct CounterfactualResult {
  Vector delta;
  std::vector<std::size_t> aspects;
  bool valid = false;
  double original_score = 0.0;
  double counterfactual_score = 0.0;
  double objective = 0.0;
  std::size_t iterations = 0;
};

namespace detail {

inline double hinge(double alpha, double score, double boundary) {
  return std::max(0.0, alpha + score - boundary);
}

/// Zeroes |delta| <= tau, re-scores, and decides validity from the re-score.
template <ItemScorer Scorer>
void finalize(const Scorer& scorer, VectorRef item, double boundary, double tau,
              CounterfactualResult& out) {
  out.aspects.clear();
  for (Eigen::Index k = 0; k < out.delta.size(); ++k) {
    if (std::abs(out.delta[k]) <= tau) {
      out.delta[k] = 0.0;
    } else {
      out.aspects.push_back(static_cast<std::size_t>(k));
    }
  }
  out.counterfactual_score = scorer.score(Vector(item + out.delta));
  out.valid = !out.aspects.empty() && out.counterfactual_score <= boundary;
}

}  // namespace detail

/// Minimizes d^2 + l1 |d| + lambda max(0, alpha + s(item + d e_k) - boundary)
/// over d <= 0 for one aspect. Any d with d^2 above the objective at 0 cannot
/// be optimal, which bounds the scan to [-sqrt(f(0)), 0].
template <ItemScorer Scorer>
std::pair<double, double> minimize_single_aspect(const Scorer& scorer, VectorRef item,
                                                 Eigen::Index aspect, double boundary,
                                                 const CfHyper& hyper, double l1 = 0.0) {
  Vector point = item;
  auto objective = [&](double d) {
    point[aspect] = item[aspect] + d;
    const double s = scorer.score(point);
    const double f = d * d - l1 * d + hyper.lambda * detail::hinge(hyper.alpha, s, boundary);
    if (!std::isfinite(f)) throw NumericError("non-finite single-aspect objective");
    return f;
  };
  double best_d = 0.0;
  double best_f = objective(0.0);
  const double reach = std::sqrt(best_f);
  const auto steps = static_cast<std::size_t>(std::ceil(reach / hyper.scan_step));
  for (std::size_t i = 1; i <= steps; ++i) {
    const double d = -static_cast<double>(i) * hyper.scan_step;
    const double f = objective(d);
    if (f < best_f) {
      best_f = f;
      best_d = d;
    }
  }
  // golden-section refinement inside the neighbouring grid cells
  double lo = best_d - hyper.scan_step;
  double hi = std::min(0.0, best_d + hyper.scan_step);
  constexpr double kInvPhi = 0.6180339887498949;
  double a = hi - kInvPhi * (hi - lo);
  double b = lo + kInvPhi * (hi - lo);
  double fa = objective(a);
  double fb = objective(b);
  for (int i = 0; i < 48 && hi - lo > 1e-9; ++i) {
    if (fa < fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - kInvPhi * (hi - lo);
      fa = objective(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + kInvPhi * (hi - lo);
      fb = objective(b);
    }
  }
  for (auto [d, f] : {std::pair{a, fa}, std::pair{b, fb}}) {
    if (f < best_f) {
      best_f = f;
      best_d = d;
    }
  }
  return {best_d, best_f};
}

/// Multi-aspect search. `mask`, when given, restricts which entries of the
/// change vector may move (1 = free, 0 = pinned at zero). Reports the
/// lowest-objective iterate that flips the ranking, or the lowest-objective
/// iterate overall when none does.
template <ItemScorer Scorer>
CounterfactualResult explain_multi(const Scorer& scorer, VectorRef item, double boundary,
                                   const CfHyper& hyper, const Vector* mask = nullptr) {
  hyper.validate();
  const Eigen::Index r = item.size();
  if (mask != nullptr && mask->size() != r) throw InputError("mask length mismatch");
  CounterfactualResult out;
  out.delta = Vector::Zero(r);
  out.original_score = scorer.score(item);
  Vector free = Vector::Ones(r);
  if (mask != nullptr) free = *mask;
  if (hyper.reviewed_only) free = free.cwiseProduct((item.array() != 0.0).cast<double>().matrix());
  if ((free.array() == 0.0).all()) {
    out.counterfactual_score = out.original_score;
    out.objective = hyper.lambda * detail::hinge(hyper.alpha, out.original_score, boundary);
    return out;
  }

  const double eta = hyper.step;
  Vector best = Vector::Zero(r);
  double best_objective = std::numeric_limits<double>::infinity();
  Vector grad(r), point(r), next(r);

  Vector best_flip = Vector::Zero(r);
  double best_flip_objective = std::numeric_limits<double>::infinity();

  auto evaluate = [&](const Vector& d, Vector* gradient) {
    point = item + d;
    const double s = gradient ? scorer.score_with_gradient(point, *gradient) : scorer.score(point);
    const double h = detail::hinge(hyper.alpha, s, boundary);
    const double objective = d.squaredNorm() + hyper.gamma * d.lpNorm<1>() + hyper.lambda * h;
    if (!std::isfinite(objective)) {
      throw NumericError("non-finite counterfactual objective");
    }
    if (objective < best_objective) {
      best_objective = objective;
      best = d;
    }
    if (s <= boundary && objective < best_flip_objective && active_count(d, hyper.tau) > 0) {
      best_flip_objective = objective;
      best_flip = d;
    }
    return h;
  };

  auto descend = [&](Vector delta, std::size_t cap, double ramp_iterations) {
    std::size_t iter = 0;
    bool evaluated_last = false;
    for (; iter < cap; ++iter) {
      const double h = evaluate(delta, &grad);
      Vector step_grad = 2.0 * delta;
      if (h > 0.0) step_grad += hyper.lambda * grad;
      const bool ramping = static_cast<double>(iter) < ramp_iterations;
      const double gamma =
          ramping ? hyper.gamma * static_cast<double>(iter) / ramp_iterations : hyper.gamma;
      // gradient step, then the prox of gamma|.|_1 restricted to D <= 0
      next = (delta - eta * step_grad).array() + eta * gamma;
      next = next.cwiseMin(0.0);
      next = next.cwiseProduct(free);
      const double change = (next - delta).cwiseAbs().maxCoeff();
      delta = next;
      if (change < hyper.tolerance && !ramping) {
        evaluate(delta, nullptr);
        evaluated_last = true;
        ++iter;
        break;
      }
    }
    if (!evaluated_last) evaluate(delta, nullptr);
    return iter;
  };

  out.iterations =
      descend(Vector::Zero(r), hyper.max_iterations, hyper.gamma_ramp * static_cast<double>(hyper.max_iterations));
  if (hyper.restarts) {
    const std::size_t restart_cap = std::max<std::size_t>(1, hyper.max_iterations / 4);
    for (Eigen::Index k = 0; k < r; ++k) {
      if (free[k] == 0.0) continue;
      const double d = minimize_single_aspect(scorer, item, k, boundary, hyper, hyper.gamma).first;
      if (d == 0.0) continue;
      Vector start = Vector::Zero(r);
      start[k] = d;
      out.iterations += descend(start, restart_cap, 0.0);
    }
  }

  const bool flipped = std::isfinite(best_flip_objective);
  out.delta = flipped ? best_flip : best;
  out.objective = flipped ? best_flip_objective : best_objective;
  detail::finalize(scorer, item, boundary, hyper.tau, out);
  if (flipped && !out.valid) {
    // thresholding undid the flip; fall back to the overall best iterate
    out.delta = best;
    out.objective = best_objective;
    detail::finalize(scorer, item, boundary, hyper.tau, out);
  }
  return out;
}

/// Single-aspect search by enumeration over aspects with a nonzero quality
/// entry (and an open mask entry). Among aspects whose optimum flips the
/// ranking, the one with the smallest squared change wins; ties go to the
/// lower index. When none flips, the lowest-objective attempt is reported
/// as invalid.
template <ItemScorer Scorer>
CounterfactualResult explain_single(const Scorer& scorer, VectorRef item, double boundary,
                                    const CfHyper& hyper, const Vector* mask = nullptr) {
  hyper.validate();
  const Eigen::Index r = item.size();
  if (mask != nullptr && mask->size() != r) throw InputError("mask length mismatch");
  CounterfactualResult out;
  out.delta = Vector::Zero(r);
  out.original_score = scorer.score(item);
  out.counterfactual_score = out.original_score;
  out.objective = hyper.lambda * detail::hinge(hyper.alpha, out.original_score, boundary);

  std::optional<CounterfactualResult> best_valid;
  std::optional<CounterfactualResult> best_any;
  for (Eigen::Index k = 0; k < r; ++k) {
    if (hyper.reviewed_only && item[k] == 0.0) continue;
    if (mask != nullptr && (*mask)[k] == 0.0) continue;
    auto [d, f] = minimize_single_aspect(scorer, item, k, boundary, hyper);
    CounterfactualResult candidate;
    candidate.delta = Vector::Zero(r);
    candidate.delta[k] = d;
    candidate.original_score = out.original_score;
    candidate.objective = f;
    ++out.iterations;
    detail::finalize(scorer, item, boundary, hyper.tau, candidate);
    if (candidate.valid &&
        (!best_valid || d * d < best_valid->delta.squaredNorm())) {
      best_valid = candidate;
    }
    if (!best_any || f < best_any->objective) best_any = candidate;
  }
  const std::size_t tried = out.iterations;
  if (best_valid) {
    out = *best_valid;
  } else if (best_any) {
    out = *best_any;
    out.valid = false;
  }
  out.iterations = tried;
  return out;
}

struct Explanation {
  std::size_t user = 0;
  std::size_t item = 0;
  std::size_t rank = 0;  // 1-based position in the top-K list
  Variant variant = Variant::kMulti;
  std::vector<std::size_t> aspects;
  Vector delta;
  double complexity = 0.0;
  double strength = 0.0;
  double epsilon = 0.0;
  bool degenerate = false;
  bool valid = false;
  double original_score = 0.0;
  double counterfactual_score = 0.0;
  double boundary_score = 0.0;
};

/// Aspects the user has mentioned in training (nonzero preference entries).
inline Vector preference_mask(const AspectMatrices& matrices, std::size_t user) {
  return (matrices.x.row(static_cast<Eigen::Index>(user)).array() != 0.0)
      .cast<double>()
      .transpose();
}

template <UserScorerFactory Model>
Explanation explain(const Model& model, const AspectMatrices& matrices,
                    const RankedList& list, std::size_t item, Variant variant,
                    const CfHyper& hyper) {
  const Margin m = margin(list, item);
  const auto user_row = static_cast<Eigen::Index>(list.user);
  const auto scorer = model.bind(matrices.x.row(user_row).transpose());
  const Vector item_vec = matrices.y.row(static_cast<Eigen::Index>(item)).transpose();
  Vector mask;
  if (is_masked(variant)) mask = preference_mask(matrices, list.user);
  const Vector* mask_ptr = is_masked(variant) ? &mask : nullptr;

  const CounterfactualResult result =
      is_single(variant) ? explain_single(scorer, item_vec, list.boundary.score, hyper, mask_ptr)
                         : explain_multi(scorer, item_vec, list.boundary.score, hyper, mask_ptr);

  Explanation e;
  e.user = list.user;
  e.item = item;
  e.rank = list.rank_of(item);
  e.variant = variant;
  e.aspects = result.aspects;
  e.delta = result.delta;
  e.complexity = complexity(result.delta, hyper.gamma, hyper.tau);
  e.strength = result.original_score - result.counterfactual_score;
  e.epsilon = m.epsilon;
  e.degenerate = m.degenerate;
  e.valid = result.valid;
  e.original_score = result.original_score;
  e.counterfactual_score = result.counterfactual_score;
  e.boundary_score = list.boundary.score;
  return e;
}

/// Explains every item of every list; output ordered by list, then rank.
template <UserScorerFactory Model>
std::vector<Explanation> explain_all(const Model& model, const AspectMatrices& matrices,
                                     const std::vector<RankedList>& lists, Variant variant,
                                     const CfHyper& hyper, std::size_t threads = 1) {
  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t l = 0; l < lists.size(); ++l) {
    for (std::size_t p = 0; p < lists[l].top.size(); ++p) tasks.emplace_back(l, p);
  }
  std::vector<Explanation> out(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t t) {
    const auto& list = lists[tasks[t].first];
    out[t] = explain(model, matrices, list, list.top[tasks[t].second].item, variant, hyper);
  });
  return out;
}

}  // namespace counter
