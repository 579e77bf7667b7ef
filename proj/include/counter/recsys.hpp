#pragma once

// Black-box ranking model: concatenated user/item aspect vectors fed through
// dense layers 2r -> 512 -> 256 -> 1 with rectifiers and a logistic output.
// Trained with binary cross-entropy on observed pairs plus sampled negatives.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "counter/corpus.hpp"
#include "counter/error.hpp"

namespace counter {

using Vector = Eigen::VectorXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;

/// Something that scores candidate item vectors for one fixed user.
template <typename S>
concept ItemScorer = requires(const S& s, const Vector& item, Vector& grad) {
  { s.score(item) } -> std::convertible_to<double>;
  { s.score_with_gradient(item, grad) } -> std::convertible_to<double>;
};

/// Something that produces an ItemScorer for a given user vector.
template <typename M>
concept UserScorerFactory = requires(const M& m, const Vector& user) {
  { m.bind(user) } -> ItemScorer;
};

namespace detail {

inline double logistic(double z) {
  double s = 1.0 / (1.0 + std::exp(-z));
  // the logistic range is open; saturation in double would reach 0 or 1
  constexpr double kLow = 0x1p-1074;
  const double high = std::nextafter(1.0, 0.0);
  return std::clamp(s, kLow, high);
}

/// Stable -[y log s + (1-y) log(1-s)] in terms of the logit.
inline double logit_cross_entropy(double z, double label) {
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z))
                                : std::log1p(std::exp(z));
  return softplus - label * z;
}

}  // namespace detail

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Vector bias;

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight.rows() == b.weight.rows() &&
           a.weight.cols() == b.weight.cols() && a.bias.size() == b.bias.size() &&
           (a.weight.array() == b.weight.array()).all() &&
           (a.bias.array() == b.bias.array()).all();
  }
};

enum class Reduction { kSum, kMean };

struct TrainingHyper {
  double learning_rate = 0.01;
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  std::size_t negatives = 2;
  std::uint64_t seed = 42;
  /// How per-sample gradients within a batch are combined.
  Reduction reduction = Reduction::kMean;
};

class RecommenderModel;

/// Scores items for one user; the user's half of the first layer is folded
/// into a cached bias so repeated item evaluations skip it.
class BoundUser {
 public:
  BoundUser(const RecommenderModel& model, VectorRef user);

  double score(VectorRef item) const {
    Vector z1, z2;
    return forward(item, z1, z2);
  }

  /// Score plus the exact gradient with respect to the item vector. The
  /// rectifier derivative at 0 is taken as 0.
  double score_with_gradient(VectorRef item, Vector& grad) const;

 private:
  double forward(VectorRef item, Vector& z1, Vector& z2) const;

  const RecommenderModel* model_;
  Vector first_bias_;
};

class RecommenderModel {
 public:
  static constexpr std::size_t kHidden1 = 512;
  static constexpr std::size_t kHidden2 = 256;

  RecommenderModel() = default;

  /// All-zero parameters.
  explicit RecommenderModel(std::size_t aspects, std::size_t hidden1 = kHidden1,
                            std::size_t hidden2 = kHidden2)
      : aspects_(aspects) {
    layers_[0] = {Eigen::MatrixXd::Zero(hidden1, 2 * aspects), Vector::Zero(hidden1)};
    layers_[1] = {Eigen::MatrixXd::Zero(hidden2, hidden1), Vector::Zero(hidden2)};
    layers_[2] = {Eigen::MatrixXd::Zero(1, hidden2), Vector::Zero(1)};
  }

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static RecommenderModel initialized(std::size_t aspects, std::uint64_t seed,
                                      std::size_t hidden1 = kHidden1,
                                      std::size_t hidden2 = kHidden2) {
    RecommenderModel model(aspects, hidden1, hidden2);
    std::mt19937_64 rng(seed);
    for (auto& layer : model.layers_) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
          layer.weight(r, c) = dist(rng);
        }
      }
    }
    return model;
  }

  std::size_t aspects() const { return aspects_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  DenseLayer& layer(std::size_t i) { return layers_.at(i); }

  BoundUser bind(VectorRef user) const { return BoundUser(*this, user); }

  double score(VectorRef user, VectorRef item) const {
    return bind(user).score(item);
  }
  Vector item_gradient(VectorRef user, VectorRef item) const {
    Vector grad;
    bind(user).score_with_gradient(item, grad);
    return grad;
  }

  bool finite() const {
    for (const auto& l : layers_) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }

  friend bool operator==(const RecommenderModel& a, const RecommenderModel& b) {
    return a.aspects_ == b.aspects_ && a.layers_ == b.layers_;
  }

 private:
  std::size_t aspects_ = 0;
  std::array<DenseLayer, 3> layers_;
};

inline BoundUser::BoundUser(const RecommenderModel& model, VectorRef user)
    : model_(&model) {
  const auto r = static_cast<Eigen::Index>(model.aspects());
  if (user.size() != r) {
    throw InputError("user vector has " + std::to_string(user.size()) +
                     " entries, model expects " + std::to_string(r));
  }
  const auto& l1 = model.layer(0);
  first_bias_ = l1.bias + l1.weight.leftCols(r) * user;
}

inline double BoundUser::forward(VectorRef item, Vector& z1, Vector& z2) const {
  const auto r = static_cast<Eigen::Index>(model_->aspects());
  if (item.size() != r) {
    throw InputError("item vector has " + std::to_string(item.size()) +
                     " entries, model expects " + std::to_string(r));
  }
  const auto& l1 = model_->layer(0);
  const auto& l2 = model_->layer(1);
  const auto& l3 = model_->layer(2);
  z1 = first_bias_ + l1.weight.rightCols(r) * item;
  // inactive rectifiers contribute nothing; skip their columns
  z2 = l2.bias;
  for (Eigen::Index i = 0; i < z1.size(); ++i) {
    if (z1[i] > 0.0) z2.noalias() += z1[i] * l2.weight.col(i);
  }
  double z3 = l3.bias[0];
  for (Eigen::Index i = 0; i < z2.size(); ++i) {
    if (z2[i] > 0.0) z3 += l3.weight(0, i) * z2[i];
  }
  return detail::logistic(z3);
}

inline double BoundUser::score_with_gradient(VectorRef item, Vector& grad) const {
  Vector z1, z2;
  const double s = forward(item, z1, z2);
  const auto r = static_cast<Eigen::Index>(model_->aspects());
  const auto& l1 = model_->layer(0);
  const auto& l2 = model_->layer(1);
  const auto& l3 = model_->layer(2);
  const double ds = s * (1.0 - s);
  Vector dz2(z2.size());
  for (Eigen::Index i = 0; i < z2.size(); ++i) {
    dz2[i] = z2[i] > 0.0 ? ds * l3.weight(0, i) : 0.0;
  }
  Vector dz1 = Vector::Zero(z1.size());
  for (Eigen::Index i = 0; i < z1.size(); ++i) {
    if (z1[i] > 0.0) dz1[i] = l2.weight.col(i).dot(dz2);
  }
  grad = l1.weight.rightCols(r).transpose() * dz1;
  return s;
}

struct TrainingResult {
  RecommenderModel model;
  std::vector<double> epoch_loss;  // mean per-sample cross-entropy
};

/// Mini-batch SGD on the batch cross-entropy, averaged or summed per
/// `reduction`. Every epoch pairs each observed (user, item) with `negatives`
/// items drawn uniformly from the user's unobserved items.
inline TrainingResult train(const AspectMatrices& matrices,
                            const TrainingHyper& hyper,
                            std::size_t hidden1 = RecommenderModel::kHidden1,
                            std::size_t hidden2 = RecommenderModel::kHidden2) {
  const std::size_t r = matrices.aspects();
  const auto& b = matrices.b;
  if (b.nonzeros() == 0) throw InputError("no positive interactions to train on");
  if (hyper.batch_size == 0) throw ConfigError("batch size must be positive");

  TrainingResult result{RecommenderModel::initialized(r, hyper.seed, hidden1, hidden2), {}};
  RecommenderModel& model = result.model;
  std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);

  struct Sample {
    std::size_t user;
    std::size_t item;
    double label;
  };
  std::vector<Sample> positives;
  for (std::size_t u = 0; u < b.users(); ++u) {
    for (auto j : b.row(u)) positives.push_back({u, j, 1.0});
  }

  const auto r_idx = static_cast<Eigen::Index>(r);
  std::vector<Sample> samples;
  Eigen::MatrixXd input, z1, h1, z2, h2, dz1, dz2;
  Eigen::RowVectorXd z3, dz3;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    samples = positives;
    std::uniform_int_distribution<std::size_t> pick(0, b.items() - 1);
    for (const auto& pos : positives) {
      if (b.row(pos.user).size() >= b.items()) continue;
      for (std::size_t n = 0; n < hyper.negatives; ++n) {
        std::size_t j = pick(rng);
        while (b(pos.user, j)) j = pick(rng);
        samples.push_back({pos.user, j, 0.0});
      }
    }
    std::shuffle(samples.begin(), samples.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(samples.size(), start + hyper.batch_size);
      const auto batch = static_cast<Eigen::Index>(end - start);
      input.resize(2 * r_idx, batch);
      Eigen::RowVectorXd labels(batch);
      for (Eigen::Index c = 0; c < batch; ++c) {
        const auto& s = samples[start + static_cast<std::size_t>(c)];
        input.col(c).head(r_idx) = matrices.x.row(static_cast<Eigen::Index>(s.user)).transpose();
        input.col(c).tail(r_idx) = matrices.y.row(static_cast<Eigen::Index>(s.item)).transpose();
        labels[c] = s.label;
      }
      auto& l1 = model.layer(0);
      auto& l2 = model.layer(1);
      auto& l3 = model.layer(2);
      z1.noalias() = l1.weight * input;
      z1.colwise() += l1.bias;
      h1 = z1.cwiseMax(0.0);
      z2.noalias() = l2.weight * h1;
      z2.colwise() += l2.bias;
      h2 = z2.cwiseMax(0.0);
      z3.noalias() = l3.weight * h2;
      z3.array() += l3.bias[0];

      dz3.resize(batch);
      for (Eigen::Index c = 0; c < batch; ++c) {
        loss_sum += detail::logit_cross_entropy(z3[c], labels[c]);
        dz3[c] = 1.0 / (1.0 + std::exp(-z3[c])) - labels[c];
      }
      dz2.noalias() = l3.weight.transpose() * dz3;
      dz2.array() *= (z2.array() > 0.0).cast<double>();
      dz1.noalias() = l2.weight.transpose() * dz2;
      dz1.array() *= (z1.array() > 0.0).cast<double>();

      const double lr = hyper.reduction == Reduction::kMean
                            ? hyper.learning_rate / static_cast<double>(batch)
                            : hyper.learning_rate;
      l3.weight.noalias() -= lr * dz3 * h2.transpose();
      l3.bias[0] -= lr * dz3.sum();
      l2.weight.noalias() -= lr * dz2 * h1.transpose();
      l2.bias.noalias() -= lr * dz2.rowwise().sum();
      l1.weight.noalias() -= lr * dz1 * input.transpose();
      l1.bias.noalias() -= lr * dz1.rowwise().sum();
    }
    const double mean_loss = loss_sum / static_cast<double>(samples.size());
    if (!std::isfinite(mean_loss) || !model.finite()) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch));
    }
    result.epoch_loss.push_back(mean_loss);
  }
  return result;
}

struct ScoredItem {
  std::size_t item = 0;
  double score = 0.0;

  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

/// Higher score first, ties by ascending item index.
inline bool ranks_before(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item < b.item;
}

struct RankedList {
  std::size_t user = 0;
  std::size_t k = 0;
  std::vector<ScoredItem> top;  // size k
  ScoredItem boundary;          // the (k+1)-th candidate

  /// 1-based rank of the item, 0 when absent.
  std::size_t rank_of(std::size_t item) const {
    for (std::size_t i = 0; i < top.size(); ++i) {
      if (top[i].item == item) return i + 1;
    }
    return 0;
  }
  bool contains(std::size_t item) const { return rank_of(item) != 0; }
};

/// Items the user has not interacted with in training.
inline std::vector<std::size_t> candidate_items(const InteractionMatrix& b,
                                                std::size_t user) {
  std::vector<std::size_t> out;
  auto seen = b.row(user);
  out.reserve(b.items() - seen.size());
  std::size_t next_seen = 0;
  for (std::size_t j = 0; j < b.items(); ++j) {
    if (next_seen < seen.size() && seen[next_seen] == j) {
      ++next_seen;
      continue;
    }
    out.push_back(j);
  }
  return out;
}

/// Selects the first k entries and the boundary entry by ranking order.
inline RankedList select_top_k(std::size_t user, std::vector<ScoredItem> scored,
                               std::size_t k) {
  if (scored.size() < k + 1) {
    throw InputError("user " + std::to_string(user) + " has " +
                     std::to_string(scored.size()) + " candidates, need at least " +
                     std::to_string(k + 1));
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k + 1),
                    scored.end(), ranks_before);
  RankedList list;
  list.user = user;
  list.k = k;
  list.top.assign(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k));
  list.boundary = scored[k];
  return list;
}

/// Ranks `candidates` for one user, reading item vectors through `item_row`.
template <ItemScorer Scorer, typename RowFn>
RankedList rank_candidates(const Scorer& scorer, std::size_t user,
                           std::span<const std::size_t> candidates, RowFn&& item_row,
                           std::size_t k) {
  std::vector<ScoredItem> scored;
  scored.reserve(candidates.size());
  for (auto j : candidates) scored.push_back({j, scorer.score(item_row(j))});
  return select_top_k(user, std::move(scored), k);
}

template <UserScorerFactory Model>
RankedList recommend_top_k(std::size_t user, std::size_t k, const Model& model,
                           const AspectMatrices& matrices) {
  const auto candidates = candidate_items(matrices.b, user);
  const auto scorer = model.bind(matrices.x.row(static_cast<Eigen::Index>(user)).transpose());
  return rank_candidates(scorer, user, candidates,
                         [&](std::size_t j) -> Vector {
                           return matrices.y.row(static_cast<Eigen::Index>(j)).transpose();
                         },
                         k);
}

// ---------------------------------------------------------------------------
// Checkpoint: a text container with hexadecimal float payload.
//
//   COUNTER-MODEL 1
//   aspects <r>
//   dims <2r> <h1> <h2> 1
//   meta <key> <value>          (zero or more)
//   layer <index> <rows> <cols>
//   <rows*cols weights, column-major, %a>
//   <rows biases, %a>
//   end

inline constexpr const char* kCheckpointMagic = "COUNTER-MODEL";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(std::ostream& out, const RecommenderModel& model,
                            const std::map<std::string, std::string>& meta = {}) {
  char buf[64];
  auto hex = [&](double v) {
    std::snprintf(buf, sizeof buf, "%a", v);
    return std::string(buf);
  };
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "aspects " << model.aspects() << '\n';
  out << "dims " << 2 * model.aspects() << ' ' << model.layer(0).weight.rows() << ' '
      << model.layer(1).weight.rows() << ' ' << model.layer(2).weight.rows() << '\n';
  for (const auto& [key, value] : meta) out << "meta " << key << ' ' << value << '\n';
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& layer = model.layer(l);
    out << "layer " << l << ' ' << layer.weight.rows() << ' ' << layer.weight.cols() << '\n';
    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        out << hex(layer.weight(r, c)) << (r + 1 == layer.weight.rows() ? '\n' : ' ');
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      out << hex(layer.bias[r]) << (r + 1 == layer.bias.size() ? '\n' : ' ');
    }
  }
  out << "end\n";
}

struct Checkpoint {
  RecommenderModel model;
  std::map<std::string, std::string> meta;
};

inline Checkpoint load_checkpoint(std::istream& in) {
  auto fail = [](const std::string& what) { return InputError("checkpoint: " + what); };
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic) throw fail("bad magic");
  if (version != kCheckpointVersion) {
    throw fail("unsupported version " + std::to_string(version));
  }
  std::string tag;
  std::size_t aspects = 0;
  if (!(in >> tag >> aspects) || tag != "aspects") throw fail("missing aspects");
  std::size_t d_in = 0, h1 = 0, h2 = 0, d_out = 0;
  if (!(in >> tag >> d_in >> h1 >> h2 >> d_out) || tag != "dims" || d_in != 2 * aspects ||
      d_out != 1) {
    throw fail("inconsistent dims");
  }
  Checkpoint ck{RecommenderModel(aspects, h1, h2), {}};
  auto read_double = [&]() {
    std::string token;
    if (!(in >> token)) throw fail("truncated payload");
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end != token.c_str() + token.size() || !std::isfinite(v)) {
      throw fail("bad number '" + token + "'");
    }
    return v;
  };
  std::size_t next_layer = 0;
  while (in >> tag) {
    if (tag == "meta") {
      std::string key, value;
      in >> key;
      std::getline(in, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ck.meta[key] = value;
    } else if (tag == "layer") {
      std::size_t index = 0;
      Eigen::Index rows = 0, cols = 0;
      in >> index >> rows >> cols;
      if (index != next_layer || index > 2) throw fail("unexpected layer index");
      auto& layer = ck.model.layer(index);
      if (rows != layer.weight.rows() || cols != layer.weight.cols()) {
        throw fail("layer shape mismatch");
      }
      for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) layer.weight(r, c) = read_double();
      }
      for (Eigen::Index r = 0; r < rows; ++r) layer.bias[r] = read_double();
      ++next_layer;
    } else if (tag == "end") {
      if (next_layer != 3) throw fail("missing layers");
      return ck;
    } else {
      throw fail("unknown section '" + tag + "'");
    }
  }
  throw fail("missing end marker");
}

inline void save_checkpoint_file(const std::string& path, const RecommenderModel& model,
                                 const std::map<std::string, std::string>& meta = {}) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint: " + path);
  save_checkpoint(out, model, meta);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("missing checkpoint: " + path);
  return load_checkpoint(in);
}

}  // namespace counter
