#include <gtest/gtest.h>

#include <random>

#include "counter/metrics.hpp"
#include "counter/synth.hpp"
#include "rerank_oracle.hpp"

using namespace counter;

namespace {

Explanation made(std::size_t user, std::size_t item, std::vector<std::size_t> aspects,
                 bool valid = true, std::size_t rank = 1) {
  Explanation e;
  e.user = user;
  e.item = item;
  e.rank = rank;
  e.aspects = std::move(aspects);
  e.valid = valid;
  return e;
}

struct Instance {
  AspectMatrices matrices;
  RecommenderModel model;
  std::vector<RankedList> lists;
};

Instance small_instance() {
  SynthSpec spec;
  spec.users = 20;
  spec.items = 50;
  spec.aspects = 8;
  spec.density = 0.2;
  spec.seed = 12;
  const auto g = generate(spec);
  Instance in{build_matrices(g.corpus, split(g.corpus)), RecommenderModel{}, {}};
  TrainingHyper hyper;
  hyper.epochs = 20;
  in.model = train(in.matrices, hyper).model;
  for (std::size_t u = 0; u < spec.users; ++u) {
    in.lists.push_back(recommend_top_k(u, 5, in.model, in.matrices));
  }
  return in;
}

}  // namespace

TEST(UserOriented, PrecisionRecallExamples) {
  const std::vector<std::size_t> a{1, 2}, p{2, 3};
  const auto half = pair_precision_recall(a, p);
  EXPECT_DOUBLE_EQ(half.precision, 0.5);
  EXPECT_DOUBLE_EQ(half.recall, 0.5);
  EXPECT_DOUBLE_EQ(half.f1, 0.5);
  const auto same = pair_precision_recall(p, p);
  EXPECT_EQ(same.precision, 1.0);
  EXPECT_EQ(same.recall, 1.0);
  EXPECT_EQ(same.f1, 1.0);
  const std::vector<std::size_t> other{0, 4};
  const auto none = pair_precision_recall(other, p);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.f1, 0.0);
}

TEST(UserOriented, OnlyValidPairsWithTruthCount) {
  std::map<PairKey, std::vector<std::size_t>> truth{
      {{0, 1}, {2, 3}}, {{0, 2}, {}}, {{1, 1}, {0}}};
  std::vector<Explanation> batch{made(0, 1, {1, 2}), made(0, 2, {3}), made(1, 1, {0}, false),
                                 made(2, 9, {0})};
  auto score = user_oriented(batch, truth);
  EXPECT_EQ(score.pairs, 1u);
  EXPECT_DOUBLE_EQ(score.mean.f1, 0.5);
  batch[2].valid = true;
  score = user_oriented(batch, truth);
  EXPECT_EQ(score.pairs, 2u);
  EXPECT_DOUBLE_EQ(score.mean.f1, 0.75);
  EXPECT_FALSE(user_oriented({}, truth).applicable());
}

TEST(Fidelity, Rates) {
  std::vector<Explanation> batch{made(0, 0, {1}), made(0, 1, {}, false)};
  EXPECT_EQ(fidelity(batch), 0.5);
  batch[1].valid = true;
  EXPECT_EQ(fidelity(batch), 1.0);
  EXPECT_THROW(fidelity(std::span<const Explanation>{}), InputError);
}

TEST(Fns, HarmonicMean) {
  EXPECT_DOUBLE_EQ(fns(0.5, 1.0), 2.0 / 3.0);
  EXPECT_EQ(fns(1.0, 1.0), 1.0);
  EXPECT_EQ(fns(0.0, 1.0), 0.0);
  EXPECT_EQ(fns(0.0, 0.0), 0.0);
}

TEST(NecessitySufficiency, MatchesExhaustiveOracle) {
  const auto in = small_instance();
  std::vector<Explanation> batch =
      explain_all(in.model, in.matrices, in.lists, Variant::kMulti, CfHyper{});
  std::mt19937_64 rng(3);
  std::vector<std::size_t> every(8);
  for (std::size_t k = 0; k < 8; ++k) every[k] = k;
  for (const auto& list : in.lists) {
    batch.push_back(made(list.user, list.top[0].item, every));
    batch.push_back(made(list.user, list.top[4].item, random_aspects(2, 8, rng), true, 5));
    batch.push_back(made(list.user, list.top[2].item, {}, false, 3));
  }
  const auto got = necessity_sufficiency(in.model, in.matrices, batch, 5);
  std::size_t counted = 0, pn = 0, ps = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto f = rerank_oracle::flags(in.model, in.matrices, batch[i], 5);
    ASSERT_EQ(got.pn_flags[i].has_value(), f.counted) << i;
    if (!f.counted) continue;
    ++counted;
    EXPECT_EQ(*got.pn_flags[i], f.pn) << i;
    EXPECT_EQ(*got.ps_flags[i], f.ps) << i;
    pn += f.pn;
    ps += f.ps;
  }
  EXPECT_EQ(got.pairs, counted);
  EXPECT_EQ(got.pn, double(pn) / double(counted));
  EXPECT_EQ(got.ps, double(ps) / double(counted));
  EXPECT_LE(got.fns, std::max(got.pn, got.ps));
}

TEST(NecessitySufficiency, ConstantModel) {
  auto in = small_instance();
  const RecommenderModel zero(8);
  std::vector<RankedList> lists;
  for (std::size_t u = 0; u < 20; ++u) lists.push_back(recommend_top_k(u, 5, zero, in.matrices));
  std::vector<Explanation> batch;
  for (const auto& list : lists) batch.push_back(made(list.user, list.top[1].item, {0, 3}));
  const auto got = necessity_sufficiency(zero, in.matrices, batch, 5);
  EXPECT_EQ(got.pairs, 20u);
  EXPECT_EQ(got.pn, 0.0);
  EXPECT_EQ(got.ps, 1.0);
}

TEST(RandomBaseline, DeterministicAndSized) {
  std::vector<Explanation> ref{made(0, 1, {1, 4, 5}), made(2, 3, {0}), made(1, 1, {}, false)};
  const auto a = random_baseline(ref, 8, false, 42);
  const auto b = random_baseline(ref, 8, false, 42);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].aspects, b[i].aspects);
  EXPECT_EQ(a[0].aspects.size(), 3u);
  EXPECT_EQ(a[1].aspects.size(), 1u);
  EXPECT_FALSE(a[2].valid);
  const auto single = random_baseline(ref, 8, true, 42);
  EXPECT_EQ(single[0].aspects.size(), 1u);
  std::mt19937_64 rng(1);
  EXPECT_EQ(random_aspects(1, 1, rng), std::vector<std::size_t>{0});
  EXPECT_THROW(random_aspects(4, 3, rng), InputError);
  EXPECT_THROW(random_baseline(ref, 2, false, 42), InputError);
}

TEST(RandomBaseline, Uniform) {
  std::mt19937_64 rng(9);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 20000; ++i) {
    for (auto k : random_aspects(2, 5, rng)) ++hits[k];
  }
  for (int h : hits) EXPECT_NEAR(h / 40000.0, 0.2, 0.01);
}

TEST(PositionProfile, MatchesAggregationOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(0.0, 3.0);
  std::vector<Explanation> batch;
  for (int i = 0; i < 200; ++i) {
    auto e = made(0, i, {}, unit(rng) > 0.6, 1 + i % 5);
    e.aspects.assign(1 + i % 3, 0);
    e.complexity = unit(rng);
    e.strength = unit(rng);
    batch.push_back(e);
  }
  const auto profile = position_profile(batch, 5);
  ASSERT_EQ(profile.size(), 5u);
  for (const auto& p : profile) {
    double c = 0, s = 0, a = 0;
    std::size_t n = 0;
    for (const auto& e : batch) {
      if (!e.valid || e.rank != p.rank) continue;
      c += e.complexity;
      s += e.strength;
      a += e.aspects.size();
      ++n;
    }
    EXPECT_EQ(p.count, n);
    EXPECT_NEAR(p.mean_complexity, c / n, 1e-12);
    EXPECT_NEAR(p.mean_strength, s / n, 1e-12);
    EXPECT_NEAR(p.mean_aspects, a / n, 1e-12);
  }
}

TEST(PositionProfile, SingleRankOnly) {
  std::vector<Explanation> batch{made(0, 0, {1}, true, 3)};
  const auto profile = position_profile(batch, 5);
  ASSERT_EQ(profile.size(), 1u);
  EXPECT_EQ(profile[0].rank, 3u);
}

TEST(GroundTruth, PositiveMeanSentiment) {
  InteractionRecord rec;
  rec.mentions = {{2, 1.0}, {2, -0.5}, {0, -1.0}, {4, 0.0}, {1, 0.2}};
  EXPECT_EQ(positive_aspects(rec), (std::vector<std::size_t>{1, 2}));
}
