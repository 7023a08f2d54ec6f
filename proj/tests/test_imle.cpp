#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "chimle/imle.hpp"
#include "chimle/parallel.hpp"
#include "gradcheck.hpp"

using namespace chimle;
using namespace chimle::testing;

namespace {

TimConfig small_config(int levels) {
  TimConfig c;
  c.levels = levels;
  c.base_resolution = 2;
  c.channels_per_level.assign(static_cast<std::size_t>(levels), 4);
  c.rrdb_per_level = 1;
  c.dense_layers_per_block = 2;
  c.growth_channels = 3;
  c.mapping_depth = 2;
  c.mapping_hidden = 5;
  c.local_latent_channels = 2;
  c.global_latent_dim = 3;
  c.out_channels = 2;
  return c;
}

ImagePyramid random_pyramid(const TimConfig& c, int channels, Rng& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  ImagePyramid p;
  for (int l = 1; l <= c.levels; ++l) {
    const auto r = static_cast<std::size_t>(c.resolution(l));
    Tensor t({static_cast<std::size_t>(channels), r, r});
    for (float& v : t.data) v = u(rng);
    p.levels.push_back(t);
  }
  return p;
}

TrainPair random_pair(const TimConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  TrainPair p;
  p.x = random_pyramid(c, c.in_channels, rng);
  p.y = random_pyramid(c, c.out_channels, rng);
  return p;
}

// The observed pyramid a model produces for a given code.
TrainPair realizable_pair(const TimModel& m, const LatentCode& z, std::uint64_t seed) {
  TrainPair p = random_pair(m.config(), seed);
  const auto outs = forward_full(m, p.x, z);
  for (std::size_t l = 0; l < outs.size(); ++l) p.y.levels[l] = outs[l];
  return p;
}

LatentCode prefix(const LatentCode& z, int level) {
  LatentCode out;
  out.components.assign(z.components.begin(), z.components.begin() + level);
  out.realized_up_to = level;
  return out;
}

// Level-wise exhaustive greedy search written directly against forward_partial.
LatentCode greedy_oracle(const TimModel& m, const TrainPair& pair, int M, std::uint64_t seed) {
  const TimConfig& c = m.config();
  const Metric metric;
  LatentCode z;
  for (int l = 1; l <= c.levels; ++l) {
    double best = std::numeric_limits<double>::infinity();
    LatentComponent chosen;
    for (int j = 0; j < M; ++j) {
      LatentCode trial = z;
      trial.components.push_back(candidate_component(c, seed, j, l));
      trial.realized_up_to = l;
      const double d = metric.distance(forward_partial(m, pair.x, trial, l), pair.y.level(l));
      if (d < best) {
        best = d;
        chosen = trial.components.back();
      }
    }
    z.components.push_back(chosen);
    z.realized_up_to = l;
  }
  return z;
}

std::map<std::string, std::vector<float>> gradients(TimModel& m, const TrainPair& p, const LatentCode& z) {
  m.zero_grad();
  accumulate_gradient(m, p, z, Metric{});
  std::map<std::string, std::vector<float>> g;
  for (const auto& [name, t] : m.parameters()) g[name] = t.grad;
  m.zero_grad();
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pools and selection

TEST(Pool, SizeOneAndValidation) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 2);
  EXPECT_EQ(sample_pool(m, p, 1, 7, Metric{}).size(), 1u);
  EXPECT_THROW(sample_pool(m, p, 0, 7, Metric{}), ContractError);
}

TEST(Pool, RepeatableAndDistancesRecomputable) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 2);
  const auto a = sample_pool(m, p, 5, 11, Metric{});
  const auto b = sample_pool(m, p, 5, 11, Metric{});
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_TRUE(a[j].latent == b[j].latent);
    EXPECT_EQ(a[j].distance, b[j].distance);
    const Tensor out = forward_full(m, p.x, a[j].latent).back();
    EXPECT_NEAR(a[j].distance, Metric{}.distance(out, p.y.level(2)), 1e-6);
    EXPECT_EQ(a[j].level, 2);
  }
}

TEST(Pool, LatentsLookStandardNormal) {
  const TimConfig c = small_config(4);
  ASSERT_GE(latent_dimension(c), 1000u);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::vector<float> v = candidate_code(c, seed, 0).flatten();
    double mean = 0, sq = 0;
    for (float x : v) mean += x;
    mean /= double(v.size());
    for (float x : v) sq += (x - mean) * (x - mean);
    const double sd = std::sqrt(sq / double(v.size() - 1));
    EXPECT_LT(std::abs(mean), 0.1);
    EXPECT_LT(std::abs(sd - 1.0), 0.1);
  }
}

TEST(Pool, CandidatesIndependentOfPoolSize) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 2);
  const auto small = sample_pool(m, p, 2, 3, Metric{});
  const auto big = sample_pool(m, p, 6, 3, Metric{});
  EXPECT_TRUE(small[1].latent == big[1].latent);
}

TEST(Select, Examples) {
  EXPECT_EQ(select_nearest_index({3.0, 1.0, 2.0}), 1u);
  EXPECT_EQ(select_nearest_index({2.0, 2.0, 2.0}), 0u);
  EXPECT_EQ(select_nearest_index({5.0, 1.0, 1.0}), 1u);
  EXPECT_THROW(select_nearest_index({}), ContractError);
  EXPECT_THROW(select_nearest(std::vector<SampleRecord>{}), ContractError);
}

TEST(Select, MatchesExhaustiveArgmin) {
  Rng rng(9);
  std::uniform_int_distribution<int> size(1, 30), val(0, 9);  // coarse values force ties
  for (int t = 0; t < 100; ++t) {
    std::vector<double> d(static_cast<std::size_t>(size(rng)));
    for (double& x : d) x = val(rng);
    std::size_t expect = 0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i] < d[expect]) expect = i;
    ASSERT_EQ(select_nearest_index(d), expect);
    ASSERT_EQ(select_nearest_index(d), static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin()));
  }
}

// ---------------------------------------------------------------------------
// Hierarchical search

TEST(Search, SingleLevelEqualsSelectNearest) {
  const TimConfig c = small_config(1);
  const TimModel m = init_model(c, 4);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const TrainPair p = random_pair(c, 50 + s);
    const SearchResult h = chimle_search(m, p, 6, s, Metric{});
    const auto pool = sample_pool(m, p, 6, s, Metric{});
    const SampleRecord& best = select_nearest(pool);
    EXPECT_TRUE(h.latent == best.latent);
    EXPECT_DOUBLE_EQ(h.final_distance, best.distance);
  }
}

TEST(Search, MatchesGreedyOracle) {
  for (int L : {1, 2, 3}) {
    const TimConfig c = small_config(L);
    const TimModel m = init_model(c, 10 + L);
    for (int M : {1, 3, 8}) {
      for (std::uint64_t s = 0; s < 4; ++s) {
        const TrainPair p = random_pair(c, 100 * L + s);
        const SearchResult r = chimle_search(m, p, M, s, Metric{});
        ASSERT_TRUE(r.latent == greedy_oracle(m, p, M, s)) << "L=" << L << " m=" << M << " seed=" << s;
        ASSERT_EQ(r.latent.realized_up_to, L);
      }
    }
  }
}

TEST(Search, CostAndMonotoneSelection) {
  const TimConfig c = small_config(3);
  const TimModel m = init_model(c, 3);
  const TrainPair p = random_pair(c, 8);
  const SearchResult r = chimle_search(m, p, 5, 1, Metric{});
  EXPECT_EQ(r.evaluations, 15);
  ASSERT_EQ(r.level_distances.size(), 3u);
  for (int l = 1; l <= 3; ++l) {
    const auto& cand = r.candidate_distances[static_cast<std::size_t>(l - 1)];
    for (double d : cand) EXPECT_LE(r.level_distances[static_cast<std::size_t>(l - 1)], d);
    // Recompute the recorded distance from the selected prefix.
    const Tensor out = forward_partial(m, p.x, prefix(r.latent, l), l);
    EXPECT_NEAR(Metric{}.distance(out, p.y.level(l)), r.level_distances[static_cast<std::size_t>(l - 1)], 1e-6);
  }
  EXPECT_DOUBLE_EQ(r.final_distance, r.level_distances.back());
}

TEST(Search, AllAblationsEqualPlainPoolOfMTimesL) {
  const TimConfig c = small_config(3);
  const TimModel m = init_model(c, 3);
  const TrainPair p = random_pair(c, 8);
  const SearchResult a = chimle_search(m, p, 4, 21, Metric{}, AblationFlags{true, true, true});
  const auto pool = sample_pool(m, p, 12, 21, Metric{});
  const SampleRecord& b = select_nearest(pool);
  EXPECT_TRUE(a.latent == b.latent);
  EXPECT_EQ(a.evaluations, 12);
  EXPECT_DOUBLE_EQ(a.final_distance, b.distance);
}

TEST(Search, NoIterativeCombinationUsesReferencePrefix) {
  const TimConfig c = small_config(3);
  const TimModel m = init_model(c, 5);
  const TrainPair p = random_pair(c, 6);
  const std::uint64_t seed = 4;
  const int M = 4;
  const SearchResult r = chimle_search(m, p, M, seed, Metric{}, AblationFlags{true, false, false});
  const LatentCode ref = reference_code(c, seed);
  for (int l = 1; l <= 3; ++l) {
    std::vector<double> d;
    for (int j = 0; j < M; ++j) {
      LatentCode z = prefix(ref, l);
      z.components.back() = candidate_component(c, seed, j, l);
      d.push_back(Metric{}.distance(forward_partial(m, p.x, z, l), p.y.level(l)));
    }
    const std::size_t best = select_nearest_index(d);
    EXPECT_EQ(r.selected[static_cast<std::size_t>(l - 1)], static_cast<int>(best));
    for (int j = 0; j < M; ++j) EXPECT_NEAR(r.candidate_distances[l - 1][j], d[j], 1e-6);
  }
  EXPECT_EQ(r.evaluations, M * 3);
  EXPECT_NEAR(r.final_distance, Metric{}.distance(forward_full(m, p.x, r.latent).back(), p.y.level(3)), 1e-6);
}

TEST(Search, NoPartialEvaluationScoresFinalOutput) {
  const TimConfig c = small_config(3);
  const TimModel m = init_model(c, 5);
  const TrainPair p = random_pair(c, 7);
  const std::uint64_t seed = 9;
  const int M = 3;
  const SearchResult r = chimle_search(m, p, M, seed, Metric{}, AblationFlags{false, true, false});
  const LatentCode ref = reference_code(c, seed);
  LatentCode chosen = ref;
  for (int l = 1; l <= 3; ++l) {
    std::vector<double> d;
    for (int j = 0; j < M; ++j) {
      LatentCode z = chosen;
      z.components[static_cast<std::size_t>(l - 1)] = candidate_component(c, seed, j, l);
      d.push_back(Metric{}.distance(forward_full(m, p.x, z).back(), p.y.level(3)));
    }
    const std::size_t best = select_nearest_index(d);
    chosen.components[static_cast<std::size_t>(l - 1)] = candidate_component(c, seed, static_cast<int>(best), l);
    EXPECT_EQ(r.selected[static_cast<std::size_t>(l - 1)], static_cast<int>(best));
  }
  EXPECT_TRUE(r.latent == chosen);
}

TEST(Search, PyramidMismatchRejected) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  TrainPair p = random_pair(c, 2);
  p.y.levels.pop_back();
  EXPECT_THROW(chimle_search(m, p, 2, 0, Metric{}), ContractError);
  TrainPair q = random_pair(small_config(3), 2);
  EXPECT_THROW(chimle_search(m, q, 2, 0, Metric{}), ContractError);
}

TEST(Search, ParallelEvaluationDoesNotChangeResults) {
  const TimConfig c = small_config(3);
  const TimModel m = init_model(c, 5);
  const TrainPair p = random_pair(c, 7);
  const SearchResult a = chimle_search(m, p, 6, 2, Metric{});
  set_worker_threads(3);
  const SearchResult b = chimle_search(m, p, 6, 2, Metric{});
  const auto pool = sample_pool(m, p, 6, 2, Metric{});
  set_worker_threads(1);
  EXPECT_TRUE(a.latent == b.latent);
  EXPECT_EQ(a.candidate_distances, b.candidate_distances);
  const auto serial = sample_pool(m, p, 6, 2, Metric{});
  for (std::size_t j = 0; j < pool.size(); ++j) EXPECT_EQ(pool[j].distance, serial[j].distance);
}

TEST(Ablation, LabelsRoundTrip) {
  EXPECT_EQ(AblationFlags{}.label(), "full");
  EXPECT_EQ((AblationFlags{true, true, false}.label()), "no_IC+no_PE");
  const AblationFlags f = AblationFlags::parse("no_IC+no_PE+no_CD");
  EXPECT_TRUE(f.no_ic && f.no_pe && f.no_cd);
  EXPECT_THROW(AblationFlags::parse("no_XY"), ContractError);
}

// ---------------------------------------------------------------------------
// Loss

TEST(Loss, ZeroWhenObservedEqualsOutput) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const LatentCode z = candidate_code(c, 3, 0);
  const TrainPair p = realizable_pair(m, z, 4);
  EXPECT_NEAR(imle_loss_value(m, {p}, {z}, Metric{}), 0.0, 1e-12);
}

TEST(Loss, NonNegativeAndAdditive) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const TrainPair a = random_pair(c, s), b = random_pair(c, s + 100);
    const LatentCode za = candidate_code(c, s, 0), zb = candidate_code(c, s, 1);
    const double la = imle_loss_value(m, {a}, {za}, Metric{});
    const double lb = imle_loss_value(m, {b}, {zb}, Metric{});
    EXPECT_GE(la, 0.0);
    EXPECT_NEAR(imle_loss_value(m, {a, b}, {za, zb}, Metric{}), la + lb, 1e-5);
  }
  for (const Metric& metric : {Metric::pixel(), Metric::random_feature()}) {
    const TrainPair a = random_pair(c, 1);
    EXPECT_GE(imle_loss_value(m, {a}, {candidate_code(c, 1, 0)}, metric), 0.0);
  }
}

TEST(Loss, CountMismatchRejected) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 1);
  EXPECT_THROW(imle_loss_value(m, {p, p}, {candidate_code(c, 0, 0)}, Metric{}), ContractError);
}

TEST(Loss, KernelGradientMatchesFiniteDifferences) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 6);
  const TrainPair p = random_pair(c, 3);
  const LatentCode z = candidate_code(c, 2, 0);
  for (const char* name : {"level2.in.v", "level1.rrdb0.db1.conv0.v", "level2.head.v"}) {
    GraphFn f = [&](DTape& t, const std::vector<Var>& v) {
      TimGraph<double> g(m, t);
      g.bind(name, v[0]);
      return pair_loss(g, p, z, Metric{});
    };
    const GradCheck r = check_gradients(f, {m.param(name).cast<double>()}, 1e-6, 24, 5);
    EXPECT_LT(r.max_rel, 1e-3) << name;
  }
}

TEST(Loss, FloatGradientAgreesWithDoubleGraph) {
  const TimConfig c = small_config(2);
  TimModel m = init_model(c, 6);
  const TrainPair p = random_pair(c, 3);
  const LatentCode z = candidate_code(c, 2, 0);
  const auto g = gradients(m, p, z);
  DTape t;
  TimGraph<double> graph(m, t);
  Var leaf = t.variable(m.param("level1.head.v").cast<double>());
  graph.bind("level1.head.v", leaf);
  t.backward(pair_loss(graph, p, z, Metric{}));
  const auto& ref = t.grad(leaf);
  const auto& got = g.at("level1.head.v");
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-4 + 1e-3 * std::abs(ref[i]));
}

TEST(Loss, GradientDependsOnlyOnSelectedSample) {
  const TimConfig c = small_config(2);
  TimModel m = init_model(c, 8);
  const TrainPair p = random_pair(c, 5);
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    std::vector<SampleRecord> pool = sample_pool(m, p, 6, trial, Metric{});
    const std::size_t chosen = select_nearest_index([&] {
      std::vector<double> d;
      for (const auto& r : pool) d.push_back(r.distance);
      return d;
    }());
    const auto g0 = gradients(m, p, select_nearest(pool).latent);
    // Replace every other candidate with a fresh draw that is still farther away.
    for (std::size_t j = 0; j < pool.size(); ++j) {
      if (j == chosen) continue;
      for (int k = 0;; ++k) {
        SampleRecord r;
        r.latent = candidate_code(c, 1000 + trial, static_cast<int>(10 * j) + k);
        r.partial_output = forward_full(m, p.x, r.latent).back();
        r.distance = Metric{}.distance(r.partial_output, p.y.level(2));
        if (r.distance > pool[chosen].distance) {
          pool[j] = r;
          break;
        }
      }
    }
    ASSERT_TRUE(select_nearest(pool).latent == pool[chosen].latent);
    EXPECT_EQ(gradients(m, p, select_nearest(pool).latent), g0);
  }
}

// ---------------------------------------------------------------------------
// Training

TEST(Train, ConfigValidation) {
  TrainConfig t;
  t.batch_size = 2;
  EXPECT_THROW(t.validate(), ContractError);
  t = TrainConfig{};
  t.mode = SearchMode::cimle;
  t.flags.no_ic = true;
  EXPECT_THROW(t.validate(), ContractError);
  t = TrainConfig{};
  t.m = 3;
  t.flags = AblationFlags::parse("no_IC+no_PE");
  EXPECT_EQ(TrainConfig::from_json(t.to_json()).to_json(), t.to_json());
  auto j = t.to_json();
  j["lr"] = 0.1;
  EXPECT_THROW(TrainConfig::from_json(j), ContractError);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  const TimConfig c = small_config(2);
  TimModel m = init_model(c, 1);
  const TimModel before = m;
  TrainConfig t;
  t.epochs = 0;
  const TrainResult r = train(m, {random_pair(c, 1)}, t);
  EXPECT_TRUE(r.loss_trace.empty());
  EXPECT_TRUE(m.same_parameters(before));
}

TEST(Train, SingleExampleLossHalvesIn50Epochs) {
  const TimConfig c = small_config(2);
  for (std::uint64_t seed : {1, 2, 3}) {
    TimModel m = init_model(c, seed);
    TrainConfig t;
    t.epochs = 50;
    t.m = 4;
    t.learning_rate = 3e-3;
    t.seed = seed;
    const TrainResult r = train(m, {random_pair(c, seed)}, t);
    ASSERT_EQ(r.loss_trace.size(), 50u);
    for (double l : r.loss_trace) EXPECT_TRUE(std::isfinite(l));
    EXPECT_LE(r.loss_trace.back(), 0.5 * r.loss_trace.front()) << "seed " << seed;
  }
}

TEST(Train, EveryModeRuns) {
  const TimConfig c = small_config(2);
  for (SearchMode mode : {SearchMode::cimle, SearchMode::chimle, SearchMode::regression}) {
    TimModel m = init_model(c, 1);
    TrainConfig t;
    t.epochs = 3;
    t.m = 2;
    t.mode = mode;
    const TrainResult r = train(m, {random_pair(c, 1), random_pair(c, 2)}, t);
    EXPECT_EQ(r.loss_trace.size(), 3u);
  }
}

TEST(Train, DeterministicGivenSeed) {
  const TimConfig c = small_config(2);
  const std::vector<TrainPair> data{random_pair(c, 1), random_pair(c, 2), random_pair(c, 3)};
  TrainConfig t;
  t.epochs = 4;
  t.m = 3;
  t.seed = 77;
  t.flags.no_ic = true;
  TimModel a = init_model(c, 5), b = init_model(c, 5);
  const auto ra = train(a, data, t), rb = train(b, data, t);
  EXPECT_EQ(ra.loss_trace, rb.loss_trace);
  EXPECT_TRUE(a.same_parameters(b));
}

TEST(Train, NonFiniteLossNamesExampleAndEpoch) {
  const TimConfig c = small_config(2);
  TimModel m = init_model(c, 1);
  std::vector<TrainPair> data{random_pair(c, 1), random_pair(c, 2)};
  data[1].y.levels[1].data[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig t;
  t.epochs = 2;
  t.mode = SearchMode::regression;
  try {
    train(m, data, t);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("example 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------
// Sample efficiency

TEST(Reach, InfiniteThresholdTakesOneSample) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 1);
  const double inf = std::numeric_limits<double>::infinity();
  for (SearchMode mode : {SearchMode::cimle, SearchMode::chimle}) {
    const ReachResult r = samples_to_reach(m, p, inf, mode, 64, 3, Metric{});
    EXPECT_EQ(r.samples, 1);
    EXPECT_FALSE(r.censored);
  }
}

TEST(Reach, ZeroThresholdIsCensored) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 1);
  for (SearchMode mode : {SearchMode::cimle, SearchMode::chimle}) {
    const ReachResult r = samples_to_reach(m, p, 0.0, mode, 20, 3, Metric{});
    EXPECT_TRUE(r.censored);
    EXPECT_EQ(r.samples, 20);
  }
  EXPECT_THROW(samples_to_reach(m, p, 1.0, SearchMode::cimle, 0, 3, Metric{}), ContractError);
  EXPECT_THROW(samples_to_reach(m, p, 1.0, SearchMode::regression, 5, 3, Metric{}), ContractError);
}

TEST(Reach, CimleCountIsFirstPoolIndexUnderThreshold) {
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 1);
  const auto pool = sample_pool(m, p, 40, 5, Metric{});
  std::vector<double> d;
  for (const auto& r : pool) d.push_back(r.distance);
  std::vector<double> sorted = d;
  std::sort(sorted.begin(), sorted.end());
  const double tau = sorted[3];
  int expect = 0;
  while (d[static_cast<std::size_t>(expect)] > tau) ++expect;
  EXPECT_EQ(samples_to_reach(m, p, tau, SearchMode::cimle, 40, 5, Metric{}).samples, expect + 1);
}

TEST(Reach, ChimleCountComesFromTheSchedule) {
  const auto s = chimle_budget_schedule(30);
  EXPECT_EQ(s, (std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 10, 12, 15, 18, 22, 27}));
  const TimConfig c = small_config(2);
  const TimModel m = init_model(c, 1);
  const TrainPair p = random_pair(c, 1);
  const double tau = chimle_search(m, p, 5, 5, Metric{}).final_distance;
  const ReachResult r = samples_to_reach(m, p, tau, SearchMode::chimle, 64, 5, Metric{});
  EXPECT_FALSE(r.censored);
  EXPECT_LE(r.samples, 5);
  EXPECT_LE(chimle_search(m, p, r.samples, 5, Metric{}).final_distance, tau);
  EXPECT_EQ(r.evaluations, r.samples * 2);
}
