// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on
// any failure. Heavy criteria share one trained toy model.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "chimle/data_synth.hpp"
#include "chimle/diffusion.hpp"
#include "chimle/evaluation.hpp"
#include "chimle/imle.hpp"
#include "chimle/metrics.hpp"
#include "chimle/ops.hpp"
#include "gradcheck.hpp"

using namespace chimle;
using namespace chimle::testing;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& details) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << id << " " << name << ": " << details << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Adjacent pairs where the sequence goes down.
int inversions(const std::vector<double>& v) {
  int n = 0;
  for (std::size_t i = 1; i < v.size(); ++i) n += v[i] < v[i - 1];
  return n;
}

// ---------------------------------------------------------------------------
// Shared fixtures

TimConfig tiny_config(int levels) {
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

TrainPair random_pair(const TimConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto pyramid = [&](int channels) {
    ImagePyramid p;
    for (int l = 1; l <= c.levels; ++l) {
      const auto r = static_cast<std::size_t>(c.resolution(l));
      Tensor t({static_cast<std::size_t>(channels), r, r});
      for (float& v : t.data) v = u(rng);
      p.levels.push_back(t);
    }
    return p;
  };
  TrainPair p;
  p.x = pyramid(c.in_channels);
  p.y = pyramid(c.out_channels);
  return p;
}

// The 64x64 colorization model used for criteria 4, 5, 7 and 8.
TimConfig toy_config() {
  TimConfig c;
  c.channels_per_level = {8, 8, 8, 8};
  c.rrdb_per_level = 1;
  c.dense_layers_per_block = 3;
  c.growth_channels = 8;
  c.mapping_depth = 2;
  c.local_latent_channels = 2;
  c.global_latent_dim = 8;
  return c;
}

TrainConfig toy_train(SearchMode mode) {
  TrainConfig t;
  t.epochs = 60;
  t.learning_rate = 0.003;
  t.m = 8;
  t.refresh_every = 2;
  t.mode = mode;
  t.seed = 1;
  return t;
}

constexpr std::uint64_t kInitSeed = 1;

// ---------------------------------------------------------------------------
// 1. gradients

DTensor off_kink(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  DTensor t(std::move(shape));
  for (double& v : t.data) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  struct OpCase {
    const char* name;
    std::function<GraphFn(int)> graph;
    std::function<std::vector<DTensor>(std::mt19937_64&)> inputs;
  };
  auto ws = [](auto op) {
    return [op](int s) -> GraphFn { return [op, s](DTape& t, const std::vector<Var>& v) { return weighted_sum(t, op(t, v), s); }; };
  };
  const std::vector<OpCase> ops{
      {"dense", ws([](DTape& t, const std::vector<Var>& v) { return dense(t, v[0], v[1], v[2]); }),
       [](auto& r) { return std::vector{random_tensor({3, 2}, r), random_tensor({2, 4}, r), random_tensor({4}, r)}; }},
      {"conv2d", ws([](DTape& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], 1, 1); }),
       [](auto& r) { return std::vector{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r)}; }},
      {"conv2d/2", ws([](DTape& t, const std::vector<Var>& v) { return conv2d(t, v[0], v[1], 2, 1); }),
       [](auto& r) { return std::vector{random_tensor({1, 2, 6, 6}, r), random_tensor({2, 2, 3, 3}, r)}; }},
      {"weight_norm", ws([](DTape& t, const std::vector<Var>& v) { return weight_norm(t, v[0], v[1]); }),
       [](auto& r) { return std::vector{random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r, 0.5, 2.0)}; }},
      {"adain", ws([](DTape& t, const std::vector<Var>& v) { return adain(t, v[0], v[1], v[2]); }),
       [](auto& r) { return std::vector{random_tensor({2, 3, 4, 4}, r), random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; }},
      {"leaky_relu", ws([](DTape& t, const std::vector<Var>& v) { return leaky_relu(t, v[0]); }),
       [](auto& r) { return std::vector{off_kink({2, 3, 4}, r)}; }},
      {"upsample", ws([](DTape& t, const std::vector<Var>& v) { return upsample_nearest2x(t, v[0]); }),
       [](auto& r) { return std::vector{random_tensor({1, 2, 3, 3}, r)}; }},
      {"downsample", ws([](DTape& t, const std::vector<Var>& v) { return downsample_avg2x(t, v[0]); }),
       [](auto& r) { return std::vector{random_tensor({1, 2, 4, 6}, r)}; }},
      {"mse", [](int) -> GraphFn { return [](DTape& t, const std::vector<Var>& v) { return mse(t, v[0], v[1]); }; },
       [](auto& r) { return std::vector{random_tensor({2, 5}, r), random_tensor({2, 5}, r)}; }},
      {"sum", [](int) -> GraphFn { return [](DTape& t, const std::vector<Var>& v) { return sum(t, v[0]); }; },
       [](auto& r) { return std::vector{random_tensor({3, 4}, r)}; }},
      {"add", ws([](DTape& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); }),
       [](auto& r) { return std::vector{random_tensor({4, 3}, r), random_tensor({4, 3}, r)}; }},
      {"mul", ws([](DTape& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); }),
       [](auto& r) { return std::vector{random_tensor({4, 3}, r), random_tensor({4, 3}, r)}; }},
      {"affine_scalar", ws([](DTape& t, const std::vector<Var>& v) { return affine_scalar(t, v[0], -1.7, 0.4); }),
       [](auto& r) { return std::vector{random_tensor({5}, r)}; }},
      {"scaled_residual", ws([](DTape& t, const std::vector<Var>& v) { return scaled_residual(t, v[0], v[1], 0.3); }),
       [](auto& r) { return std::vector{random_tensor({4, 3}, r), random_tensor({4, 3}, r)}; }},
      {"concat", ws([](DTape& t, const std::vector<Var>& v) { return concat_channels(t, {v[0], v[1]}); }),
       [](auto& r) { return std::vector{random_tensor({2, 1, 3, 3}, r), random_tensor({2, 2, 3, 3}, r)}; }},
      {"channel_bias", ws([](DTape& t, const std::vector<Var>& v) { return add_channel_bias(t, v[0], v[1]); }),
       [](auto& r) { return std::vector{random_tensor({2, 3, 2, 2}, r), random_tensor({3}, r)}; }},
      {"slice", ws([](DTape& t, const std::vector<Var>& v) { return slice_columns(t, v[0], 1, 4); }),
       [](auto& r) { return std::vector{random_tensor({2, 5}, r)}; }},
      {"reshape", ws([](DTape& t, const std::vector<Var>& v) { return reshape(t, v[0], Shape{3, 4}); }),
       [](auto& r) { return std::vector{random_tensor({2, 6}, r)}; }},
  };

  double op_worst = 0;
  std::string op_worst_name;
  for (const auto& op : ops) {
    for (int s = 0; s < 20; ++s) {
      std::mt19937_64 rng(1000 + s);
      const GradCheck r = check_gradients(op.graph(s), op.inputs(rng));
      if (r.max_rel > op_worst) {
        op_worst = r.max_rel;
        op_worst_name = op.name;
      }
    }
  }

  // Whole-model loss against a few weights in every kind of layer.
  double e2e_worst = 0;
  const char* names[] = {"level1.in.v", "level2.rrdb0.db1.conv0.v", "level2.head.v", "level1.map0.w"};
  for (int s = 0; s < 20; ++s) {
    const TimConfig c = tiny_config(2);
    const TimModel m = init_model(c, 50 + s);
    const TrainPair p = random_pair(c, 80 + s);
    const LatentCode z = candidate_code(c, 7 + s, 0);
    for (const char* name : names) {
      GraphFn f = [&](DTape& t, const std::vector<Var>& v) {
        TimGraph<double> g(m, t);
        g.bind(name, v[0]);
        return pair_loss(g, p, z, Metric{});
      };
      e2e_worst = std::max(e2e_worst, check_gradients(f, {m.param(name).cast<double>()}, 1e-6, 24, s).max_rel);
    }
  }
  const double secs = seconds_since(t0);
  report(1, "gradient suite", op_worst < 1e-4 && e2e_worst < 1e-3 && secs < 120,
         std::to_string(ops.size()) + " ops x 20 seeds max rel " + fmt(op_worst) + " (" + op_worst_name +
             "), end-to-end max rel " + fmt(e2e_worst) + ", " + fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 2. search equals the level-wise greedy oracle

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

void criterion_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  int trials = 0, equal = 0;
  // 9 (L, m) cells; seeds run until 50 trials are spread over them.
  for (std::uint64_t s = 0; trials < 54; ++s) {
    for (int L : {1, 2, 3}) {
      const TimConfig c = tiny_config(L);
      const TimModel m = init_model(c, 10 * s + L);
      for (int M : {1, 3, 8}) {
        const TrainPair p = random_pair(c, 1000 * s + 10 * L + M);
        const SearchResult r = chimle_search(m, p, M, s, Metric{});
        equal += r.latent == greedy_oracle(m, p, M, s);
        ++trials;
      }
    }
  }
  const double secs = seconds_since(t0);
  report(2, "search oracle equivalence", equal == trials && secs < 60,
         std::to_string(equal) + "/" + std::to_string(trials) + " exact matches over L in {1,2,3}, m in {1,3,8}, " +
             fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 3. gradient locality

std::map<std::string, std::vector<float>> gradients(TimModel& m, const TrainPair& p, const LatentCode& z) {
  m.zero_grad();
  accumulate_gradient(m, p, z, Metric{});
  std::map<std::string, std::vector<float>> g;
  for (const auto& [name, t] : m.parameters()) g[name] = t.grad;
  m.zero_grad();
  return g;
}

void criterion_locality() {
  int same = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    const TimConfig c = tiny_config(1 + trial % 3);
    TimModel m = init_model(c, 300 + trial);
    const TrainPair p = random_pair(c, 400 + trial);
    std::vector<SampleRecord> pool = sample_pool(m, p, 6, trial, Metric{});
    const SampleRecord chosen = select_nearest(pool);
    const auto g0 = gradients(m, p, chosen.latent);
    // Every other candidate is swapped for a different draw that stays farther away.
    for (auto& rec : pool) {
      if (rec.latent == chosen.latent) continue;
      for (int k = 0;; ++k) {
        SampleRecord r;
        r.latent = candidate_code(c, 5000 + trial, k);
        r.partial_output = forward_full(m, p.x, r.latent).back();
        r.distance = Metric{}.distance(r.partial_output, p.y.level(c.levels));
        if (r.distance > chosen.distance) {
          rec = r;
          break;
        }
      }
    }
    const SampleRecord& again = select_nearest(pool);
    same += again.latent == chosen.latent && gradients(m, p, again.latent) == g0;
  }
  report(3, "gradient locality", same == trials,
         std::to_string(same) + "/" + std::to_string(trials) + " trials with bitwise-identical gradients");
}

// ---------------------------------------------------------------------------
// Trained toy model shared by 4, 7 and 8

struct Toy {
  std::vector<Example> data;
  std::vector<TrainPair> pairs;
  TimModel initial{toy_config()};
  TimModel chimle{toy_config()};
  TimModel regression{toy_config()};
  double chimle_secs = 0;
};

Toy train_toy() {
  Toy t;
  TaskSpec spec;  // K=4 colorization, 64x64, 16 inputs
  t.data = generate_dataset(spec);
  const TimConfig c = toy_config();
  t.pairs = make_pairs(t.data, c);
  t.initial = init_model(c, kInitSeed);
  t.chimle = t.initial;
  const auto t0 = std::chrono::steady_clock::now();
  train(t.chimle, t.pairs, toy_train(SearchMode::chimle));
  t.chimle_secs = seconds_since(t0);
  t.regression = t.initial;
  train(t.regression, t.pairs, toy_train(SearchMode::regression));
  return t;
}

// ---------------------------------------------------------------------------
// 4. sample efficiency curve

void criterion_efficiency(const Toy& toy) {
  const std::vector<double> quantiles{0.5, 0.25, 0.1, 0.05, 0.02};
  const int runs = 10, cap = 400, examples = 2;
  std::vector<double> cimle(quantiles.size()), chimle(quantiles.size());
  std::vector<bool> censored(quantiles.size(), false);
  std::string per_example;
  for (int e = 0; e < examples; ++e) {
    const TrainPair& pair = toy.pairs[static_cast<std::size_t>(e)];
    const auto taus = quantile_thresholds(toy.chimle, pair, quantiles, 200, 900 + e, Metric{});
    const auto rows = efficiency_curve(toy.chimle, pair, taus, runs, cap, 40 + e, Metric{});
    per_example += " ex" + std::to_string(e) + " ratios";
    for (std::size_t q = 0; q < quantiles.size(); ++q) {
      const EfficiencyRow& a = rows[2 * q];
      const EfficiencyRow& b = rows[2 * q + 1];
      cimle[q] += a.mean_samples / examples;
      chimle[q] += b.mean_samples / examples;
      censored[q] = censored[q] || a.censored > 0 || b.censored > 0;
      per_example += " " + fmt(a.mean_samples / b.mean_samples, 3);
    }
  }
  std::vector<double> ratios;
  bool cheaper = true;
  std::string curve;
  for (std::size_t q = 0; q < quantiles.size(); ++q) {
    if (censored[q]) {
      curve += " q" + fmt(quantiles[q]) + ":censored";
      continue;
    }
    ratios.push_back(cimle[q] / chimle[q]);
    cheaper = cheaper && chimle[q] <= cimle[q];
    curve += " q" + fmt(quantiles[q]) + ":" + fmt(cimle[q], 3) + "/" + fmt(chimle[q], 3);
  }
  const int inv = inversions(ratios);
  report(4, "sample efficiency shape", cheaper && inv <= 1 && ratios.size() >= 2,
         "cimle/chimle mean samples" + curve + ";" + per_example + "; " + std::to_string(inv) +
             " ratio inversions; training took " + fmt(toy.chimle_secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 5. ablation ordering

void criterion_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  TaskSpec spec;
  const auto data = generate_dataset(spec);
  AblationOptions o;
  o.model = toy_config();
  o.train = toy_train(SearchMode::chimle);
  o.train.epochs = 30;
  o.train.refresh_every = 3;
  o.seeds = {100, 101, 102, 103, 104};
  const auto rows = run_ablation(data, o);
  std::vector<double> means;
  std::string details;
  for (const auto& r : rows) {
    means.push_back(r.mean_fd);
    details += (details.empty() ? "" : ", ") + r.variant + " " + fmt(r.mean_fd);
  }
  const int inv = inversions(means);
  report(5, "ablation ordering", inv <= 1,
         "mean FD-proxy over 5 seeds: " + details + "; " + std::to_string(inv) + " inversions, " +
             fmt(seconds_since(t0), 4) + " s");
}

// ---------------------------------------------------------------------------
// 6. metric oracles

Tensor img2(float a, float b) { return Tensor({1, 1, 2}, {a, b}); }

FeatureMatrix blob(int n, float cx, float cy, Rng& rng) {
  std::normal_distribution<float> g(0.0f, 0.01f);
  FeatureMatrix f(n, 2);
  for (int i = 0; i < n; ++i) {
    f(i, 0) = cx + g(rng);
    f(i, 1) = cy + g(rng);
  }
  return f;
}

FeatureMatrix gaussian(int n, int d, double mean, Rng& rng) {
  std::normal_distribution<double> g(mean, 1.0);
  FeatureMatrix f(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) f(i, j) = static_cast<float>(g(rng));
  return f;
}

void criterion_metrics() {
  // FwV by hand: means (0.25,0.5) and (0.5,1); per-sample squared distances
  // 0.03125 / 0.125 to the mean, weights exp(-d_obs / 2 sigma^2).
  const std::vector<std::vector<Tensor>> s{{img2(0.0f, 0.5f), img2(1.0f, 1.0f)}, {img2(0.5f, 0.5f), img2(0.0f, 1.0f)}};
  const std::vector<Tensor> y{img2(0.0f, 0.5f), img2(0.5f, 1.0f)};
  const double wq = std::exp(-0.125 / (2 * 0.2 * 0.2));
  const double fwv_expected = (0.03125 + wq * 0.03125 + wq * 0.125 + wq * 0.125) / 4.0;
  const double fwv_err = std::abs(fwv(s, y, Metric::pixel(), {0.2}) - fwv_expected);

  double fd_total = 0;
  for (int k = 0; k < 10; ++k) {
    Rng rng(static_cast<std::uint64_t>(2 + k));
    const FeatureMatrix a = gaussian(10000, 1, 0.0, rng), b = gaussian(10000, 1, 1.0, rng);
    fd_total += frechet_feature_distance(a, b);
  }
  const double fd = fd_total / 10;

  FeatureMatrix ka(2, 2), kb(2, 2);
  ka << 10, 0, 10, 0;
  kb << 0, 10, 0, 10;
  const double kd_err = std::abs(kernel_feature_distance(ka, kb) - (2 * std::pow(51.0, 3) - 2.0));

  // Real split evenly over two clusters, generated all in one.
  Rng rng(3);
  FeatureMatrix real(200, 2);
  real.topRows(100) = blob(100, 0, 0, rng);
  real.bottomRows(100) = blob(100, 10, 10, rng);
  const FeatureMatrix gen = blob(200, 0, 0, rng);
  PrdParams params;
  params.clusters = 2;
  const PrdScores prd = prd_f_scores(real, gen, params);
  const double prd_err = std::max(std::abs(prd.f8 - 65.0 * 0.5 / 64.5),
                                  std::abs(prd.f18 - (1.0 + 1.0 / 64) * 0.5 / (1.0 / 64 + 0.5)));

  Rng same_rng(1);
  const FeatureMatrix a = gaussian(500, 4, 0.0, same_rng);
  const PrdScores self = prd_f_scores(a, a);

  const bool ok = fwv_err < 1e-6 && std::abs(fd - 1.0) <= 0.05 && kd_err < 1e-6 && prd_err < 1e-6 &&
                  self.f8 >= 0.99 && self.f18 >= 0.99;
  report(6, "metric oracles", ok,
         "FwV err " + fmt(fwv_err, 3) + ", FD " + fmt(fd, 5) + " (mean of 10 draws), KD err " + fmt(kd_err, 3) +
             ", PRD err " + fmt(prd_err, 3) + ", F(A,A) " + fmt(self.f8, 5) + "/" + fmt(self.f18, 5));
}

// ---------------------------------------------------------------------------
// 7. mode coverage

void criterion_coverage(const Toy& toy) {
  double mean = 0;
  int lowest = 1 << 30, regression_max = 0;
  const Sampler reg = regression_sampler(toy.regression, toy.pairs);
  for (std::size_t i = 0; i < toy.data.size(); ++i) {
    const Example& ex = toy.data[i];
    const double thr = calibrated_threshold(ex);
    const int cov = mode_coverage(toy.chimle, ex, 64, thr, 5);
    mean += static_cast<double>(cov) / static_cast<double>(toy.data.size());
    lowest = std::min(lowest, cov);
    regression_max = std::max(regression_max, mode_coverage([&](int k) { return reg(i, k); }, ex, 64, thr));
  }
  report(7, "mode coverage", mean >= 2 && regression_max <= 1,
         "trained model covers " + fmt(mean, 3) + " of 4 modes on average (min " + std::to_string(lowest) +
             ") with 64 samples; regression baseline covers at most " + std::to_string(regression_max));
}

// ---------------------------------------------------------------------------
// 8. IvO

void criterion_ivo(const Toy& toy) {
  const TrainPair& pair = toy.pairs[0];
  Rng rng(substream(77, {0}));
  const Tensor target = forward_full(toy.chimle, pair.x, draw_latent(toy.chimle.config(), rng)).back();
  const IvoResult trained = ivo(toy.chimle, pair.x, target, IvoParams{}, 7);
  const IvoResult untrained = ivo(toy.initial, pair.x, target, IvoParams{}, 7);
  int reached = 0;
  std::string list;
  for (double v : trained.restart_mse) {
    reached += v < 1e-4;
    list += (list.empty() ? "" : " ") + fmt(v, 3);
  }
  const bool ok = reached >= 4 && std::isfinite(untrained.mean) && untrained.mean >= 10 * trained.mean;
  report(8, "IvO behaviour", ok,
         std::to_string(reached) + "/5 restarts below 1e-4 (" + list + "); untrained mean " + fmt(untrained.mean, 3) +
             " = " + fmt(untrained.mean / trained.mean, 3) + "x trained mean");
}

// ---------------------------------------------------------------------------
// 9. diffusion identities

void criterion_diffusion() {
  const auto t0 = std::chrono::steady_clock::now();
  const MixtureSpec mix = MixtureSpec::two_modes(3.5, 1.0);
  std::string elbo_details;
  bool agree = true;
  for (int steps : {1, 5, 50}) {
    const DiffusionSpec d = DiffusionSpec::constant(steps, 0.5);
    const ReverseModel r = fit_reverse(mix, d, FitOptions{}, 4).model;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const ElboEstimate e = elbo(mix, d, r, 20000, seed, 1);
      worst = std::max(worst, std::abs(e.direct - e.decomposed) / std::hypot(e.direct_se, e.decomposed_se));
    }
    agree = agree && worst <= 3;
    elbo_details += " T=" + std::to_string(steps) + ":" + fmt(worst, 3);
  }

  const auto rows = mode_forcing_sweep(mix, {0.1, 5.0}, SweepOptions{}, 0);
  const SweepRow& self = rows[0];
  const SweepRow& low = rows[1];
  const SweepRow& high = rows[2];
  const double prior_mass = 0.5;
  const bool self_ok = self.bridge_ratio >= 0.8 && self.bridge_ratio <= 1.2 &&
                       std::min(self.mass_1, self.mass_2) >= 0.8 * prior_mass;
  const bool bridged = high.bridge_ratio > 2;
  const bool suppressed = std::min(low.mass_1, low.mass_2) < 0.8 * prior_mass;
  const double secs = seconds_since(t0);
  report(9, "diffusion identities", agree && self_ok && bridged && suppressed && secs < 300,
         "|direct-decomposed|/SE" + elbo_details + "; sigma_q=5s bridge ratio " + fmt(high.bridge_ratio) +
             "; sigma_q=0.1s masses " + fmt(low.mass_1, 3) + "/" + fmt(low.mass_2, 3) + "; self-test ratio " +
             fmt(self.bridge_ratio, 3) + " masses " + fmt(self.mass_1, 3) + "/" + fmt(self.mass_2, 3) + ", " +
             fmt(secs, 3) + " s");
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

int shell(const std::string& args) {
  const std::string cmd = std::string(CHIMLE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Same file names and same bytes under both roots.
bool same_tree(const fs::path& a, const fs::path& b, int& files) {
  if (fs::is_regular_file(a)) {
    ++files;
    return fs::is_regular_file(b) && slurp(a) == slurp(b);
  }
  std::vector<std::string> na, nb;
  for (const auto& e : fs::directory_iterator(a)) na.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b)) nb.push_back(e.path().filename().string());
  std::sort(na.begin(), na.end());
  std::sort(nb.begin(), nb.end());
  if (na != nb || na.empty()) return false;
  bool ok = true;
  for (const auto& n : na) ok = same_tree(a / n, b / n, files) && ok;
  return ok;
}

void criterion_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("chimle_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({
  "model": {"levels": 3, "base_resolution": 2, "channels_per_level": [4, 4, 4], "rrdb_per_level": 1,
            "dense_layers_per_block": 2, "growth_channels": 4, "mapping_depth": 2, "mapping_hidden": 8,
            "local_latent_channels": 2, "global_latent_dim": 4},
  "train": {"epochs": 2, "m": 3, "learning_rate": 0.003}
})";
  const std::string cfg = (dir / "config.json").string();
  auto at = [&](const std::string& run, const std::string& name) { return (dir / run / name).string(); };
  // Later commands read run "a"'s dataset and checkpoint so only the command under test varies.
  const std::vector<std::pair<std::string, std::function<std::string(const std::string&)>>> commands{
      {"gen", [&](const std::string& r) { return "gen --k 4 --n 12 --side 16 --seed 3 --out " + at(r, "ds"); }},
      {"train",
       [&](const std::string& r) {
         return "train --config " + cfg + " --dataset " + at("a", "ds") + " --seed 3 --out " + at(r, "run");
       }},
      {"bench-efficiency",
       [&](const std::string& r) {
         return "bench-efficiency --checkpoint " + at("a", "run/checkpoint.bin") + " --dataset " + at("a", "ds") +
                " --pool 40 --runs 3 --cap 40 --seed 3 --out " + at(r, "bench.csv");
       }},
      {"eval",
       [&](const std::string& r) {
         return "eval --checkpoint " + at("a", "run/checkpoint.bin") + " --dataset " + at("a", "ds") +
                " --ivo-inputs 1 --ivo-steps 20 --ivo-restarts 2 --seed 3 --out " + at(r, "eval");
       }},
      {"ablate",
       [&](const std::string& r) {
         return "ablate --config " + cfg + " --dataset " + at("a", "ds") + " --seeds 0 --epochs 1 --out " +
                at(r, "ablate.csv");
       }},
      {"diffusion-demo",
       [&](const std::string& r) {
         return "diffusion-demo --samples 20000 --iterations 300 --seed 3 --out " + at(r, "diffusion.csv");
       }},
  };
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  std::string details;
  bool ok = true;
  for (const auto& [name, args] : commands) {
    const int ea = shell(args("a")), eb = shell(args("b"));
    int files = 0;
    const std::string out = name == "gen" ? "ds" : name == "train" ? "run" : name == "eval" ? "eval"
                          : name == "bench-efficiency" ? "bench.csv" : name == "ablate" ? "ablate.csv" : "diffusion.csv";
    const bool same = ea == 0 && eb == 0 && same_tree(dir / "a" / out, dir / "b" / out, files);
    ok = ok && same;
    details += (details.empty() ? "" : ", ") + name + (same ? " " + std::to_string(files) + " files" : " DIFFERS");
  }
  fs::remove_all(dir);
  report(10, "CLI determinism", ok, details);
}

}  // namespace

int main() {
  std::cout << "acceptance run" << std::endl;
  criterion_gradients();
  criterion_oracle();
  criterion_locality();
  const Toy toy = train_toy();
  criterion_efficiency(toy);
  criterion_ablation();
  criterion_metrics();
  criterion_coverage(toy);
  criterion_ivo(toy);
  criterion_diffusion();
  criterion_determinism();
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
