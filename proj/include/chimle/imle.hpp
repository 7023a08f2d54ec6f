#pragma once

// Conditional IMLE: sample pools, nearest selection, the coarse-to-fine
// hierarchical latent search and the training loop built on them.

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chimle/adam.hpp"
#include "chimle/metrics.hpp"
#include "chimle/tim_model.hpp"

namespace chimle {

/// One training input with its observed image, both as pyramids.
struct TrainPair {
  ImagePyramid x;
  ImagePyramid y;
};

struct PoolParams {
  int m = 8;
  std::uint64_t seed = 0;
  void validate() const;
};

// Candidate j's component at level l is drawn from substream (seed, j, l), so
// a cIMLE pool and a hierarchical search under one seed see the same draws.
LatentComponent candidate_component(const TimConfig& config, std::uint64_t seed, int j, int level);
LatentCode candidate_code(const TimConfig& config, std::uint64_t seed, int j);
/// Fixed draw used for levels that a search does not control.
LatentCode reference_code(const TimConfig& config, std::uint64_t seed);
LatentCode zero_code(const TimConfig& config);

struct SampleRecord {
  LatentCode latent;
  Tensor partial_output;  // [c, r, r] at `level`
  double distance = 0;
  int level = 0;
};

/// m fully realized candidates scored on the final level.
std::vector<SampleRecord> sample_pool(const TimModel& model, const TrainPair& pair, int m, std::uint64_t seed,
                                      const Metric& metric);

/// Argmin with ties going to the lowest index. Empty input is a ContractError.
std::size_t select_nearest_index(const std::vector<double>& distances);
const SampleRecord& select_nearest(const std::vector<SampleRecord>& pool);

struct AblationFlags {
  bool no_ic = false;  // no iterative combination: levels chosen against a fixed reference prefix
  bool no_pe = false;  // no partial evaluation: candidates scored on the final output only
  bool no_cd = false;  // no component division: plain pool of m*L full samples

  bool any() const { return no_ic || no_pe || no_cd; }
  std::string label() const;
  static AblationFlags parse(const std::string& label);
};

struct SearchResult {
  LatentCode latent;                                   // fully realized
  std::vector<double> level_distances;                 // selected distance per level
  std::vector<std::vector<double>> candidate_distances;
  std::vector<int> selected;                           // chosen candidate index per level
  double final_distance = 0;                           // d(final output of latent, y_L)
  long evaluations = 0;                                // candidate evaluations performed
};

SearchResult chimle_search(const TimModel& model, const TrainPair& pair, int m, std::uint64_t seed,
                           const Metric& metric, AblationFlags flags = {});
/// Pool of m full samples plus selection, reported like a one-level search.
SearchResult cimle_search(const TimModel& model, const TrainPair& pair, int m, std::uint64_t seed,
                          const Metric& metric);

/// Sum over levels of d(head_l(z), y_l) on the graph's tape.
template <typename T>
Var pair_loss(TimGraph<T>& graph, const TrainPair& pair, const LatentCode& z, const Metric& metric) {
  auto& tape = graph.tape();
  const int levels = static_cast<int>(pair.y.levels.size());
  std::optional<Var> prev;
  Var total;
  for (int l = 1; l <= levels; ++l) {
    const LatentComponent& c = z.components.at(static_cast<std::size_t>(l - 1));
    auto out = graph.run_level(l, graph.constant_image(pair.x.level(l)), graph.constant_component_local(c),
                               graph.constant_component_global(c), prev);
    prev = out.features;
    Var target = tape.constant(with_batch(pair.y.level(l)).template cast<T>());
    Var d = metric.distance_var(tape, out.image, target);
    total = l == 1 ? d : add(tape, total, d);
  }
  return total;
}

/// The objective with the inner minimum resolved: sum over examples and levels.
template <typename T>
Var imle_loss(TimGraph<T>& graph, const std::vector<TrainPair>& data, const std::vector<LatentCode>& codes,
              const Metric& metric) {
  if (data.size() != codes.size() || data.empty()) {
    throw ContractError("imle_loss: " + std::to_string(codes.size()) + " codes for " + std::to_string(data.size()) +
                        " examples");
  }
  Var total = pair_loss(graph, data[0], codes[0], metric);
  for (std::size_t i = 1; i < data.size(); ++i) total = add(graph.tape(), total, pair_loss(graph, data[i], codes[i], metric));
  return total;
}

double imle_loss_value(const TimModel& model, const std::vector<TrainPair>& data, const std::vector<LatentCode>& codes,
                       const Metric& metric);
/// Adds d loss / d theta for one example into the model's grad buffers; returns the loss.
double accumulate_gradient(TimModel& model, const TrainPair& pair, const LatentCode& z, const Metric& metric);

enum class SearchMode { cimle, chimle, regression };
const char* search_mode_name(SearchMode m);
SearchMode parse_search_mode(const std::string& name);

struct TrainConfig {
  int epochs = 150;
  int batch_size = 1;
  double learning_rate = 1e-3;
  int m = 8;                  // per level (chimle) or pool size (cimle)
  SearchMode mode = SearchMode::chimle;
  AblationFlags flags;
  Metric metric;
  int refresh_every = 1;      // epochs between searches
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainResult {
  std::vector<double> loss_trace;  // mean per-example loss, one per epoch
};

using EpochCallback = std::function<void(int epoch, double loss)>;

/// Batch size 1, Adam, examples visited in a per-epoch shuffled order. Throws
/// NumericalError naming the example and epoch on a non-finite loss.
TrainResult train(TimModel& model, const std::vector<TrainPair>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct ReachResult {
  int samples = 0;      // full-forward equivalents
  long evaluations = 0; // raw candidate evaluations
  bool censored = false;
};

/// Budget needed before the final-level distance is <= tau, for each tau.
/// cimle: pool size at which the running minimum first reaches tau.
/// chimle: smallest per-level m on the schedule 1, 2, 3, 4, 5, 6, 7, 8, 10, 12, ...
/// whose search reaches tau; m per level costs as much as m full samples.
std::vector<ReachResult> samples_to_reach(const TimModel& model, const TrainPair& pair, const std::vector<double>& taus,
                                          SearchMode mode, int cap, std::uint64_t seed, const Metric& metric);
ReachResult samples_to_reach(const TimModel& model, const TrainPair& pair, double tau, SearchMode mode, int cap,
                             std::uint64_t seed, const Metric& metric);
std::vector<int> chimle_budget_schedule(int cap);

}  // namespace chimle
