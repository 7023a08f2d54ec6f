#pragma once

// Experiment drivers shared by the command-line tool and the acceptance run:
// sample sets, the FD proxy, the sample-efficiency sweep and the ablation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "chimle/data_synth.hpp"
#include "chimle/imle.hpp"
#include "chimle/metrics.hpp"

namespace chimle {

std::vector<TrainPair> make_pairs(const std::vector<Example>& examples, const TimConfig& config);

/// Sample `s` for input `i`.
using Sampler = std::function<Tensor(std::size_t input, int sample)>;
/// Latent for (input, sample) drawn from substream(seed, {input, sample}).
Sampler model_sampler(const TimModel& model, const std::vector<TrainPair>& pairs, std::uint64_t seed);
/// Deterministic prediction at the all-zero latent.
Sampler regression_sampler(const TimModel& model, const std::vector<TrainPair>& pairs);
/// Cycles through each input's ground-truth modes.
Sampler replay_sampler(const std::vector<Example>& examples);

std::vector<std::vector<Tensor>> draw_samples(const Sampler& sampler, std::size_t inputs, int per_input);

/// Pooled random features of every ground-truth mode of every example.
FeatureMatrix mode_features(const std::vector<Example>& examples, const RandomFeatures& features = RandomFeatures());
FeatureMatrix sample_features(const std::vector<std::vector<Tensor>>& samples, const RandomFeatures& features = RandomFeatures());
/// Frechet distance between generated samples and the ground-truth mode sets.
double fd_proxy(const std::vector<std::vector<Tensor>>& samples, const std::vector<Example>& examples);

struct EvalOptions {
  int samples_per_input = 16;
  int coverage_samples = 64;
  int ivo_inputs = 2;  // IvO is run on the first few inputs only; 0 disables it
  IvoParams ivo;
  Metric metric;
  std::uint64_t seed = 0;
};

struct EvalResult {
  MetricReport report;
  std::vector<int> coverage;  // covered modes per input
  double mean_coverage = 0;
  std::vector<std::vector<Tensor>> samples;  // samples[input][s]
};

/// `model` may be null (IvO is then reported as NaN).
EvalResult evaluate(const Sampler& sampler, const TimModel* model, const std::vector<Example>& examples,
                    const std::vector<TrainPair>& pairs, const EvalOptions& options);

// ---------------------------------------------------------------------------

/// Final-level distances of a pool at the given quantiles (ascending quantile
/// gives ascending threshold).
std::vector<double> quantile_thresholds(const TimModel& model, const TrainPair& pair,
                                        const std::vector<double>& quantiles, int pool, std::uint64_t seed,
                                        const Metric& metric);

struct EfficiencyRow {
  double tau = 0;
  SearchMode mode = SearchMode::cimle;
  double mean_samples = 0;  // censored runs count as cap
  double std_samples = 0;
  int censored = 0;         // runs that hit the cap
};

/// Rows ordered by threshold (as given), cimle before chimle. Run r uses seed substream (seed, r).
std::vector<EfficiencyRow> efficiency_curve(const TimModel& model, const TrainPair& pair,
                                            const std::vector<double>& taus, int runs, int cap, std::uint64_t seed,
                                            const Metric& metric);

// ---------------------------------------------------------------------------

/// The removal order: full, no_IC, no_IC+no_PE, no_IC+no_PE+no_CD.
std::vector<AblationFlags> ablation_variants();

struct AblationRow {
  std::string variant;
  std::vector<double> fd;  // per seed
  double mean_fd = 0;
};

struct AblationOptions {
  TimConfig model;
  TrainConfig train;   // mode is forced to chimle, flags and seed per run
  std::vector<std::uint64_t> seeds{0};
  int samples_per_input = 16;
};

using AblationProgress = std::function<void(const std::string& variant, std::uint64_t seed, double fd)>;
std::vector<AblationRow> run_ablation(const std::vector<Example>& examples, const AblationOptions& options,
                                      const AblationProgress& progress = {});

}  // namespace chimle
