#include "chimle/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "chimle/parallel.hpp"

namespace chimle {

std::vector<TrainPair> make_pairs(const std::vector<Example>& examples, const TimConfig& config) {
  std::vector<TrainPair> out;
  for (const Example& ex : examples) {
    Pyramids p = build_pyramids(ex, config.levels, config.base_resolution);
    out.push_back({std::move(p.x), std::move(p.y)});
  }
  return out;
}

Sampler model_sampler(const TimModel& model, const std::vector<TrainPair>& pairs, std::uint64_t seed) {
  return [&model, &pairs, seed](std::size_t i, int s) {
    Rng rng = substream(seed, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(s)});
    return forward_full(model, pairs.at(i).x, draw_latent(model.config(), rng)).back();
  };
}

Sampler regression_sampler(const TimModel& model, const std::vector<TrainPair>& pairs) {
  return [&model, &pairs](std::size_t i, int) { return forward_full(model, pairs.at(i).x, zero_code(model.config())).back(); };
}

Sampler replay_sampler(const std::vector<Example>& examples) {
  return [&examples](std::size_t i, int s) {
    const auto& modes = examples.at(i).mode_set;
    return modes[static_cast<std::size_t>(s) % modes.size()];
  };
}

std::vector<std::vector<Tensor>> draw_samples(const Sampler& sampler, std::size_t inputs, int per_input) {
  std::vector<std::vector<Tensor>> out(inputs, std::vector<Tensor>(static_cast<std::size_t>(per_input)));
  parallel_for(inputs * static_cast<std::size_t>(per_input), [&](std::size_t k) {
    const std::size_t i = k / static_cast<std::size_t>(per_input);
    const int s = static_cast<int>(k % static_cast<std::size_t>(per_input));
    out[i][static_cast<std::size_t>(s)] = sampler(i, s);
  });
  return out;
}

FeatureMatrix mode_features(const std::vector<Example>& examples, const RandomFeatures& features) {
  std::vector<std::vector<float>> rows;
  for (const Example& ex : examples)
    for (const Tensor& m : ex.mode_set) rows.push_back(features.pooled(m));
  return stack_rows(rows);
}

FeatureMatrix sample_features(const std::vector<std::vector<Tensor>>& samples, const RandomFeatures& features) {
  std::vector<std::vector<float>> rows;
  for (const auto& per_input : samples)
    for (const Tensor& s : per_input) rows.push_back(features.pooled(s));
  return stack_rows(rows);
}

double fd_proxy(const std::vector<std::vector<Tensor>>& samples, const std::vector<Example>& examples) {
  return frechet_feature_distance(mode_features(examples), sample_features(samples));
}

EvalResult evaluate(const Sampler& sampler, const TimModel* model, const std::vector<Example>& examples,
                    const std::vector<TrainPair>& pairs, const EvalOptions& options) {
  if (examples.empty()) throw ContractError("evaluate: no examples");
  if (options.samples_per_input < 2) throw ContractError("evaluate: need at least 2 samples per input");
  EvalResult out;
  out.samples = draw_samples(sampler, examples.size(), options.samples_per_input);

  // FwV takes samples[i][j] = sample i of input j.
  std::vector<std::vector<Tensor>> by_sample(static_cast<std::size_t>(options.samples_per_input));
  std::vector<Tensor> observed;
  for (std::size_t j = 0; j < examples.size(); ++j) {
    observed.push_back(examples[j].y);
    for (std::size_t i = 0; i < by_sample.size(); ++i) by_sample[i].push_back(out.samples[j][i]);
  }
  out.report.fwv = fwv(by_sample, observed, options.metric);

  const FeatureMatrix real = mode_features(examples);
  const FeatureMatrix gen = sample_features(out.samples);
  const PrdScores prd = prd_f_scores(real, gen);
  out.report.f8 = prd.f8;
  out.report.f18 = prd.f18;
  out.report.fd = real.cols() < real.rows() ? frechet_feature_distance(real, gen) : std::numeric_limits<double>::quiet_NaN();
  out.report.kd = kernel_feature_distance(real, gen);

  out.report.ivo_mean = std::numeric_limits<double>::quiet_NaN();
  if (model && options.ivo_inputs > 0) {
    double sum = 0;
    int used = 0;
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(options.ivo_inputs), pairs.size());
    for (std::size_t i = 0; i < n; ++i) {
      const IvoResult r = ivo(*model, pairs[i].x, examples[i].y, options.ivo,
                              substream_seed(options.seed, {0x49564fULL, static_cast<std::uint64_t>(i)}));
      out.report.ivo_diverged += r.diverged;
      if (std::isfinite(r.mean)) {
        sum += r.mean;
        ++used;
      }
    }
    if (used > 0) out.report.ivo_mean = sum / used;
  }

  for (std::size_t j = 0; j < examples.size(); ++j) {
    const double thr = calibrated_threshold(examples[j]);
    out.coverage.push_back(
        mode_coverage([&](int s) { return sampler(j, s); }, examples[j], options.coverage_samples, thr));
  }
  double total = 0;
  for (int c : out.coverage) total += c;
  out.mean_coverage = total / static_cast<double>(out.coverage.size());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> quantile_thresholds(const TimModel& model, const TrainPair& pair,
                                        const std::vector<double>& quantiles, int pool, std::uint64_t seed,
                                        const Metric& metric) {
  std::vector<double> d;
  for (const SampleRecord& r : sample_pool(model, pair, pool, seed, metric)) d.push_back(r.distance);
  std::sort(d.begin(), d.end());
  std::vector<double> out;
  for (double q : quantiles) {
    if (!(q >= 0 && q <= 1)) throw ContractError("quantile outside [0,1]");
    out.push_back(d[std::min(d.size() - 1, static_cast<std::size_t>(q * static_cast<double>(d.size())))]);
  }
  return out;
}

std::vector<EfficiencyRow> efficiency_curve(const TimModel& model, const TrainPair& pair,
                                            const std::vector<double>& taus, int runs, int cap, std::uint64_t seed,
                                            const Metric& metric) {
  if (runs < 1) throw ContractError("efficiency_curve: runs must be >= 1");
  std::vector<EfficiencyRow> rows;
  const SearchMode modes[2] = {SearchMode::cimle, SearchMode::chimle};
  std::vector<std::vector<std::vector<ReachResult>>> res(2, std::vector<std::vector<ReachResult>>(static_cast<std::size_t>(runs)));
  for (int m = 0; m < 2; ++m)
    for (int r = 0; r < runs; ++r)
      res[static_cast<std::size_t>(m)][static_cast<std::size_t>(r)] =
          samples_to_reach(model, pair, taus, modes[m], cap, substream_seed(seed, {static_cast<std::uint64_t>(r)}), metric);
  for (std::size_t t = 0; t < taus.size(); ++t) {
    for (int m = 0; m < 2; ++m) {
      EfficiencyRow row;
      row.tau = taus[t];
      row.mode = modes[m];
      double sum = 0, sq = 0;
      for (const auto& run : res[static_cast<std::size_t>(m)]) {
        sum += run[t].samples;
        sq += double(run[t].samples) * run[t].samples;
        row.censored += run[t].censored ? 1 : 0;
      }
      row.mean_samples = sum / runs;
      row.std_samples = runs > 1 ? std::sqrt(std::max(0.0, (sq - sum * sum / runs) / (runs - 1))) : 0.0;
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------

std::vector<AblationFlags> ablation_variants() {
  return {AblationFlags{}, AblationFlags{true, false, false}, AblationFlags{true, true, false},
          AblationFlags{true, true, true}};
}

std::vector<AblationRow> run_ablation(const std::vector<Example>& examples, const AblationOptions& options,
                                      const AblationProgress& progress) {
  if (options.seeds.empty()) throw ContractError("ablation: no seeds");
  const std::vector<TrainPair> pairs = make_pairs(examples, options.model);
  std::vector<AblationRow> rows;
  for (const AblationFlags& flags : ablation_variants()) {
    AblationRow row;
    row.variant = flags.label();
    for (std::uint64_t seed : options.seeds) {
      TimModel model = init_model(options.model, seed);
      TrainConfig tc = options.train;
      tc.mode = SearchMode::chimle;
      tc.flags = flags;
      tc.seed = seed;
      train(model, pairs, tc);
      const auto samples = draw_samples(model_sampler(model, pairs, substream_seed(seed, {0xAB1A7EULL})),
                                        examples.size(), options.samples_per_input);
      const double fd = fd_proxy(samples, examples);
      row.fd.push_back(fd);
      if (progress) progress(row.variant, seed, fd);
    }
    double s = 0;
    for (double v : row.fd) s += v;
    row.mean_fd = s / static_cast<double>(row.fd.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace chimle
