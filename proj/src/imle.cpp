#include "chimle/imle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chimle/parallel.hpp"

namespace chimle {

namespace {

constexpr std::uint64_t kReferenceKey = 0x52454646ULL;
constexpr std::uint64_t kOrderKey = 0x4f524452ULL;
constexpr std::uint64_t kSearchKey = 0x53524348ULL;

void check_pair(const TimModel& model, const TrainPair& pair) {
  const TimConfig& c = model.config();
  check_pyramid(c, pair.x, c.in_channels, c.levels, "input");
  check_pyramid(c, pair.y, c.out_channels, c.levels, "observed");
  if (static_cast<int>(pair.y.levels.size()) != c.levels) {
    throw ContractError("observed pyramid has " + std::to_string(pair.y.levels.size()) + " levels, model has " +
                        std::to_string(c.levels));
  }
}

const Tensor& target(const TrainPair& pair, int level) { return pair.y.level(level); }

// Runs levels from..L on top of `prev` with the given components and returns
// the final head output.
Tensor run_rest(const TimModel& model, const ImagePyramid& x, const LatentCode& z, int from, const Tensor* prev,
                Tensor* first_features) {
  const int L = model.config().levels;
  Tensor features;
  Tensor image;
  const Tensor* p = prev;
  for (int l = from; l <= L; ++l) {
    LevelStep s = step_level(model, x, l, z.components[static_cast<std::size_t>(l - 1)], p);
    if (l == from && first_features) *first_features = s.features;
    features = std::move(s.features);
    image = std::move(s.image);
    p = &features;
  }
  return image;
}

}  // namespace

void PoolParams::validate() const {
  if (m < 1) throw ContractError("pool size m must be >= 1, got " + std::to_string(m));
}

LatentComponent candidate_component(const TimConfig& config, std::uint64_t seed, int j, int level) {
  Rng rng = substream(seed, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(level)});
  return draw_component(config, level, rng);
}

LatentCode candidate_code(const TimConfig& config, std::uint64_t seed, int j) {
  LatentCode z;
  for (int l = 1; l <= config.levels; ++l) z.components.push_back(candidate_component(config, seed, j, l));
  z.realized_up_to = config.levels;
  return z;
}

LatentCode reference_code(const TimConfig& config, std::uint64_t seed) {
  LatentCode z;
  for (int l = 1; l <= config.levels; ++l) {
    Rng rng = substream(seed, {kReferenceKey, kReferenceKey, static_cast<std::uint64_t>(l)});
    z.components.push_back(draw_component(config, l, rng));
  }
  z.realized_up_to = config.levels;
  return z;
}

LatentCode zero_code(const TimConfig& config) {
  LatentCode z;
  for (int l = 1; l <= config.levels; ++l) {
    const auto r = static_cast<std::size_t>(config.resolution(l));
    z.components.push_back({Tensor({static_cast<std::size_t>(config.local_latent_channels), r, r}),
                            Tensor({static_cast<std::size_t>(config.global_latent_dim)})});
  }
  z.realized_up_to = config.levels;
  return z;
}

std::vector<SampleRecord> sample_pool(const TimModel& model, const TrainPair& pair, int m, std::uint64_t seed,
                                      const Metric& metric) {
  PoolParams{m, seed}.validate();
  check_pair(model, pair);
  const int L = model.config().levels;
  std::vector<SampleRecord> pool(static_cast<std::size_t>(m));
  parallel_for(pool.size(), [&](std::size_t j) {
    SampleRecord& r = pool[j];
    r.latent = candidate_code(model.config(), seed, static_cast<int>(j));
    r.partial_output = run_rest(model, pair.x, r.latent, 1, nullptr, nullptr);
    r.distance = metric.distance(r.partial_output, target(pair, L));
    r.level = L;
  });
  return pool;
}

std::size_t select_nearest_index(const std::vector<double>& distances) {
  if (distances.empty()) throw ContractError("select_nearest: empty pool");
  std::size_t best = 0;
  for (std::size_t i = 1; i < distances.size(); ++i)
    if (distances[i] < distances[best]) best = i;
  return best;
}

const SampleRecord& select_nearest(const std::vector<SampleRecord>& pool) {
  std::vector<double> d;
  for (const auto& r : pool) d.push_back(r.distance);
  return pool[select_nearest_index(d)];
}

std::string AblationFlags::label() const {
  if (!any()) return "full";
  std::string s;
  auto add = [&](const char* part) { s += (s.empty() ? "" : "+") + std::string(part); };
  if (no_ic) add("no_IC");
  if (no_pe) add("no_PE");
  if (no_cd) add("no_CD");
  return s;
}

AblationFlags AblationFlags::parse(const std::string& label) {
  AblationFlags f;
  if (label == "full" || label.empty()) return f;
  std::size_t start = 0;
  while (start <= label.size()) {
    const std::size_t end = std::min(label.find('+', start), label.size());
    const std::string part = label.substr(start, end - start);
    if (part == "no_IC" || part == "no_ic") f.no_ic = true;
    else if (part == "no_PE" || part == "no_pe" || part == "PE") f.no_pe = true;
    else if (part == "no_CD" || part == "no_cd" || part == "CD") f.no_cd = true;
    else throw ContractError("unknown ablation flag '" + part + "'");
    start = end + 1;
  }
  return f;
}

SearchResult cimle_search(const TimModel& model, const TrainPair& pair, int m, std::uint64_t seed,
                          const Metric& metric) {
  std::vector<SampleRecord> pool = sample_pool(model, pair, m, seed, metric);
  std::vector<double> d;
  for (const auto& r : pool) d.push_back(r.distance);
  const std::size_t best = select_nearest_index(d);
  SearchResult out;
  out.latent = pool[best].latent;
  out.level_distances = {d[best]};
  out.candidate_distances = {d};
  out.selected = {static_cast<int>(best)};
  out.final_distance = d[best];
  out.evaluations = m;
  return out;
}

SearchResult chimle_search(const TimModel& model, const TrainPair& pair, int m, std::uint64_t seed,
                           const Metric& metric, AblationFlags flags) {
  PoolParams{m, seed}.validate();
  check_pair(model, pair);
  const TimConfig& c = model.config();
  const int L = c.levels;
  if (flags.no_cd) return cimle_search(model, pair, m * L, seed, metric);

  const LatentCode ref = reference_code(c, seed);
  SearchResult out;
  out.latent.components.resize(static_cast<std::size_t>(L));
  out.latent.realized_up_to = L;

  Tensor chosen_prefix;  // features of the selected prefix z*_1..z*_{l-1}
  Tensor ref_prefix;     // features of the reference prefix
  for (int l = 1; l <= L; ++l) {
    const Tensor* prev = nullptr;
    if (l > 1) prev = flags.no_ic ? &ref_prefix : &chosen_prefix;

    std::vector<LatentComponent> cands(static_cast<std::size_t>(m));
    std::vector<double> dist(cands.size());
    std::vector<Tensor> feats(cands.size());
    parallel_for(cands.size(), [&](std::size_t j) {
      cands[j] = candidate_component(c, seed, static_cast<int>(j), l);
      if (!flags.no_pe) {
        LevelStep s = step_level(model, pair.x, l, cands[j], prev);
        dist[j] = metric.distance(s.image, target(pair, l));
        feats[j] = std::move(s.features);
      } else {
        LatentCode z = ref;
        z.components[static_cast<std::size_t>(l - 1)] = cands[j];
        const Tensor final_image = run_rest(model, pair.x, z, l, prev, &feats[j]);
        dist[j] = metric.distance(final_image, target(pair, L));
      }
    });
    out.evaluations += m;

    const std::size_t best = select_nearest_index(dist);
    out.latent.components[static_cast<std::size_t>(l - 1)] = cands[best];
    out.level_distances.push_back(dist[best]);
    out.candidate_distances.push_back(std::move(dist));
    out.selected.push_back(static_cast<int>(best));

    if (l < L) {
      if (!flags.no_ic) {
        chosen_prefix = std::move(feats[best]);
      } else {
        ref_prefix = step_level(model, pair.x, l, ref.components[static_cast<std::size_t>(l - 1)],
                                l > 1 ? &ref_prefix : nullptr)
                         .features;
      }
    }
  }
  if (!flags.any()) {
    out.final_distance = out.level_distances.back();
  } else {
    out.final_distance = metric.distance(run_rest(model, pair.x, out.latent, 1, nullptr, nullptr), target(pair, L));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

double imle_loss_value(const TimModel& model, const std::vector<TrainPair>& data, const std::vector<LatentCode>& codes,
                       const Metric& metric) {
  Tape tape;
  TimGraph<float> graph(model, tape);
  return tape.value(imle_loss(graph, data, codes, metric)).data[0];
}

double accumulate_gradient(TimModel& model, const TrainPair& pair, const LatentCode& z, const Metric& metric) {
  check_pair(model, pair);
  if (z.realized_up_to < model.config().levels) throw ContractError("training code is not fully realized");
  Tape tape;
  TimGraph<float> graph(model, tape, ParamMode::trainable);
  Var loss = pair_loss(graph, pair, z, metric);
  const double value = tape.value(loss).data[0];
  if (!std::isfinite(value)) return value;
  tape.backward(loss);
  return value;
}

// ---------------------------------------------------------------------------
// Training

const char* search_mode_name(SearchMode m) {
  switch (m) {
    case SearchMode::cimle: return "cimle";
    case SearchMode::chimle: return "chimle";
    case SearchMode::regression: return "regression";
  }
  return "?";
}

SearchMode parse_search_mode(const std::string& name) {
  if (name == "cimle") return SearchMode::cimle;
  if (name == "chimle") return SearchMode::chimle;
  if (name == "regression") return SearchMode::regression;
  throw ContractError("unknown search mode '" + name + "' (expected cimle, chimle or regression)");
}

void TrainConfig::validate() const {
  if (batch_size != 1) throw ContractError("batch_size must be 1, got " + std::to_string(batch_size));
  if (epochs < 0) throw ContractError("epochs must be >= 0");
  if (m < 1) throw ContractError("m must be >= 1");
  if (refresh_every < 1) throw ContractError("refresh_every must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ContractError("learning_rate must be positive");
  if (flags.any() && mode != SearchMode::chimle) throw ContractError("ablation flags apply to chimle search only");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"m", m},
          {"mode", search_mode_name(mode)},
          {"ablation", flags.label()},
          {"metric", metric.to_json()},
          {"refresh_every", refresh_every},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("train config must be an object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") v.get_to(c.epochs);
    else if (key == "batch_size") v.get_to(c.batch_size);
    else if (key == "learning_rate") v.get_to(c.learning_rate);
    else if (key == "m") v.get_to(c.m);
    else if (key == "mode") c.mode = parse_search_mode(v.get<std::string>());
    else if (key == "ablation") c.flags = AblationFlags::parse(v.get<std::string>());
    else if (key == "metric") c.metric = Metric::from_json(v);
    else if (key == "refresh_every") v.get_to(c.refresh_every);
    else if (key == "seed") v.get_to(c.seed);
    else throw ContractError("unknown train config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainResult train(TimModel& model, const std::vector<TrainPair>& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (data.empty()) throw ContractError("train: empty dataset");
  for (const auto& p : data) check_pair(model, p);

  const std::vector<Tensor*> params = model.parameter_list();
  AdamState state;
  AdamOptions opts;
  opts.learning_rate = static_cast<float>(config.learning_rate);
  std::vector<LatentCode> codes(data.size());
  TrainResult result;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = substream(config.seed, {kOrderKey, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sum = 0;
    for (std::size_t i : order) {
      if (epoch % config.refresh_every == 0 || codes[i].components.empty()) {
        const std::uint64_t s =
            substream_seed(config.seed, {kSearchKey, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(i)});
        switch (config.mode) {
          case SearchMode::chimle:
            codes[i] = chimle_search(model, data[i], config.m, s, config.metric, config.flags).latent;
            break;
          case SearchMode::cimle:
            codes[i] = cimle_search(model, data[i], config.m, s, config.metric).latent;
            break;
          case SearchMode::regression:
            codes[i] = zero_code(model.config());
            break;
        }
      }
      model.zero_grad();
      const double loss = accumulate_gradient(model, data[i], codes[i], config.metric);
      if (!std::isfinite(loss)) {
        throw NumericalError("non-finite loss " + std::to_string(loss) + " on example " + std::to_string(i) +
                             " in epoch " + std::to_string(epoch + 1));
      }
      adam_step(params, state, opts);
      sum += loss;
    }
    result.loss_trace.push_back(sum / static_cast<double>(data.size()));
    if (on_epoch) on_epoch(epoch + 1, result.loss_trace.back());
  }
  model.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Sample efficiency

std::vector<int> chimle_budget_schedule(int cap) {
  std::vector<int> s;
  for (int m = 1; m <= cap; m = std::max(m + 1, m * 5 / 4)) s.push_back(m);
  return s;
}

std::vector<ReachResult> samples_to_reach(const TimModel& model, const TrainPair& pair, const std::vector<double>& taus,
                                          SearchMode mode, int cap, std::uint64_t seed, const Metric& metric) {
  if (cap < 1) throw ContractError("samples_to_reach: cap must be >= 1");
  for (double t : taus)
    if (std::isnan(t) || t < 0) throw ContractError("samples_to_reach: threshold must be >= 0");
  check_pair(model, pair);
  const int L = model.config().levels;
  std::vector<ReachResult> out(taus.size(), ReachResult{cap, 0, true});
  std::size_t open = taus.size();

  auto settle = [&](double dist, int samples, long evals) {
    for (std::size_t t = 0; t < taus.size(); ++t) {
      if (out[t].censored && dist <= taus[t]) {
        out[t] = {samples, evals, false};
        --open;
      }
    }
  };

  if (mode == SearchMode::cimle) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < cap && open > 0; ++j) {
      const LatentCode z = candidate_code(model.config(), seed, j);
      best = std::min(best, metric.distance(run_rest(model, pair.x, z, 1, nullptr, nullptr), target(pair, L)));
      settle(best, j + 1, static_cast<long>(j + 1) * L);
    }
  } else if (mode == SearchMode::chimle) {
    for (int m : chimle_budget_schedule(cap)) {
      if (open == 0) break;
      const SearchResult r = chimle_search(model, pair, m, seed, metric);
      settle(r.final_distance, m, r.evaluations);
    }
  } else {
    throw ContractError("samples_to_reach: mode must be cimle or chimle");
  }
  for (auto& r : out)
    if (r.censored) r.evaluations = static_cast<long>(cap) * L;
  return out;
}

ReachResult samples_to_reach(const TimModel& model, const TrainPair& pair, double tau, SearchMode mode, int cap,
                             std::uint64_t seed, const Metric& metric) {
  return samples_to_reach(model, pair, std::vector<double>{tau}, mode, cap, seed, metric).front();
}

}  // namespace chimle
