#include "chimle/commands.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <CLI11.hpp>

#include "chimle/diffusion.hpp"
#include "chimle/evaluation.hpp"
#include "chimle/image_io.hpp"
#include "chimle/parallel.hpp"

namespace chimle {
namespace {

constexpr std::uint64_t kQuantileKey = 0x9A4E7ULL;

void ensure_parent(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericalError("non-finite " + what);
}

double parse_threshold(const std::string& s) {
  if (s == "inf" || s == "Inf" || s == "INF") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !(v >= 0)) throw ContractError("invalid threshold '" + s + "'");
  return v;
}

std::string image_ext(const Tensor& t) { return t.shape.at(0) == 1 ? ".pgm" : ".ppm"; }

AblationFlags flags_from_list(const std::vector<std::string>& names) {
  AblationFlags f;
  for (const std::string& n : names) {
    if (n == "ic") f.no_ic = true;
    else if (n == "pe") f.no_pe = true;
    else if (n == "cd") f.no_cd = true;
    else throw ContractError("unknown ablation '" + n + "' (expected ic, pe or cd)");
  }
  return f;
}

struct Dataset {
  TaskSpec spec;
  std::vector<Example> examples;
  std::string source;
};

Dataset dataset_from(const std::string& dir, const TaskSpec& fallback) {
  if (!dir.empty()) {
    LoadedDataset d = load_dataset(dir);
    return {d.spec, std::move(d.examples), dir};
  }
  return {fallback, generate_dataset(fallback), "generated"};
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string task = "toy_colorization";
  int k = 4, n = 16, side = 64;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_gen(const GenArgs& a, std::ostream& out) {
  TaskSpec spec;
  spec.task = parse_task(a.task);
  spec.k = a.k;
  spec.n = a.n;
  spec.side = a.side;
  spec.seed = resolve_seed(a.seed, std::nullopt);
  spec.validate();
  const auto examples = generate_dataset(spec);
  export_dataset(spec, examples, a.out);
  out << "wrote " << examples.size() << " examples to " << a.out << "\n";
}

struct TrainArgs {
  std::string config, dataset, mode, out;
  std::vector<std::string> ablate;
  std::optional<int> epochs, m, refresh_every;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

void cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (!a.mode.empty()) rc.train.mode = parse_search_mode(a.mode);
  if (!a.ablate.empty()) rc.train.flags = flags_from_list(a.ablate);
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.m) rc.train.m = *a.m;
  if (a.refresh_every) rc.train.refresh_every = *a.refresh_every;
  if (a.lr) rc.train.learning_rate = *a.lr;
  rc.train.seed = resolve_seed(a.seed, rc.seed);
  rc.train.validate();
  if (rc.train.flags.any() && rc.train.mode != SearchMode::chimle)
    throw ContractError("--ablate only applies to --mode chimle");

  const Dataset data = dataset_from(a.dataset, rc.task);
  rc.task = data.spec;
  rc.model = fit_model_to_task(rc.model, data.spec);
  const std::vector<TrainPair> pairs = make_pairs(data.examples, rc.model);

  TimModel model = init_model(rc.model, rc.train.seed);
  CsvWriter loss({"epoch", "loss"});
  train(model, pairs, rc.train, [&](int epoch, double l) {
    require_finite(l, "loss at epoch " + std::to_string(epoch));
    loss.row({std::to_string(epoch), format_number(l)});
  });

  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  save_checkpoint(model, dir / "checkpoint.bin");
  loss.save(dir / "loss.csv");
  nlohmann::json run = rc.to_json();
  run["dataset"] = data.source;
  write_text(dir / "run.json", run.dump(2) + "\n");
  out << "trained " << rc.train.epochs << " epochs (" << search_mode_name(rc.train.mode) << ", "
      << rc.train.flags.label() << "); wrote " << dir.string() << "\n";
}

struct BenchArgs {
  std::string checkpoint, dataset, out, metric = "pixel_mse";
  int example = 0, runs = 10, cap = 200, pool = 200;
  std::vector<std::string> thresholds;
  std::vector<double> quantiles{0.5, 0.25, 0.1, 0.05, 0.02};
  std::optional<std::uint64_t> seed;
};

Metric metric_from(const std::string& name) {
  return parse_metric_kind(name) == MetricKind::pixel_mse ? Metric::pixel() : Metric::random_feature();
}

void cmd_bench(const BenchArgs& a, std::ostream& out) {
  const TimModel model = load_checkpoint(a.checkpoint);
  const LoadedDataset data = load_dataset(a.dataset);
  if (a.example < 0 || a.example >= static_cast<int>(data.examples.size()))
    throw ContractError("--example " + std::to_string(a.example) + " outside the dataset");
  const std::vector<Example> one{data.examples[static_cast<std::size_t>(a.example)]};
  const TrainPair pair = make_pairs(one, model.config()).front();
  const Metric metric = metric_from(a.metric);
  const std::uint64_t seed = resolve_seed(a.seed, std::nullopt);

  std::vector<double> taus;
  if (!a.thresholds.empty()) {
    for (const std::string& s : a.thresholds) taus.push_back(parse_threshold(s));
  } else {
    taus = quantile_thresholds(model, pair, a.quantiles, a.pool, substream_seed(seed, {kQuantileKey}), metric);
  }
  const auto rows = efficiency_curve(model, pair, taus, a.runs, a.cap, seed, metric);
  CsvWriter csv({"tau", "mode", "mean_samples", "std_samples", "censored"});
  for (const EfficiencyRow& r : rows) {
    require_finite(r.mean_samples, "mean sample count");
    csv.row({format_number(r.tau), search_mode_name(r.mode), format_number(r.mean_samples), format_number(r.std_samples),
             std::to_string(r.censored)});
  }
  csv.save(a.out);
  out << "wrote " << rows.size() << " rows to " << a.out << "\n";
}

struct EvalArgs {
  std::string checkpoint, dataset, out, sampler = "model";
  bool replay = false;
  int samples_per_input = 16, coverage_samples = 64, ivo_inputs = 0, ivo_steps = 500, ivo_restarts = 5, grid_inputs = 4;
  std::optional<std::uint64_t> seed;
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const LoadedDataset data = load_dataset(a.dataset);
  const std::uint64_t seed = resolve_seed(a.seed, std::nullopt);
  std::optional<TimModel> model;
  std::vector<TrainPair> pairs;
  Sampler sampler;
  if (a.replay) {
    if (!a.checkpoint.empty()) throw ContractError("--replay and --checkpoint are exclusive");
    sampler = replay_sampler(data.examples);
  } else {
    if (a.checkpoint.empty()) throw ContractError("eval needs --checkpoint or --replay");
    model = load_checkpoint(a.checkpoint);
    pairs = make_pairs(data.examples, model->config());
    if (a.sampler == "model") sampler = model_sampler(*model, pairs, seed);
    else if (a.sampler == "regression") sampler = regression_sampler(*model, pairs);
    else throw ContractError("unknown sampler '" + a.sampler + "' (expected model or regression)");
  }

  EvalOptions opts;
  opts.samples_per_input = a.samples_per_input;
  opts.coverage_samples = a.coverage_samples;
  opts.ivo_inputs = model ? a.ivo_inputs : 0;
  opts.ivo.steps = a.ivo_steps;
  opts.ivo.restarts = a.ivo_restarts;
  opts.seed = seed;
  const EvalResult r = evaluate(sampler, model ? &*model : nullptr, data.examples, pairs, opts);

  const MetricReport& m = r.report;
  require_finite(m.fwv, "fwv");
  require_finite(m.f8, "f8");
  require_finite(m.f18, "f18");
  if (!std::isfinite(m.fd))
    throw NumericalError("non-finite fd: the dataset has fewer mode images than feature dimensions");
  require_finite(m.kd, "kd");
  if (opts.ivo_inputs > 0 && !std::isfinite(m.ivo_mean)) throw NumericalError("every IvO restart diverged");

  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", m.to_json().dump(2) + "\n");
  CsvWriter cov({"input", "modes", "covered"});
  for (std::size_t i = 0; i < r.coverage.size(); ++i)
    cov.row({std::to_string(i), std::to_string(data.examples[i].mode_set.size()), std::to_string(r.coverage[i])});
  cov.save(dir / "coverage.csv");
  const std::size_t grids = std::min<std::size_t>(static_cast<std::size_t>(std::max(0, a.grid_inputs)), r.samples.size());
  for (std::size_t i = 0; i < grids; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "samples_%03zu", i);
    const Tensor grid = tile_images(r.samples[i], 8);
    write_pnm(dir / (name + image_ext(grid)), grid);
  }
  out << "fd " << format_number(m.fd) << ", mean coverage " << format_number(r.mean_coverage) << "; wrote "
      << dir.string() << "\n";
}

struct AblateArgs {
  std::string config, dataset, out;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::optional<int> epochs;
  int samples_per_input = 16;
};

void cmd_ablate(const AblateArgs& a, std::ostream& out) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  if (a.epochs) rc.train.epochs = *a.epochs;
  rc.train.validate();
  const Dataset data = dataset_from(a.dataset, rc.task);
  AblationOptions opts;
  opts.model = fit_model_to_task(rc.model, data.spec);
  opts.train = rc.train;
  opts.seeds = a.seeds;
  opts.samples_per_input = a.samples_per_input;
  const auto rows = run_ablation(data.examples, opts, [&](const std::string& v, std::uint64_t s, double fd) {
    out << v << " seed " << s << " fd " << format_number(fd) << "\n";
  });
  std::vector<std::string> header{"variant", "mean_fd"};
  for (std::uint64_t s : a.seeds) header.push_back("fd_seed_" + std::to_string(s));
  CsvWriter csv(header);
  for (const AblationRow& r : rows) {
    require_finite(r.mean_fd, "FD proxy for " + r.variant);
    std::vector<std::string> f{r.variant, format_number(r.mean_fd)};
    for (double v : r.fd) f.push_back(format_number(v));
    csv.row(f);
  }
  csv.save(a.out);
  out << "wrote " << a.out << "\n";
}

struct DiffusionArgs {
  double offset = 3.5, mode_std = 1.0, weight = 0.5;
  std::vector<double> sigma_q;
  int steps = 50, samples = 100000, iterations = 1500;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void cmd_diffusion(const DiffusionArgs& a, std::ostream& out) {
  const MixtureSpec mix = MixtureSpec::two_modes(a.offset, a.mode_std, a.weight);
  std::vector<double> sigmas = a.sigma_q;
  if (sigmas.empty())
    for (double f : {0.1, 0.3, 1.0, 3.0, 5.0}) sigmas.push_back(f * a.mode_std);
  for (double s : sigmas)
    if (!(s > 0)) throw DegenerateForwardError("degenerate forward process: sigma_q must be > 0");
  SweepOptions opts;
  opts.steps = a.steps;
  opts.samples = a.samples;
  opts.fit.iterations = a.iterations;
  const auto rows = mode_forcing_sweep(mix, sigmas, opts, resolve_seed(a.seed, std::nullopt));

  CsvWriter csv({"sigma_q", "elbo", "loglik_est", "bridge_ratio", "mass_1", "mass_2"});
  for (const SweepRow& r : rows) {
    for (double v : {r.elbo, r.loglik_est, r.bridge_ratio, r.mass_1, r.mass_2}) require_finite(v, "sweep value");
    csv.row({format_number(r.sigma_q), format_number(r.elbo), format_number(r.loglik_est), format_number(r.bridge_ratio),
             format_number(r.mass_1), format_number(r.mass_2)});
  }
  csv.save(a.out);

  const double floor_mass = 0.8 * std::min(mix.weights[0], mix.weights[1]);
  out << "self-test bridge ratio " << format_number(rows[0].bridge_ratio) << "\n";
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const SweepRow& r = rows[i];
    out << "sigma_q " << format_number(r.sigma_q) << ": bridge ratio " << format_number(r.bridge_ratio)
        << (r.bridge_ratio > 2 ? " (bridging)" : "") << ", min mode mass " << format_number(std::min(r.mass_1, r.mass_2))
        << (std::min(r.mass_1, r.mass_2) < floor_mass ? " (suppressed)" : "") << "\n";
  }
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) { row(header); }

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) throw ContractError("csv row has the wrong number of fields");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) text_ += ',';
    text_ += csv_field(fields[i]);
  }
  text_ += "\r\n";
}

void CsvWriter::save(const std::filesystem::path& path) const { write_text(path, text_); }

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::optional<std::uint64_t> config) {
  if (flag) return *flag;
  if (config) return *config;
  if (const char* env = std::getenv("CHIMLE_SEED"); env && *env) {
    std::uint64_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto res = std::from_chars(env, end, v);
    if (res.ec != std::errc() || res.ptr != end) throw ContractError("CHIMLE_SEED is not an unsigned integer");
    return v;
  }
  return 0;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "task") c.task = TaskSpec::from_json(v);
    else if (key == "model") c.model = TimConfig::from_json(v);
    else if (key == "train") {
      c.train = TrainConfig::from_json(v);
      if (v.contains("seed")) c.seed = c.train.seed;
    } else throw ContractError("unknown run config key '" + key + "'");
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

nlohmann::json RunConfig::to_json() const {
  return {{"task", task.to_json()}, {"model", model.to_json()}, {"train", train.to_json()}};
}

TimConfig fit_model_to_task(TimConfig model, const TaskSpec& task) {
  model.in_channels = task.input_channels();
  model.out_channels = task.output_channels();
  model.validate();
  if (model.output_side() != task.side)
    throw DimensionError("model output side " + std::to_string(model.output_side()) + " does not match task side " +
                         std::to_string(task.side));
  return model;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"chimle: conditional hierarchical IMLE toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for candidate evaluation (results do not depend on it)")
      ->check(CLI::PositiveNumber);

  std::function<void()> action;

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a toy dataset");
  g->add_option("--task", gen.task, "toy_colorization or toy_superres");
  g->add_option("--k", gen.k, "Modes per input");
  g->add_option("--n", gen.n, "Examples");
  g->add_option("--side", gen.side, "Output side length");
  g->add_option("--seed", gen.seed);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->callback([&] { action = [&] { cmd_gen(gen, out); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Run config JSON");
  t->add_option("--dataset", tr.dataset, "Dataset directory (default: generate from the config task)");
  t->add_option("--mode", tr.mode, "cimle, chimle or regression");
  t->add_option("--ablate", tr.ablate, "Remove ic, pe and/or cd")->delimiter(',');
  t->add_option("--epochs", tr.epochs);
  t->add_option("--m", tr.m, "Samples per level or pool size");
  t->add_option("--refresh-every", tr.refresh_every, "Epochs between latent searches");
  t->add_option("--lr", tr.lr);
  t->add_option("--seed", tr.seed);
  t->add_option("--out", tr.out, "Output directory")->required();
  t->callback([&] { action = [&] { cmd_train(tr, out); }; });

  BenchArgs be;
  auto* b = app.add_subcommand("bench-efficiency", "Samples needed to reach distance thresholds");
  b->add_option("--checkpoint", be.checkpoint)->required();
  b->add_option("--dataset", be.dataset)->required();
  b->add_option("--example", be.example, "Dataset index of the benchmarked input");
  b->add_option("--thresholds", be.thresholds, "Distance thresholds (numbers or inf)")->delimiter(',');
  b->add_option("--quantiles", be.quantiles, "Pool-distance quantiles used when no thresholds are given")
      ->delimiter(',');
  b->add_option("--pool", be.pool, "Pool size for quantile thresholds");
  b->add_option("--runs", be.runs);
  b->add_option("--cap", be.cap, "Sample budget per run");
  b->add_option("--metric", be.metric, "pixel_mse or random_feature");
  b->add_option("--seed", be.seed);
  b->add_option("--out", be.out, "Output CSV")->required();
  b->callback([&] { action = [&] { cmd_bench(be, out); }; });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a model on a dataset");
  e->add_option("--checkpoint", ev.checkpoint);
  e->add_flag("--replay", ev.replay, "Evaluate a sampler that replays the ground-truth modes");
  e->add_option("--sampler", ev.sampler, "model (random latents) or regression (zero latent)");
  e->add_option("--dataset", ev.dataset)->required();
  e->add_option("--samples-per-input", ev.samples_per_input);
  e->add_option("--coverage-samples", ev.coverage_samples);
  e->add_option("--ivo-inputs", ev.ivo_inputs, "Inputs scored by inference via optimization (0 = skip)");
  e->add_option("--ivo-steps", ev.ivo_steps);
  e->add_option("--ivo-restarts", ev.ivo_restarts);
  e->add_option("--grid-inputs", ev.grid_inputs, "Inputs written as sample grids");
  e->add_option("--seed", ev.seed);
  e->add_option("--out", ev.out, "Output directory")->required();
  e->callback([&] { action = [&] { cmd_eval(ev, out); }; });

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Remove IC, PE and CD in turn and compare FD proxies");
  a->add_option("--config", ab.config, "Run config JSON");
  a->add_option("--dataset", ab.dataset, "Dataset directory (default: generate from the config task)");
  a->add_option("--seeds", ab.seeds)->delimiter(',');
  a->add_option("--epochs", ab.epochs);
  a->add_option("--samples-per-input", ab.samples_per_input);
  a->add_option("--out", ab.out, "Output CSV")->required();
  a->callback([&] { action = [&] { cmd_ablate(ab, out); }; });

  DiffusionArgs di;
  auto* d = app.add_subcommand("diffusion-demo", "Mode-forcing sweep on a two-mode Gaussian mixture");
  d->add_option("--offset", di.offset, "Modes at -offset and +offset");
  d->add_option("--mode-std", di.mode_std);
  d->add_option("--weight", di.weight, "Weight of the first mode");
  d->add_option("--sigma-q", di.sigma_q, "Forward noise levels (default 0.1, 0.3, 1, 3, 5 times the mode std)")
      ->delimiter(',');
  d->add_option("--steps", di.steps);
  d->add_option("--samples", di.samples);
  d->add_option("--iterations", di.iterations);
  d->add_option("--seed", di.seed);
  d->add_option("--out", di.out, "Output CSV")->required();
  d->callback([&] { action = [&] { cmd_diffusion(di, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << one_line(ex.what()) << "\n";
    return 2;
  }
  try {
    set_worker_threads(threads);
    action();
  } catch (const std::exception& ex) {
    err << "error: " << one_line(ex.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace chimle
