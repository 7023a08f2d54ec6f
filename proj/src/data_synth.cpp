#include "chimle/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "chimle/image_io.hpp"

namespace chimle {

const char* task_name(TaskKind t) { return t == TaskKind::toy_colorization ? "toy_colorization" : "toy_superres"; }

TaskKind parse_task(const std::string& name) {
  if (name == "toy_colorization" || name == "colorization") return TaskKind::toy_colorization;
  if (name == "toy_superres" || name == "superres") return TaskKind::toy_superres;
  throw ContractError("unknown task '" + name + "' (expected toy_colorization or toy_superres)");
}

void TaskSpec::validate() const {
  if (k < 2) throw ContractError("multimodal task requires K >= 2, got " + std::to_string(k));
  if (n < 1) throw ContractError("dataset size must be >= 1");
  if (task == TaskKind::toy_superres) {
    if (side < kSuperresFactor || side % kSuperresFactor != 0)
      throw ContractError("toy_superres side must be a positive multiple of 16");
  } else if (side < 8) {
    throw ContractError("toy_colorization side must be >= 8");
  }
}

nlohmann::json TaskSpec::to_json() const {
  return {{"task", task_name(task)}, {"side", side}, {"k", k}, {"n", n}, {"seed", seed}};
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("task spec must be an object");
  for (const auto& [key, _] : j.items())
    if (key != "task" && key != "side" && key != "k" && key != "n" && key != "seed")
      throw ContractError("unknown task key '" + key + "'");
  TaskSpec s;
  if (j.contains("task")) s.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("side")) j.at("side").get_to(s.side);
  if (j.contains("k")) j.at("k").get_to(s.k);
  if (j.contains("n")) j.at("n").get_to(s.n);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Image helpers

Tensor luminance(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.shape[0] != 3) throw DimensionError("luminance: expected [3,h,w], got " + shape_str(rgb.shape));
  const std::size_t hw = rgb.shape[1] * rgb.shape[2];
  Tensor out({1, rgb.shape[1], rgb.shape[2]});
  for (std::size_t i = 0; i < hw; ++i)
    out.data[i] = static_cast<float>(0.299 * rgb.data[i] + 0.587 * rgb.data[hw + i] + 0.114 * rgb.data[2 * hw + i]);
  return out;
}

Tensor box_downsample(const Tensor& chw, int factor) {
  if (factor < 1 || (factor & (factor - 1)) != 0) throw ContractError("box_downsample: factor must be a power of two");
  Tensor cur = chw;
  for (int f = factor; f > 1; f /= 2) {
    const std::size_t c = cur.shape[0], h = cur.shape[1], w = cur.shape[2];
    if (h % 2 || w % 2) throw DimensionError("box_downsample: side not divisible, shape " + shape_str(cur.shape));
    Tensor next({c, h / 2, w / 2});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h / 2; ++y)
        for (std::size_t x = 0; x < w / 2; ++x) {
          const float* r0 = cur.data.data() + (ch * h + 2 * y) * w + 2 * x;
          const float* r1 = r0 + w;
          next.data[(ch * (h / 2) + y) * (w / 2) + x] = (r0[0] + r0[1] + r1[0] + r1[1]) * 0.25f;
        }
    cur = std::move(next);
  }
  return cur;
}

Tensor nearest_upsample(const Tensor& chw, int factor) {
  if (factor < 1) throw ContractError("nearest_upsample: factor must be >= 1");
  const std::size_t c = chw.shape.at(0), h = chw.shape.at(1), w = chw.shape.at(2), f = static_cast<std::size_t>(factor);
  Tensor out({c, h * f, w * f});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h * f; ++y)
      for (std::size_t x = 0; x < w * f; ++x) out.data[(ch * h * f + y) * w * f + x] = chw.data[(ch * h + y / f) * w + x / f];
  return out;
}

ImagePyramid image_pyramid(const Tensor& full, int levels) {
  if (levels < 0) throw ContractError("image_pyramid: negative level count");
  if (full.rank() != 3) throw DimensionError("image_pyramid: expected [c,h,w], got " + shape_str(full.shape));
  const std::size_t step = std::size_t{1} << levels;
  if (levels > 0 && (full.shape[1] % step || full.shape[2] % step || full.shape[1] / step < 1)) {
    throw DimensionError("image_pyramid: side " + std::to_string(full.shape[1]) + " not divisible by 2^" +
                         std::to_string(levels));
  }
  ImagePyramid p;
  p.levels.assign(static_cast<std::size_t>(std::max(levels, 1)), Tensor{});
  p.levels.back() = full;
  for (int l = levels - 1; l >= 1; --l)
    p.levels[static_cast<std::size_t>(l - 1)] = box_downsample(p.levels[static_cast<std::size_t>(l)], 2);
  return p;
}

Pyramids build_pyramids(const Example& example, int levels, int base) {
  const std::size_t side = example.y.shape.at(1);
  if (base < 1 || levels < 0 || static_cast<std::size_t>(base) << levels != side) {
    throw DimensionError("build_pyramids: side " + std::to_string(side) + " is not base " + std::to_string(base) +
                         " * 2^" + std::to_string(levels));
  }
  const std::size_t xs = example.x.shape.at(1);
  if (side % xs) throw DimensionError("build_pyramids: conditioning side does not divide output side");
  const Tensor x_full = nearest_upsample(example.x, static_cast<int>(side / xs));
  return {image_pyramid(x_full, levels), image_pyramid(example.y, levels)};
}

// ---------------------------------------------------------------------------
// Generators

namespace {

constexpr double kLuma[3] = {0.299, 0.587, 0.114};

// Two orthonormal colour directions with zero luma.
void chroma_basis(double u[3], double v[3]) {
  double a[3] = {kLuma[1], -kLuma[0], 0.0};
  double b[3] = {kLuma[1] * a[2] - kLuma[2] * a[1], kLuma[2] * a[0] - kLuma[0] * a[2], kLuma[0] * a[1] - kLuma[1] * a[0]};
  const double na = std::sqrt(a[0] * a[0] + a[1] * a[1]);
  const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  for (int i = 0; i < 3; ++i) {
    u[i] = a[i] / na;
    v[i] = b[i] / nb;
  }
}

void check_separation(int k, double pair_mse, const char* task) {
  if (pair_mse < 0.05) {
    throw GenerationError(std::string(task) + ": K=" + std::to_string(k) +
                          " modes cannot be separated by MSE >= 0.05 (closest pair " + std::to_string(pair_mse) + ")");
  }
}

Example colorization(const TaskSpec& spec, int index, Rng& rng) {
  // Adjacent palettes differ by a chroma chord of 2*rho*sin(pi/K) at every pixel.
  const double s = std::sin(std::numbers::pi / spec.k);
  check_separation(spec.k, 4 * kChromaRadius * kChromaRadius * s * s / 3, "toy_colorization");

  const auto side = static_cast<std::size_t>(spec.side);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int shapes = 2 + static_cast<int>(rng() % 2);
  std::vector<double> grays;
  for (int g = 0; g <= 8; ++g) grays.push_back(0.3 + 0.05 * g);
  std::shuffle(grays.begin(), grays.end(), rng);
  grays.resize(static_cast<std::size_t>(shapes + 1));

  std::vector<int> region(side * side, 0);
  for (int r = 1; r <= shapes; ++r) {
    const double cx = unit(rng) * spec.side, cy = unit(rng) * spec.side;
    const double size = (0.15 + 0.2 * unit(rng)) * spec.side;
    const bool disc = unit(rng) < 0.5;
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        const double dx = (double(x) + 0.5 - cx), dy = (double(y) + 0.5 - cy);
        const bool inside = disc ? dx * dx + dy * dy <= size * size : std::abs(dx) <= size && std::abs(dy) <= 0.6 * size;
        if (inside) region[y * side + x] = r;
      }
  }
  // The palette hue is a fixed function of the grey level, so one global mode
  // index k fully describes every valid colouring.
  std::vector<double> offsets;
  for (int r = 0; r <= shapes; ++r) offsets.push_back(std::numbers::pi * grays[static_cast<std::size_t>(r)]);

  double u[3], v[3];
  chroma_basis(u, v);
  Example ex;
  ex.id = index;
  ex.x = Tensor({1, side, side});
  for (std::size_t i = 0; i < side * side; ++i) ex.x.data[i] = static_cast<float>(grays[static_cast<std::size_t>(region[i])]);
  for (int k = 0; k < spec.k; ++k) {
    Tensor y({3, side, side});
    for (std::size_t i = 0; i < side * side; ++i) {
      const auto r = static_cast<std::size_t>(region[i]);
      const double theta = 2 * std::numbers::pi * k / spec.k + offsets[r];
      for (int c = 0; c < 3; ++c) {
        const double val = grays[r] + kChromaRadius * (std::cos(theta) * u[c] + std::sin(theta) * v[c]);
        y.data[static_cast<std::size_t>(c) * side * side + i] = static_cast<float>(val);
      }
    }
    ex.mode_set.push_back(std::move(y));
  }
  return ex;
}

Example superres(const TaskSpec& spec, int index, Rng& rng) {
  // Phase-shifted copies of one sinusoid: adjacent phases differ by 2*pi/K.
  const double s = std::sin(std::numbers::pi / spec.k);
  check_separation(spec.k, 2 * kTextureAmplitude * kTextureAmplitude * s * s, "toy_superres");

  const auto side = static_cast<std::size_t>(spec.side);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double f1 = 1 + static_cast<double>(rng() % 2), f2 = 1 + static_cast<double>(rng() % 2);
  const double p1 = 2 * std::numbers::pi * unit(rng), p2 = 2 * std::numbers::pi * unit(rng);
  const int direction = static_cast<int>(rng() % 3);
  const double phase = 2 * std::numbers::pi * unit(rng);

  Example ex;
  ex.id = index;
  for (int k = 0; k < spec.k; ++k) {
    Tensor y({1, side, side});
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        const double base = 0.5 + 0.1 * std::sin(2 * std::numbers::pi * f1 * double(i) / spec.side + p1) +
                            0.1 * std::sin(2 * std::numbers::pi * f2 * double(j) / spec.side + p2);
        const double t = direction == 0 ? double(i) : direction == 1 ? double(j) : double(i + j);
        const double hf = kTextureAmplitude *
                          std::sin(2 * std::numbers::pi * t / kTexturePeriod + phase + 2 * std::numbers::pi * k / spec.k);
        y.data[i * side + j] = static_cast<float>(base + hf);
      }
    ex.mode_set.push_back(std::move(y));
  }
  // Conditioning image: exact 16x16 block means of the (shared) low-frequency part.
  const std::size_t xs = side / kSuperresFactor;
  ex.x = Tensor({1, xs, xs});
  for (std::size_t bi = 0; bi < xs; ++bi)
    for (std::size_t bj = 0; bj < xs; ++bj) {
      double acc = 0;
      for (std::size_t i = 0; i < kSuperresFactor; ++i)
        for (std::size_t j = 0; j < kSuperresFactor; ++j)
          acc += ex.mode_set[0].data[(bi * kSuperresFactor + i) * side + bj * kSuperresFactor + j];
      ex.x.data[bi * xs + bj] = static_cast<float>(acc / (kSuperresFactor * kSuperresFactor));
    }
  return ex;
}

}  // namespace

Example generate_example(const TaskSpec& spec, int index) {
  spec.validate();
  Rng rng = substream(spec.seed, {static_cast<std::uint64_t>(spec.task), static_cast<std::uint64_t>(index)});
  Example ex = spec.task == TaskKind::toy_colorization ? colorization(spec, index, rng) : superres(spec, index, rng);
  ex.mode_id = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.k));
  ex.y = ex.mode_set[static_cast<std::size_t>(ex.mode_id)];
  return ex;
}

std::vector<Example> generate_dataset(const TaskSpec& spec) {
  spec.validate();
  std::vector<Example> out;
  for (int i = 0; i < spec.n; ++i) out.push_back(generate_example(spec, i));
  return out;
}

// ---------------------------------------------------------------------------
// Coverage

namespace {

double mse_of(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw DimensionError("mode match: shape " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += double(a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return acc / static_cast<double>(a.numel());
}

}  // namespace

double min_inter_mode_mse(const Example& example) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < example.mode_set.size(); ++a)
    for (std::size_t b = a + 1; b < example.mode_set.size(); ++b)
      best = std::min(best, mse_of(example.mode_set[a], example.mode_set[b]));
  return best;
}

double calibrated_threshold(const Example& example) { return min_inter_mode_mse(example) / 4.0; }

int mode_coverage(const ImageSampler& sampler, const Example& example, int n_samples, double match_threshold) {
  std::vector<bool> covered(example.mode_set.size(), false);
  for (int i = 0; i < n_samples; ++i) {
    const Tensor s = sampler(i);
    for (std::size_t k = 0; k < covered.size(); ++k)
      if (!covered[k] && mse_of(s, example.mode_set[k]) <= match_threshold) covered[k] = true;
  }
  return static_cast<int>(std::count(covered.begin(), covered.end(), true));
}

int mode_coverage(const TimModel& model, const Example& example, int n_samples, double match_threshold,
                  std::uint64_t seed) {
  const TimConfig& c = model.config();
  const Pyramids p = build_pyramids(example, c.levels, c.base_resolution);
  return mode_coverage(
      [&](int i) {
        Rng rng = substream(seed, {static_cast<std::uint64_t>(example.id), static_cast<std::uint64_t>(i)});
        return forward_full(model, p.x, draw_latent(c, rng)).back();
      },
      example, n_samples, match_threshold);
}

// ---------------------------------------------------------------------------
// Export

namespace {

std::string stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ex%05d", id);
  return buf;
}

const char* ext(const Tensor& t) { return t.shape[0] == 1 ? ".pgm" : ".ppm"; }

}  // namespace

void export_dataset(const TaskSpec& spec, const std::vector<Example>& examples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json list = nlohmann::json::array();
  for (const Example& ex : examples) {
    const std::string s = stem(ex.id);
    const std::string xf = s + "_x" + ext(ex.x), yf = s + "_y" + ext(ex.y);
    write_pnm(dir / xf, ex.x);
    write_pnm(dir / yf, ex.y);
    nlohmann::json modes = nlohmann::json::array();
    for (std::size_t k = 0; k < ex.mode_set.size(); ++k) {
      const std::string mf = s + "_mode" + std::to_string(k) + ext(ex.mode_set[k]);
      write_pnm(dir / mf, ex.mode_set[k]);
      modes.push_back(mf);
    }
    list.push_back({{"id", ex.id}, {"mode_id", ex.mode_id}, {"x", xf}, {"y", yf}, {"modes", modes}});
  }
  const nlohmann::json manifest{{"spec", spec.to_json()}, {"examples", list}};
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw ImageIoError("cannot write manifest in " + dir.string());
  f << manifest.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw ImageIoError("no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ImageIoError("malformed manifest: " + std::string(e.what()));
  }
  LoadedDataset out;
  out.spec = TaskSpec::from_json(m.at("spec"));
  for (const auto& e : m.at("examples")) {
    Example ex;
    ex.id = e.at("id").get<int>();
    ex.mode_id = e.at("mode_id").get<int>();
    ex.x = read_pnm(dir / e.at("x").get<std::string>());
    ex.y = read_pnm(dir / e.at("y").get<std::string>());
    for (const auto& mf : e.at("modes")) ex.mode_set.push_back(read_pnm(dir / mf.get<std::string>()));
    out.examples.push_back(std::move(ex));
  }
  return out;
}

}  // namespace chimle
