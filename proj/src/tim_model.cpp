#include "chimle/tim_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace chimle {

namespace {

std::string level_prefix(int level) { return "level" + std::to_string(level); }

std::string rrdb_prefix(int level, int block) { return level_prefix(level) + ".rrdb" + std::to_string(block); }

std::string dense_conv_prefix(int level, int block, int dense_index, int conv) {
  return rrdb_prefix(level, block) + ".db" + std::to_string(dense_index) + ".conv" + std::to_string(conv);
}

std::string map_prefix(int level, int layer) { return level_prefix(level) + ".map" + std::to_string(layer); }

int level_input_channels(const TimConfig& c, int level) {
  const int prev = level > 1 ? c.channels_per_level[static_cast<std::size_t>(level - 2)] : 0;
  return prev + c.in_channels + c.local_latent_channels;
}

int channels_at(const TimConfig& c, int level) { return c.channels_per_level.at(static_cast<std::size_t>(level - 1)); }

constexpr int kDenseBlocksPerRrdb = 3;

}  // namespace

// ---------------------------------------------------------------------------
// TimConfig

void TimConfig::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("invalid TimConfig: " + m); };
  if (levels < 1) fail("levels must be >= 1");
  if (base_resolution < 1) fail("base_resolution must be >= 1");
  if (static_cast<int>(channels_per_level.size()) != levels) fail("channels_per_level needs one entry per level");
  for (int c : channels_per_level)
    if (c < 1) fail("channel counts must be positive");
  if (rrdb_per_level < 1) fail("rrdb_per_level must be >= 1");
  if (dense_layers_per_block < 1) fail("dense_layers_per_block must be >= 1");
  if (growth_channels < 1) fail("growth_channels must be >= 1");
  if (!(residual_scale > 0.0 && residual_scale <= 1.0)) fail("residual_scale must lie in (0, 1]");
  if (mapping_depth < 1) fail("mapping_depth must be >= 1");
  if (mapping_hidden < 1) fail("mapping_hidden must be >= 1");
  if (local_latent_channels < 0) fail("local_latent_channels must be >= 0");
  if (global_latent_dim < 1) fail("global_latent_dim must be >= 1");
  if (in_channels < 1 || out_channels < 1) fail("image channel counts must be positive");
}

nlohmann::json TimConfig::to_json() const {
  return nlohmann::json{{"levels", levels},
                        {"base_resolution", base_resolution},
                        {"channels_per_level", channels_per_level},
                        {"rrdb_per_level", rrdb_per_level},
                        {"dense_layers_per_block", dense_layers_per_block},
                        {"growth_channels", growth_channels},
                        {"residual_scale", residual_scale},
                        {"mapping_depth", mapping_depth},
                        {"mapping_hidden", mapping_hidden},
                        {"local_latent_channels", local_latent_channels},
                        {"global_latent_dim", global_latent_dim},
                        {"in_channels", in_channels},
                        {"out_channels", out_channels}};
}

TimConfig TimConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("TimConfig must be a JSON object");
  TimConfig c;
  const std::set<std::string> known{"levels",          "base_resolution",       "channels_per_level",
                                    "rrdb_per_level",  "dense_layers_per_block", "growth_channels",
                                    "residual_scale",  "mapping_depth",          "mapping_hidden",
                                    "local_latent_channels", "global_latent_dim", "in_channels",
                                    "out_channels"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ContractError("unknown model config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("levels", c.levels);
  get("base_resolution", c.base_resolution);
  get("channels_per_level", c.channels_per_level);
  get("rrdb_per_level", c.rrdb_per_level);
  get("dense_layers_per_block", c.dense_layers_per_block);
  get("growth_channels", c.growth_channels);
  get("residual_scale", c.residual_scale);
  get("mapping_depth", c.mapping_depth);
  get("mapping_hidden", c.mapping_hidden);
  get("local_latent_channels", c.local_latent_channels);
  get("global_latent_dim", c.global_latent_dim);
  get("in_channels", c.in_channels);
  get("out_channels", c.out_channels);
  c.validate();
  return c;
}

std::vector<std::size_t> partition_spec(const TimConfig& config) {
  config.validate();
  std::vector<std::size_t> k;
  for (int l = 1; l <= config.levels; ++l) {
    const auto r = static_cast<std::size_t>(config.resolution(l));
    k.push_back(static_cast<std::size_t>(config.local_latent_channels) * r * r +
                static_cast<std::size_t>(config.global_latent_dim));
  }
  return k;
}

std::size_t latent_dimension(const TimConfig& config) {
  std::size_t n = 0;
  for (std::size_t k : partition_spec(config)) n += k;
  return n;
}

// ---------------------------------------------------------------------------
// Latents

std::size_t LatentCode::dimension() const {
  std::size_t n = 0;
  for (const auto& c : components) n += c.local.numel() + c.global.numel();
  return n;
}

std::vector<float> LatentCode::flatten() const {
  std::vector<float> out;
  out.reserve(dimension());
  for (const auto& c : components) {
    out.insert(out.end(), c.local.data.begin(), c.local.data.end());
    out.insert(out.end(), c.global.data.begin(), c.global.data.end());
  }
  return out;
}

bool LatentCode::operator==(const LatentCode& other) const {
  if (realized_up_to != other.realized_up_to || components.size() != other.components.size()) return false;
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (!components[i].local.same_values(other.components[i].local)) return false;
    if (!components[i].global.same_values(other.components[i].global)) return false;
  }
  return true;
}

LatentComponent draw_component(const TimConfig& config, int level, Rng& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const auto r = static_cast<std::size_t>(config.resolution(level));
  LatentComponent c{Tensor(Shape{static_cast<std::size_t>(config.local_latent_channels), r, r}),
                    Tensor(Shape{static_cast<std::size_t>(config.global_latent_dim)})};
  for (float& v : c.local.data) v = normal(rng);
  for (float& v : c.global.data) v = normal(rng);
  return c;
}

LatentCode draw_latent(const TimConfig& config, Rng& rng) {
  LatentCode z;
  for (int l = 1; l <= config.levels; ++l) z.components.push_back(draw_component(config, l, rng));
  z.realized_up_to = config.levels;
  return z;
}

// ---------------------------------------------------------------------------
// TimModel

TimModel::TimModel(TimConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  const auto k3 = std::size_t{3};
  for (int l = 1; l <= c.levels; ++l) {
    const auto ch = static_cast<std::size_t>(channels_at(c, l));
    const auto cin = static_cast<std::size_t>(level_input_channels(c, l));
    const auto growth = static_cast<std::size_t>(c.growth_channels);
    const std::string lp = level_prefix(l);
    declare(lp + ".in.v", {ch, cin, k3, k3});
    declare(lp + ".in.g", {ch});
    declare(lp + ".in.b", {ch});
    for (int r = 0; r < c.rrdb_per_level; ++r) {
      for (int d = 0; d < kDenseBlocksPerRrdb; ++d) {
        for (int i = 0; i < c.dense_layers_per_block; ++i) {
          const bool last = i == c.dense_layers_per_block - 1;
          const std::string p = dense_conv_prefix(l, r, d, i);
          declare(p + ".v", {last ? ch : growth, ch + static_cast<std::size_t>(i) * growth, k3, k3});
          declare(p + ".g", {last ? ch : growth});
        }
      }
    }
    std::size_t width = static_cast<std::size_t>(c.global_latent_dim);
    for (int i = 0; i < c.mapping_depth; ++i) {
      const bool last = i == c.mapping_depth - 1;
      const std::size_t out = last ? 2 * ch * static_cast<std::size_t>(c.rrdb_per_level)
                                   : static_cast<std::size_t>(c.mapping_hidden);
      declare(map_prefix(l, i) + ".w", {width, out});
      declare(map_prefix(l, i) + ".b", {out});
      width = out;
    }
    declare(lp + ".head.v", {static_cast<std::size_t>(c.out_channels), ch, k3, k3});
    declare(lp + ".head.g", {static_cast<std::size_t>(c.out_channels)});
    declare(lp + ".head.b", {static_cast<std::size_t>(c.out_channels)});
  }
}

void TimModel::declare(const std::string& name, Shape shape) {
  auto [it, inserted] = params_.emplace(name, Tensor(std::move(shape)));
  if (!inserted) throw ContractError("duplicate parameter name " + name);
  it->second.requires_grad = true;
  order_.push_back(name);
}

Tensor& TimModel::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

const Tensor& TimModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

std::vector<Tensor*> TimModel::parameter_list() {
  std::vector<Tensor*> out;
  for (auto& [_, t] : params_) out.push_back(&t);
  return out;
}

void TimModel::zero_grad() {
  for (auto& [_, t] : params_) t.grad.clear();
}

void TimModel::set_requires_grad(bool on) {
  for (auto& [_, t] : params_) t.requires_grad = on;
}

bool TimModel::same_parameters(const TimModel& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (const auto& [name, t] : params_) {
    auto it = other.params_.find(name);
    if (it == other.params_.end() || !t.same_values(it->second)) return false;
  }
  return true;
}

TimModel init_model(const TimConfig& config, std::uint64_t seed) {
  TimModel model(config);
  Rng rng(seed);
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const std::string& name : model.declaration_order()) {
    Tensor& p = model.param(name);
    if (ends_with(name, ".v")) {
      const std::size_t rows = p.shape[0];
      const std::size_t fan_in = p.numel() / rows;
      const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
      std::uniform_real_distribution<float> u(-bound, bound);
      for (float& v : p.data) v = u(rng);
      // Gain fixes the effective kernel at scale * v.
      const bool small = name.find(".rrdb") != std::string::npos || name.find(".head") != std::string::npos;
      const float scale = small ? 0.1f : 1.0f;
      Tensor& g = model.param(name.substr(0, name.size() - 2) + ".g");
      for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0;
        for (std::size_t i = 0; i < fan_in; ++i) ss += double(p.data[r * fan_in + i]) * p.data[r * fan_in + i];
        g.data[r] = scale * static_cast<float>(std::sqrt(ss));
      }
    } else if (ends_with(name, ".w")) {
      const std::size_t fan_in = p.shape[0];
      const bool last = name.find(".map" + std::to_string(config.mapping_depth - 1) + ".") != std::string::npos;
      const float bound = (last ? 0.1f : 1.0f) * std::sqrt(6.0f / static_cast<float>(fan_in));
      std::uniform_real_distribution<float> u(-bound, bound);
      for (float& v : p.data) v = u(rng);
    }
    // Gains are set alongside their directions; biases stay zero.
  }
  return model;
}

// ---------------------------------------------------------------------------
// TimGraph

template <typename T>
TimGraph<T>::TimGraph(const TimModel& model, BasicTape<T>& tape, ParamMode mode)
    : model_(model), tape_(tape), mode_(mode) {
  if (mode == ParamMode::trainable) throw ContractError("trainable TimGraph needs a mutable model");
}

template <typename T>
TimGraph<T>::TimGraph(TimModel& model, BasicTape<T>& tape, ParamMode mode)
    : model_(model), mutable_model_(&model), tape_(tape), mode_(mode) {}

template <typename T>
Var TimGraph<T>::param(const std::string& name) {
  auto it = cache_.find(name);
  if (it != cache_.end()) return it->second;
  const Tensor& p = model_.param(name);
  BasicTensor<T> value = p.template cast<T>();
  Var v;
  switch (mode_) {
    case ParamMode::frozen:
      v = tape_.constant(std::move(value));
      break;
    case ParamMode::tracked:
      v = tape_.variable(std::move(value));
      break;
    case ParamMode::trainable: {
      Tensor* target = &mutable_model_->param(name);
      v = tape_.leaf(std::move(value), [target](std::span<const T> g) {
        if (target->grad.size() != target->numel()) target->grad.assign(target->numel(), 0.0f);
        for (std::size_t i = 0; i < g.size(); ++i) target->grad[i] += static_cast<float>(g[i]);
      });
      break;
    }
  }
  cache_.emplace(name, v);
  return v;
}

template <typename T>
Var TimGraph<T>::kernel(const std::string& prefix) {
  const std::string key = prefix + "#w";
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  Var w = weight_norm(tape_, param(prefix + ".v"), param(prefix + ".g"));
  cache_.emplace(key, w);
  return w;
}

template <typename T>
Var TimGraph<T>::dense_block(Var features, int level, int block, int dense_index, double beta) {
  const TimConfig& c = model_.config();
  std::vector<Var> parts{features};
  Var last;
  for (int i = 0; i < c.dense_layers_per_block; ++i) {
    Var in = concat_channels(tape_, parts);
    Var out = conv2d_same(tape_, in, kernel(dense_conv_prefix(level, block, dense_index, i)));
    if (i == c.dense_layers_per_block - 1) {
      last = out;
    } else {
      parts.push_back(leaky_relu(tape_, out));
    }
  }
  return scaled_residual(tape_, features, last, beta);
}

template <typename T>
Var TimGraph<T>::rrdb_block(Var features, int level, int block, double beta) {
  Var h = features;
  for (int d = 0; d < kDenseBlocksPerRrdb; ++d) h = dense_block(h, level, block, d, beta);
  return scaled_residual(tape_, features, h, beta);
}

template <typename T>
std::vector<typename TimGraph<T>::Modulation> TimGraph<T>::mapping_forward(int level, Var global) {
  const TimConfig& c = model_.config();
  Var h = global;
  for (int i = 0; i < c.mapping_depth; ++i) {
    h = dense(tape_, h, param(map_prefix(level, i) + ".w"), param(map_prefix(level, i) + ".b"));
    if (i + 1 < c.mapping_depth) h = leaky_relu(tape_, h);
  }
  const auto ch = static_cast<std::size_t>(channels_at(c, level));
  std::vector<Modulation> mods;
  for (int r = 0; r < c.rrdb_per_level; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * 2 * ch;
    // The +1 makes a zero mapping output an identity modulation.
    Var scale = affine_scalar(tape_, slice_columns(tape_, h, base, base + ch), 1.0, 1.0);
    Var offset = slice_columns(tape_, h, base + ch, base + 2 * ch);
    mods.push_back({scale, offset});
  }
  return mods;
}

template <typename T>
typename TimGraph<T>::LevelResult TimGraph<T>::run_level(int level, Var x, Var local, Var global,
                                                         std::optional<Var> prev_features) {
  const TimConfig& c = model_.config();
  if (level < 1 || level > c.levels) throw ContractError("level " + std::to_string(level) + " out of range");
  if ((level > 1) != prev_features.has_value()) {
    throw ContractError("level " + std::to_string(level) + (level > 1 ? " needs" : " takes no") +
                        " previous-module features");
  }
  std::vector<Var> parts;
  if (prev_features) parts.push_back(upsample_nearest2x(tape_, *prev_features));
  parts.push_back(x);
  if (c.local_latent_channels > 0) parts.push_back(local);
  Var in = concat_channels(tape_, parts);

  const std::string lp = level_prefix(level);
  const Var h0 = add_channel_bias(tape_, conv2d_same(tape_, in, kernel(lp + ".in")), param(lp + ".in.b"));
  const auto mods = mapping_forward(level, global);
  Var h = h0;
  for (int r = 0; r < c.rrdb_per_level; ++r) {
    h = rrdb_block(h, level, r, c.residual_scale);
    h = adain(tape_, h, mods[static_cast<std::size_t>(r)].scale, mods[static_cast<std::size_t>(r)].offset);
  }
  // Long skip around the trunk; instance normalization alone would drop
  // the absolute intensity of x.
  h = add(tape_, h, h0);
  Var image = add_channel_bias(tape_, conv2d_same(tape_, h, kernel(lp + ".head")), param(lp + ".head.b"));
  return {h, image};
}

template <typename T>
Var TimGraph<T>::constant_image(const Tensor& chw) {
  return tape_.constant(with_batch(chw).template cast<T>());
}

template <typename T>
Var TimGraph<T>::constant_component_local(const LatentComponent& c) {
  return tape_.constant(with_batch(c.local).template cast<T>());
}

template <typename T>
Var TimGraph<T>::constant_component_global(const LatentComponent& c) {
  return tape_.constant(with_batch(c.global).template cast<T>());
}

template class TimGraph<float>;
template class TimGraph<double>;

// ---------------------------------------------------------------------------
// Forward helpers

Tensor with_batch(const Tensor& t) {
  Shape s{1};
  s.insert(s.end(), t.shape.begin(), t.shape.end());
  return Tensor(std::move(s), t.data);
}

Tensor without_batch(const Tensor& t) {
  if (t.shape.empty() || t.shape[0] != 1) throw DimensionError("expected batch of 1, got " + shape_str(t.shape));
  return Tensor(Shape(t.shape.begin() + 1, t.shape.end()), t.data);
}

void check_pyramid(const TimConfig& config, const ImagePyramid& pyramid, int channels, int up_to_level,
                   const char* what) {
  if (static_cast<int>(pyramid.levels.size()) < up_to_level) {
    throw ContractError(std::string(what) + " pyramid has " + std::to_string(pyramid.levels.size()) +
                        " levels, need " + std::to_string(up_to_level));
  }
  for (int l = 1; l <= up_to_level; ++l) {
    const auto r = static_cast<std::size_t>(config.resolution(l));
    const Shape expect{static_cast<std::size_t>(channels), r, r};
    if (pyramid.level(l).shape != expect) {
      throw DimensionError(std::string(what) + " pyramid level " + std::to_string(l) + " has shape " +
                           shape_str(pyramid.level(l).shape) + ", expected " + shape_str(expect));
    }
  }
}

LevelStep step_level(const TimModel& model, const ImagePyramid& x, int level, const LatentComponent& component,
                     const Tensor* prev_features) {
  Tape tape;
  TimGraph<float> graph(model, tape);
  std::optional<Var> prev;
  if (prev_features) prev = tape.constant(*prev_features);
  auto out = graph.run_level(level, graph.constant_image(x.level(level)), graph.constant_component_local(component),
                             graph.constant_component_global(component), prev);
  return {tape.value(out.features), without_batch(tape.value(out.image))};
}

Tensor forward_partial(const TimModel& model, const ImagePyramid& x, const LatentCode& z, int level) {
  const TimConfig& c = model.config();
  if (level < 1 || level > c.levels) {
    throw ContractError("forward_partial: level " + std::to_string(level) + " outside [1," +
                        std::to_string(c.levels) + "]");
  }
  if (z.realized_up_to < level || static_cast<int>(z.components.size()) < level) {
    throw ContractError("forward_partial: latent realized up to " + std::to_string(z.realized_up_to) +
                        " but level " + std::to_string(level) + " was requested");
  }
  check_pyramid(c, x, c.in_channels, level, "input");
  Tape tape;
  TimGraph<float> graph(model, tape);
  std::optional<Var> prev;
  Var image;
  for (int l = 1; l <= level; ++l) {
    const LatentComponent& comp = z.components[static_cast<std::size_t>(l - 1)];
    auto out = graph.run_level(l, graph.constant_image(x.level(l)), graph.constant_component_local(comp),
                               graph.constant_component_global(comp), prev);
    prev = out.features;
    image = out.image;
  }
  return without_batch(tape.value(image));
}

std::vector<Tensor> forward_full(const TimModel& model, const ImagePyramid& x, const LatentCode& z) {
  const TimConfig& c = model.config();
  if (z.realized_up_to < c.levels) throw ContractError("forward_full: latent code is not fully realized");
  check_pyramid(c, x, c.in_channels, c.levels, "input");
  Tape tape;
  TimGraph<float> graph(model, tape);
  std::optional<Var> prev;
  std::vector<Tensor> outs;
  for (int l = 1; l <= c.levels; ++l) {
    const LatentComponent& comp = z.components[static_cast<std::size_t>(l - 1)];
    auto out = graph.run_level(l, graph.constant_image(x.level(l)), graph.constant_component_local(comp),
                               graph.constant_component_global(comp), prev);
    prev = out.features;
    outs.push_back(without_batch(tape.value(out.image)));
  }
  return outs;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'T', 'I', 'M', 'C'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  bool at_end() const { return pos_ == b_.size(); }
  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what);
    }
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TimModel& model) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  // nlohmann::json objects are key-sorted, so dump() is canonical.
  const std::string cfg = model.config().to_json().dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  for (const auto& [name, t] : model.parameters()) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      put_le<std::uint32_t>(out, bits);
    }
  }
  return out;
}

TimModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  const std::string magic = in.bytes(4, "magic");
  if (magic != std::string(kMagic, 4)) {
    throw CheckpointError(CheckpointError::Kind::magic_mismatch, "not a TIM checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::version_mismatch,
                          "unsupported checkpoint version " + std::to_string(version));
  }
  const auto cfg_len = in.get<std::uint32_t>("config length");
  const std::string cfg_text = in.bytes(cfg_len, "config");
  TimConfig config;
  try {
    config = TimConfig::from_json(nlohmann::json::parse(cfg_text));
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::malformed, std::string("bad checkpoint config: ") + e.what());
  }
  TimModel model(config);
  std::set<std::string> seen;
  while (!in.at_end()) {
    const auto name_len = in.get<std::uint16_t>("tensor name length");
    const std::string name = in.bytes(name_len, "tensor name");
    const auto rank = in.get<std::uint8_t>("tensor rank");
    Shape shape;
    for (std::uint8_t i = 0; i < rank; ++i) shape.push_back(in.get<std::uint32_t>("tensor dims"));
    auto& params = model.parameters();
    auto it = params.find(name);
    if (it == params.end() || it->second.shape != shape || !seen.insert(name).second) {
      throw CheckpointError(CheckpointError::Kind::malformed,
                            "unexpected tensor '" + name + "' " + shape_str(shape) + " in checkpoint");
    }
    for (float& v : it->second.data) {
      const auto bits = in.get<std::uint32_t>("tensor payload");
      std::memcpy(&v, &bits, sizeof v);
    }
  }
  if (seen.size() != model.parameters().size()) {
    throw CheckpointError(CheckpointError::Kind::truncated,
                          "checkpoint holds " + std::to_string(seen.size()) + " of " +
                              std::to_string(model.parameters().size()) + " tensors");
  }
  return model;
}

void save_checkpoint(const TimModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "failed writing " + path.string());
}

TimModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace chimle
