#pragma once

// Tower Implicit Model: a chain of resolution-doubling modules. Module l runs
// at side base * 2^l; it concatenates the upsampled features of module l-1,
// the conditioning image at its resolution and a spatial (local) latent, then
// runs an RRDB trunk whose blocks are AdaIN-modulated by a per-module mapping
// network fed with the module's global latent. Every module has its own
// output head, so the partial output of level l depends only on z_1..z_l.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "chimle/ops.hpp"
#include "chimle/rng.hpp"
#include "chimle/tensor.hpp"

namespace chimle {

struct TimConfig {
  int levels = 4;
  int base_resolution = 4;
  std::vector<int> channels_per_level{32, 32, 16, 16};
  int rrdb_per_level = 2;
  int dense_layers_per_block = 4;
  int growth_channels = 16;
  double residual_scale = 0.2;
  int mapping_depth = 4;
  int mapping_hidden = 32;
  int local_latent_channels = 4;
  int global_latent_dim = 16;
  int in_channels = 1;
  int out_channels = 3;

  void validate() const;

  /// Side length of level l (1-based), i.e. of its latent and its output head.
  int resolution(int level) const { return base_resolution << level; }
  int output_side() const { return resolution(levels); }

  nlohmann::json to_json() const;
  /// Strict: unknown keys are rejected; missing keys keep their defaults.
  static TimConfig from_json(const nlohmann::json& j);
};

/// Latent component sizes k_l = local_channels * r_l^2 + global_dim.
std::vector<std::size_t> partition_spec(const TimConfig& config);
std::size_t latent_dimension(const TimConfig& config);

struct LatentComponent {
  Tensor local;   // [local_latent_channels, r_l, r_l]
  Tensor global;  // [global_latent_dim]
};

struct LatentCode {
  std::vector<LatentComponent> components;
  int realized_up_to = 0;

  std::size_t dimension() const;
  std::vector<float> flatten() const;
  bool operator==(const LatentCode& other) const;
};

LatentComponent draw_component(const TimConfig& config, int level, Rng& rng);
/// Fully realized code with every component drawn from N(0, I).
LatentCode draw_latent(const TimConfig& config, Rng& rng);

/// Images [c, r, r] at sides base*2^1 ... base*2^L (index 0 is level 1).
struct ImagePyramid {
  std::vector<Tensor> levels;
  const Tensor& level(int l) const { return levels.at(static_cast<std::size_t>(l - 1)); }
};

class TimModel {
 public:
  explicit TimModel(TimConfig config);

  const TimConfig& config() const { return config_; }
  std::map<std::string, Tensor>& parameters() { return params_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  /// Parameters in a stable (name-sorted) order, for optimizers.
  std::vector<Tensor*> parameter_list();
  /// Names in declaration (initialization) order.
  const std::vector<std::string>& declaration_order() const { return order_; }

  void zero_grad();
  void set_requires_grad(bool on);
  bool same_parameters(const TimModel& other) const;

 private:
  void declare(const std::string& name, Shape shape);

  TimConfig config_;
  std::map<std::string, Tensor> params_;
  std::vector<std::string> order_;
};

/// Deterministic given seed: conv directions He-uniform with gains set so the
/// effective kernel is He-uniform scaled (0.1 inside RRDBs and heads), zero
/// biases, small final mapping layer.
TimModel init_model(const TimConfig& config, std::uint64_t seed);

enum class ParamMode {
  frozen,     // parameters enter as constants
  tracked,    // gradients stay on the tape
  trainable,  // gradients are accumulated into the model's grad buffers
};

/// Binds a model to one tape and builds the module graph on it.
template <typename T>
class TimGraph {
 public:
  struct LevelResult {
    Var features;  // [1, C_l, r_l, r_l]
    Var image;     // [1, out_channels, r_l, r_l]
  };
  struct Modulation {
    Var scale;   // [1, C_l]
    Var offset;  // [1, C_l]
  };

  TimGraph(const TimModel& model, BasicTape<T>& tape, ParamMode mode = ParamMode::frozen);
  TimGraph(TimModel& model, BasicTape<T>& tape, ParamMode mode);

  BasicTape<T>& tape() { return tape_; }

  /// Parameter leaf, created once per tape.
  Var param(const std::string& name);
  /// Uses `v` in place of the named parameter (finite-difference probes).
  void bind(const std::string& name, Var v) { cache_[name] = v; }
  /// Weight-normalized kernel for the conv named `prefix` (".v" / ".g").
  Var kernel(const std::string& prefix);

  /// One module. x: [1,in,r,r], local: [1,lc,r,r], global: [1,gd].
  LevelResult run_level(int level, Var x, Var local, Var global, std::optional<Var> prev_features);

  Var rrdb_block(Var features, int level, int block, double beta);
  Var dense_block(Var features, int level, int block, int dense_index, double beta);
  std::vector<Modulation> mapping_forward(int level, Var global);

  /// Convenience wrappers placing plain tensors on the tape as constants.
  Var constant_image(const Tensor& chw);
  Var constant_component_local(const LatentComponent& c);
  Var constant_component_global(const LatentComponent& c);

 private:
  const TimModel& model_;
  TimModel* mutable_model_ = nullptr;
  BasicTape<T>& tape_;
  ParamMode mode_;
  std::map<std::string, Var> cache_;
};

extern template class TimGraph<float>;
extern template class TimGraph<double>;

/// Partial output of level `level` (1-based) as [c, r, r]. Reads only
/// x_1..x_level and z_1..z_level; throws ContractError when z is not
/// realized far enough.
Tensor forward_partial(const TimModel& model, const ImagePyramid& x, const LatentCode& z, int level);

/// All L head outputs.
std::vector<Tensor> forward_full(const TimModel& model, const ImagePyramid& x, const LatentCode& z);

/// One module evaluated against cached features of the previous module.
struct LevelStep {
  Tensor features;  // [1, C_l, r, r]
  Tensor image;     // [c, r, r]
};
LevelStep step_level(const TimModel& model, const ImagePyramid& x, int level, const LatentComponent& component,
                     const Tensor* prev_features);

void check_pyramid(const TimConfig& config, const ImagePyramid& pyramid, int channels, int up_to_level,
                   const char* what);

/// Adds a leading batch axis of 1.
Tensor with_batch(const Tensor& t);
/// Drops a leading batch axis of 1.
Tensor without_batch(const Tensor& t);

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, magic_mismatch, version_mismatch, truncated, malformed };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TimModel& model, const std::filesystem::path& path);
TimModel load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_checkpoint(const TimModel& model);
TimModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace chimle
