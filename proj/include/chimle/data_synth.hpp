#pragma once

// Procedural multimodal conditional datasets whose valid outputs are known
// exactly, so mode coverage can be checked by brute force.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chimle/tim_model.hpp"

namespace chimle {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { toy_colorization, toy_superres };

const char* task_name(TaskKind t);
TaskKind parse_task(const std::string& name);

struct TaskSpec {
  TaskKind task = TaskKind::toy_colorization;
  int side = 64;
  int k = 4;
  int n = 16;
  std::uint64_t seed = 0;

  void validate() const;
  int input_channels() const { return 1; }
  int output_channels() const { return task == TaskKind::toy_colorization ? 3 : 1; }

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
};

struct Example {
  int id = 0;
  Tensor x;                     // conditioning image [1, s, s] (colorization) or [1, s/16, s/16] (superres)
  Tensor y;                     // observed image, equal to mode_set[mode_id]
  int mode_id = 0;              // hidden ground truth
  std::vector<Tensor> mode_set; // the K valid outputs
};

inline constexpr double kChromaRadius = 0.3;
inline constexpr double kTextureAmplitude = 0.24;
inline constexpr int kTexturePeriod = 8;
inline constexpr int kSuperresFactor = 16;

Example generate_example(const TaskSpec& spec, int index);
std::vector<Example> generate_dataset(const TaskSpec& spec);

/// Rec. 601 luma of an RGB image [3,h,w] -> [1,h,w].
Tensor luminance(const Tensor& rgb);
/// Repeated 2x box averaging by `factor` (a power of two).
Tensor box_downsample(const Tensor& chw, int factor);
/// Nearest-neighbour upsampling by an integer factor.
Tensor nearest_upsample(const Tensor& chw, int factor);

/// Levels at sides base*2, ..., base*2^levels = side of `full`, each the 2x
/// box-downsample of the next. levels = 0 gives just the full image.
ImagePyramid image_pyramid(const Tensor& full, int levels);

struct Pyramids {
  ImagePyramid x;
  ImagePyramid y;
};
/// x is first brought to the output side by nearest upsampling.
Pyramids build_pyramids(const Example& example, int levels, int base);

double min_inter_mode_mse(const Example& example);
/// Half the smallest inter-mode RMS distance, expressed as an MSE.
double calibrated_threshold(const Example& example);

using ImageSampler = std::function<Tensor(int sample_index)>;
int mode_coverage(const ImageSampler& sampler, const Example& example, int n_samples, double match_threshold);
/// Samples are forward_full(model, x, z) with z drawn from substreams of `seed`.
int mode_coverage(const TimModel& model, const Example& example, int n_samples, double match_threshold,
                  std::uint64_t seed);

/// Writes images plus manifest.json into `dir`.
void export_dataset(const TaskSpec& spec, const std::vector<Example>& examples, const std::filesystem::path& dir);
struct LoadedDataset {
  TaskSpec spec;
  std::vector<Example> examples;
};
LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace chimle
