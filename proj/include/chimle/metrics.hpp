#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "chimle/ops.hpp"
#include "chimle/rng.hpp"
#include "chimle/tim_model.hpp"

namespace chimle {

/// Fixed random two-layer conv features: 3x3 conv + leaky relu, then a
/// stride-2 3x3 conv + leaky relu. Weights depend only on (seed, in channels).
class RandomFeatures {
 public:
  explicit RandomFeatures(std::uint64_t seed = 0x1f2e3d4c, int channels = 16) : seed_(seed), channels_(channels) {}

  std::uint64_t seed() const { return seed_; }
  int channels() const { return channels_; }

  /// Kernels for `in_channels` inputs: {[F,in,3,3], [F,F,3,3]}.
  std::pair<Tensor, Tensor> kernels(std::size_t in_channels) const;

  /// Both feature maps of a batched image [n,c,h,w] on a tape.
  template <typename T>
  std::pair<Var, Var> layers(BasicTape<T>& tape, Var image) const {
    const auto [k1, k2] = kernels(tape.shape(image).at(1));
    Var f1 = leaky_relu(tape, conv2d_same(tape, image, tape.constant(k1.template cast<T>())));
    Var f2 = leaky_relu(tape, conv2d(tape, f1, tape.constant(k2.template cast<T>()), 2, 1));
    return {f1, f2};
  }

  /// Globally average-pooled features of one image [c,h,w]: 2F values.
  std::vector<float> pooled(const Tensor& chw) const;

 private:
  std::uint64_t seed_;
  int channels_;
};

enum class MetricKind { pixel_mse, random_feature };

struct Metric {
  MetricKind kind = MetricKind::pixel_mse;
  RandomFeatures features{};

  static Metric pixel() { return {}; }
  static Metric random_feature(std::uint64_t seed = 0x1f2e3d4c, int channels = 16) {
    return {MetricKind::random_feature, RandomFeatures(seed, channels)};
  }

  /// d(a, b) for two images of identical shape [c,h,w].
  double distance(const Tensor& a, const Tensor& b) const;

  /// Differentiable distance between batched images [1,c,h,w].
  template <typename T>
  Var distance_var(BasicTape<T>& tape, Var a, Var b) const {
    if (tape.shape(a) != tape.shape(b)) {
      throw DimensionError("distance: shape mismatch " + shape_str(tape.shape(a)) + " vs " +
                           shape_str(tape.shape(b)));
    }
    if (kind == MetricKind::pixel_mse) return mse(tape, a, b);
    const auto [fa1, fa2] = features.layers(tape, a);
    const auto [fb1, fb2] = features.layers(tape, b);
    return add(tape, mse(tape, fa1, fb1), mse(tape, fa2, fb2));
  }

  nlohmann::json to_json() const;
  static Metric from_json(const nlohmann::json& j);
};

const char* metric_name(MetricKind kind);
MetricKind parse_metric_kind(const std::string& name);

// ---------------------------------------------------------------------------
// Faithfulness-weighted variance

struct FwvParams {
  double sigma = 0.2;
};

/// samples[i][j] is sample i for input j; weights are exp(-d(sample, observed) / (2 sigma^2))
/// per (i, j); the sum is divided by S*J.
double fwv(const std::vector<std::vector<Tensor>>& samples, const std::vector<Tensor>& observed,
           const std::vector<Tensor>& mean_images, const Metric& metric, const FwvParams& params = {});
/// Same, with the per-input pixel means computed from the samples.
double fwv(const std::vector<std::vector<Tensor>>& samples, const std::vector<Tensor>& observed, const Metric& metric,
           const FwvParams& params = {});
/// Variant with caller-supplied weights[i][j] (used for the held-weights monotonicity property).
double fwv_with_weights(const std::vector<std::vector<Tensor>>& samples, const std::vector<Tensor>& mean_images,
                        const std::vector<std::vector<double>>& weights, const Metric& metric);
std::vector<std::vector<double>> fwv_weights(const std::vector<std::vector<Tensor>>& samples,
                                             const std::vector<Tensor>& observed, const Metric& metric,
                                             const FwvParams& params = {});
std::vector<Tensor> pixel_means(const std::vector<std::vector<Tensor>>& samples);

// ---------------------------------------------------------------------------
// Inference via optimization

struct IvoParams {
  int steps = 500;
  float learning_rate = 0.05f;
  int restarts = 5;
};

struct IvoResult {
  std::vector<double> restart_mse;  // best MSE per successful restart
  int diverged = 0;
  double mean = 0.0;                // over successful restarts (NaN if none)
};

/// Adam on the latent tensors only. `loss` builds the scalar objective from
/// leaf Vars for the current latents. Returns the lowest loss seen, or NaN if
/// the objective became non-finite.
double optimize_latents(std::vector<Tensor>& latents, const std::function<Var(Tape&, const std::vector<Var>&)>& loss,
                        int steps, float learning_rate);

IvoResult ivo(const TimModel& model, const ImagePyramid& x, const Tensor& observed, const IvoParams& params,
              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sample-set distances

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PrdParams {
  int clusters = 20;
  int angles = 1001;
  int kmeans_restarts = 10;
  int kmeans_iterations = 100;
  std::uint64_t seed = 0x5eed;
};

struct PrdScores {
  double f8 = 0.0;
  double f18 = 0.0;
};

struct PrdCurve {
  std::vector<double> precision;
  std::vector<double> recall;
};

/// Histogram-based PRD curve for gen histogram p and real histogram q.
PrdCurve prd_curve(const std::vector<double>& p, const std::vector<double>& q, int angles);
double f_beta(const PrdCurve& curve, double beta);

/// Cluster assignments of every row of the union (real rows first, then gen).
std::vector<int> cluster_union(const FeatureMatrix& real, const FeatureMatrix& gen, const PrdParams& params);
PrdScores prd_f_scores(const FeatureMatrix& real, const FeatureMatrix& gen, const PrdParams& params = {});

double frechet_feature_distance(const FeatureMatrix& real, const FeatureMatrix& gen);
double kernel_feature_distance(const FeatureMatrix& real, const FeatureMatrix& gen);

FeatureMatrix stack_rows(const std::vector<std::vector<float>>& rows);

struct MetricReport {
  double fwv = 0.0;
  double ivo_mean = 0.0;
  int ivo_diverged = 0;
  double f8 = 0.0;
  double f18 = 0.0;
  double fd = 0.0;
  double kd = 0.0;

  nlohmann::json to_json() const;
};

}  // namespace chimle
