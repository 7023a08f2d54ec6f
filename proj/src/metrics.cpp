#include "chimle/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "chimle/adam.hpp"

namespace chimle {

// ---------------------------------------------------------------------------
// Random features

std::pair<Tensor, Tensor> RandomFeatures::kernels(std::size_t in_channels) const {
  Rng rng = substream(seed_, {in_channels});
  const auto f = static_cast<std::size_t>(channels_);
  Tensor k1({f, in_channels, 3, 3}), k2({f, f, 3, 3});
  std::normal_distribution<float> n1(0.0f, std::sqrt(2.0f / static_cast<float>(in_channels * 9)));
  std::normal_distribution<float> n2(0.0f, std::sqrt(2.0f / static_cast<float>(f * 9)));
  for (float& v : k1.data) v = n1(rng);
  for (float& v : k2.data) v = n2(rng);
  return {std::move(k1), std::move(k2)};
}

std::vector<float> RandomFeatures::pooled(const Tensor& chw) const {
  Tape tape;
  const auto [f1, f2] = layers(tape, tape.constant(with_batch(chw)));
  std::vector<float> out;
  for (Var f : {f1, f2}) {
    const Tensor& t = tape.value(f);
    const std::size_t c = t.shape[1], hw = t.shape[2] * t.shape[3];
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += t.data[ch * hw + i];
      out.push_back(static_cast<float>(acc / static_cast<double>(hw)));
    }
  }
  return out;
}

double Metric::distance(const Tensor& a, const Tensor& b) const {
  if (a.shape != b.shape) {
    throw DimensionError("distance: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  if (kind == MetricKind::pixel_mse) {
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const double d = double(a.data[i]) - double(b.data[i]);
      acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
  }
  Tape tape;
  return tape.value(distance_var(tape, tape.constant(with_batch(a)), tape.constant(with_batch(b)))).item();
}

const char* metric_name(MetricKind kind) {
  return kind == MetricKind::pixel_mse ? "pixel_mse" : "random_feature";
}

MetricKind parse_metric_kind(const std::string& name) {
  if (name == "pixel_mse") return MetricKind::pixel_mse;
  if (name == "random_feature") return MetricKind::random_feature;
  throw ContractError("unknown metric '" + name + "' (expected pixel_mse or random_feature)");
}

nlohmann::json Metric::to_json() const {
  return {{"kind", metric_name(kind)}, {"seed", features.seed()}, {"channels", features.channels()}};
}

Metric Metric::from_json(const nlohmann::json& j) {
  if (j.is_string()) return {parse_metric_kind(j.get<std::string>()), RandomFeatures{}};
  if (!j.is_object()) throw ContractError("metric must be a name or an object");
  for (const auto& [key, _] : j.items())
    if (key != "kind" && key != "seed" && key != "channels") throw ContractError("unknown metric key '" + key + "'");
  RandomFeatures defaults;
  return {parse_metric_kind(j.value("kind", std::string("pixel_mse"))),
          RandomFeatures(j.value("seed", defaults.seed()), j.value("channels", defaults.channels()))};
}

// ---------------------------------------------------------------------------
// FwV

namespace {

void check_sample_grid(const std::vector<std::vector<Tensor>>& samples, std::size_t inputs) {
  if (samples.size() < 2) throw ContractError("fwv needs at least 2 samples per input, got " + std::to_string(samples.size()));
  for (const auto& row : samples)
    if (row.size() != inputs)
      throw DimensionError("fwv: sample row has " + std::to_string(row.size()) + " inputs, expected " +
                           std::to_string(inputs));
}

}  // namespace

std::vector<Tensor> pixel_means(const std::vector<std::vector<Tensor>>& samples) {
  if (samples.empty()) return {};
  std::vector<Tensor> means;
  for (std::size_t j = 0; j < samples[0].size(); ++j) {
    std::vector<double> acc(samples[0][j].numel(), 0.0);
    for (const auto& row : samples)
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += row[j].data[k];
    Tensor m(samples[0][j].shape);
    for (std::size_t k = 0; k < acc.size(); ++k) m.data[k] = static_cast<float>(acc[k] / double(samples.size()));
    means.push_back(std::move(m));
  }
  return means;
}

std::vector<std::vector<double>> fwv_weights(const std::vector<std::vector<Tensor>>& samples,
                                             const std::vector<Tensor>& observed, const Metric& metric,
                                             const FwvParams& params) {
  check_sample_grid(samples, observed.size());
  if (!(params.sigma > 0)) throw ContractError("fwv: sigma must be positive");
  std::vector<std::vector<double>> w(samples.size(), std::vector<double>(observed.size()));
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = 0; j < observed.size(); ++j)
      w[i][j] = std::exp(-metric.distance(samples[i][j], observed[j]) / (2 * params.sigma * params.sigma));
  return w;
}

double fwv_with_weights(const std::vector<std::vector<Tensor>>& samples, const std::vector<Tensor>& mean_images,
                        const std::vector<std::vector<double>>& weights, const Metric& metric) {
  check_sample_grid(samples, mean_images.size());
  double acc = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = 0; j < mean_images.size(); ++j)
      acc += weights.at(i).at(j) * metric.distance(samples[i][j], mean_images[j]);
  return acc / static_cast<double>(samples.size() * mean_images.size());
}

double fwv(const std::vector<std::vector<Tensor>>& samples, const std::vector<Tensor>& observed,
           const std::vector<Tensor>& mean_images, const Metric& metric, const FwvParams& params) {
  if (mean_images.size() != observed.size()) throw DimensionError("fwv: mean image count differs from observed");
  return fwv_with_weights(samples, mean_images, fwv_weights(samples, observed, metric, params), metric);
}

double fwv(const std::vector<std::vector<Tensor>>& samples, const std::vector<Tensor>& observed, const Metric& metric,
           const FwvParams& params) {
  check_sample_grid(samples, observed.size());
  return fwv(samples, observed, pixel_means(samples), metric, params);
}

// ---------------------------------------------------------------------------
// IvO

double optimize_latents(std::vector<Tensor>& latents, const std::function<Var(Tape&, const std::vector<Var>&)>& loss,
                        int steps, float learning_rate) {
  if (steps < 0) throw ContractError("optimize_latents: negative step count");
  std::vector<Tensor*> params;
  for (Tensor& t : latents) {
    t.requires_grad = true;
    params.push_back(&t);
  }
  AdamState state;
  const AdamOptions options{.learning_rate = learning_rate};
  double best = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= steps; ++step) {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor& t : latents) vars.push_back(tape.leaf(t));
    Var l = loss(tape, vars);
    const double value = tape.value(l).item();
    if (!std::isfinite(value)) return std::numeric_limits<double>::quiet_NaN();
    best = std::min(best, value);
    if (step == steps) break;
    for (Tensor& t : latents) t.grad.clear();
    tape.backward(l);
    adam_step(params, state, options);
  }
  return best;
}

IvoResult ivo(const TimModel& model, const ImagePyramid& x, const Tensor& observed, const IvoParams& params,
              std::uint64_t seed) {
  const TimConfig& c = model.config();
  check_pyramid(c, x, c.in_channels, c.levels, "input");
  const auto side = static_cast<std::size_t>(c.output_side());
  if (observed.shape != Shape{static_cast<std::size_t>(c.out_channels), side, side}) {
    throw DimensionError("ivo: observed image has shape " + shape_str(observed.shape));
  }
  if (params.restarts < 1 || params.learning_rate <= 0) throw ContractError("ivo: invalid parameters");
  const Tensor target = with_batch(observed);
  IvoResult out;
  for (int r = 0; r < params.restarts; ++r) {
    Rng rng = substream(seed, {static_cast<std::uint64_t>(r)});
    const LatentCode z0 = draw_latent(c, rng);
    std::vector<Tensor> latents;
    for (const auto& comp : z0.components) {
      latents.push_back(with_batch(comp.local));
      latents.push_back(with_batch(comp.global));
    }
    auto loss = [&](Tape& tape, const std::vector<Var>& v) {
      TimGraph<float> g(model, tape);
      std::optional<Var> prev;
      Var image;
      for (int l = 1; l <= c.levels; ++l) {
        const auto k = static_cast<std::size_t>(2 * (l - 1));
        auto res = g.run_level(l, g.constant_image(x.level(l)), v[k], v[k + 1], prev);
        prev = res.features;
        image = res.image;
      }
      return mse(tape, image, tape.constant(target));
    };
    const double best = optimize_latents(latents, loss, params.steps, params.learning_rate);
    if (std::isnan(best)) {
      ++out.diverged;
    } else {
      out.restart_mse.push_back(best);
    }
  }
  out.mean = out.restart_mse.empty()
                 ? std::numeric_limits<double>::quiet_NaN()
                 : std::accumulate(out.restart_mse.begin(), out.restart_mse.end(), 0.0) /
                       static_cast<double>(out.restart_mse.size());
  return out;
}

// ---------------------------------------------------------------------------
// PRD

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct KMeansFit {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
};

KMeansFit kmeans_once(const MatD& X, int k, int iterations, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(X.rows());
  MatD C(k, X.cols());
  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  C.row(0) = X.row(pick(rng));
  Eigen::VectorXd d2 = (X.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (chosen = 0; chosen < n - 1; ++chosen) {
        u -= d2(chosen);
        if (u < 0) break;
      }
    }
    C.row(c) = X.row(chosen);
    d2 = d2.cwiseMin((X.rowwise() - C.row(c)).rowwise().squaredNorm());
  }

  KMeansFit fit;
  fit.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    double inertia = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best;
      inertia += (C.rowwise() - X.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (fit.labels[static_cast<std::size_t>(i)] != static_cast<int>(best)) {
        fit.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        changed = true;
      }
    }
    fit.inertia = inertia;
    if (!changed) break;
    MatD sums = MatD::Zero(k, X.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = fit.labels[static_cast<std::size_t>(i)];
      sums.row(l) += X.row(i);
      ++counts[static_cast<std::size_t>(l)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        C.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
      } else {
        // Empty cluster: move it onto the point farthest from its centre.
        Eigen::Index far = 0;
        double worst = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d = (X.row(i) - C.row(fit.labels[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > worst) {
            worst = d;
            far = i;
          }
        }
        C.row(c) = X.row(far);
      }
    }
  }
  return fit;
}

}  // namespace

std::vector<int> cluster_union(const FeatureMatrix& real, const FeatureMatrix& gen, const PrdParams& params) {
  if (real.rows() == 0 || gen.rows() == 0) throw ContractError("prd: feature sets must be nonempty");
  if (real.cols() != gen.cols()) throw DimensionError("prd: feature dimensions differ");
  if (params.clusters < 2) throw ContractError("prd: cluster count must be >= 2");
  const Eigen::Index n = real.rows() + gen.rows();
  MatD all(n, real.cols());
  all.topRows(real.rows()) = real.cast<double>();
  all.bottomRows(gen.rows()) = gen.cast<double>();

  // Cluster a canonical (sorted) ordering so the result does not depend on
  // which set is called real.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto row_less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < all.cols(); ++c) {
      if (all(a, c) != all(b, c)) return all(a, c) < all(b, c);
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), row_less);
  MatD sorted(n, all.cols());
  std::size_t distinct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    sorted.row(i) = all.row(order[static_cast<std::size_t>(i)]);
    if (i == 0 || row_less(order[static_cast<std::size_t>(i - 1)], order[static_cast<std::size_t>(i)])) ++distinct;
  }
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(params.clusters), distinct));

  KMeansFit best;
  for (int r = 0; r < params.kmeans_restarts; ++r) {
    Rng rng = substream(params.seed, {static_cast<std::uint64_t>(r)});
    KMeansFit fit = kmeans_once(sorted, k, params.kmeans_iterations, rng);
    if (fit.inertia < best.inertia) best = std::move(fit);
  }
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = best.labels[static_cast<std::size_t>(i)];
  return labels;
}

PrdCurve prd_curve(const std::vector<double>& p, const std::vector<double>& q, int angles) {
  if (p.size() != q.size()) throw DimensionError("prd_curve: histogram sizes differ");
  if (angles < 3) throw ContractError("prd_curve: need at least 3 angles");
  std::vector<double> slopes;
  const double eps = 1e-10;
  for (int i = 0; i < angles; ++i) {
    const double theta = eps + (std::numbers::pi / 2 - 2 * eps) * i / (angles - 1);
    slopes.push_back(std::tan(theta));
  }
  // The curve is piecewise linear in lambda with kinks at p_k/q_k; adding the
  // kinks (and their inverses, for duality) makes the maximum exact.
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0 && q[k] > 0) {
      slopes.push_back(p[k] / q[k]);
      slopes.push_back(q[k] / p[k]);
    }
  }
  std::sort(slopes.begin(), slopes.end());
  PrdCurve curve;
  for (double lambda : slopes) {
    double alpha = 0;
    for (std::size_t k = 0; k < p.size(); ++k) alpha += std::min(lambda * q[k], p[k]);
    curve.precision.push_back(std::clamp(alpha, 0.0, 1.0));
    curve.recall.push_back(std::clamp(alpha / lambda, 0.0, 1.0));
  }
  return curve;
}

double f_beta(const PrdCurve& curve, double beta) {
  const double b2 = beta * beta;
  double best = 0;
  for (std::size_t i = 0; i < curve.precision.size(); ++i) {
    const double a = curve.precision[i], r = curve.recall[i];
    const double den = b2 * a + r;
    if (den > 0) best = std::max(best, (1 + b2) * a * r / den);
  }
  return best;
}

PrdScores prd_f_scores(const FeatureMatrix& real, const FeatureMatrix& gen, const PrdParams& params) {
  const std::vector<int> labels = cluster_union(real, gen, params);
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<double> q(static_cast<std::size_t>(k), 0.0), p(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < real.rows(); ++i) q[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1;
  for (Eigen::Index i = 0; i < gen.rows(); ++i)
    p[static_cast<std::size_t>(labels[static_cast<std::size_t>(real.rows() + i)])] += 1;
  for (double& v : q) v /= static_cast<double>(real.rows());
  for (double& v : p) v /= static_cast<double>(gen.rows());
  const PrdCurve curve = prd_curve(p, q, params.angles);
  return {f_beta(curve, 8.0), f_beta(curve, 1.0 / 8.0)};
}

// ---------------------------------------------------------------------------
// Frechet / kernel distances

namespace {

constexpr double kPsdTolerance = 1e-6;

Eigen::VectorXd clamped_eigenvalues(const Eigen::VectorXd& ev, const char* what) {
  Eigen::VectorXd out = ev;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -kPsdTolerance) {
      throw NumericalError(std::string("frechet distance: ") + what + " has negative eigenvalue " +
                           std::to_string(ev(i)));
    }
    out(i) = std::max(0.0, ev(i));
  }
  return out;
}

void moments(const FeatureMatrix& f, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd x = f.cast<double>();
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

}  // namespace

double frechet_feature_distance(const FeatureMatrix& real, const FeatureMatrix& gen) {
  if (real.cols() != gen.cols()) throw DimensionError("frechet distance: feature dimensions differ");
  const Eigen::Index d = real.cols();
  if (d < 1 || d > 256) throw DimensionError("frechet distance: feature dim must be in [1,256], got " + std::to_string(d));
  if (real.rows() < d + 1 || gen.rows() < d + 1) {
    throw ContractError("frechet distance: need at least dim+1 samples per set");
  }
  Eigen::VectorXd mr, mg;
  Eigen::MatrixXd sr, sg;
  moments(real, mr, sr);
  moments(gen, mg, sg);

  // Tr((Sr Sg)^1/2) = Tr((Sr^1/2 Sg Sr^1/2)^1/2), a symmetric PSD product.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> er(sr);
  const Eigen::VectorXd lr = clamped_eigenvalues(er.eigenvalues(), "real covariance");
  const Eigen::MatrixXd root_r = er.eigenvectors() * lr.cwiseSqrt().asDiagonal() * er.eigenvectors().transpose();
  Eigen::MatrixXd prod = root_r * sg * root_r;
  prod = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(prod, Eigen::EigenvaluesOnly);
  const double tr_sqrt = clamped_eigenvalues(ep.eigenvalues(), "covariance product").cwiseSqrt().sum();

  const double fd = (mr - mg).squaredNorm() + sr.trace() + sg.trace() - 2 * tr_sqrt;
  return std::max(0.0, fd);
}

double kernel_feature_distance(const FeatureMatrix& real, const FeatureMatrix& gen) {
  if (real.cols() != gen.cols()) throw DimensionError("kernel distance: feature dimensions differ");
  const Eigen::Index m = real.rows(), n = gen.rows();
  if (m < 2 || n < 2) throw ContractError("kernel distance: need at least 2 samples per set");
  const double d = static_cast<double>(real.cols());
  const Eigen::MatrixXd x = real.cast<double>(), y = gen.cast<double>();
  auto kern = [d](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return ((a * b.transpose()).array() / d + 1.0).cube().matrix().eval();
  };
  const Eigen::MatrixXd kxx = kern(x, x), kyy = kern(y, y), kxy = kern(x, y);
  const double sxx = (kxx.sum() - kxx.trace()) / static_cast<double>(m * (m - 1));
  const double syy = (kyy.sum() - kyy.trace()) / static_cast<double>(n * (n - 1));
  const double sxy = kxy.sum() / static_cast<double>(m * n);
  return sxx + syy - 2 * sxy;
}

FeatureMatrix stack_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) return FeatureMatrix(0, 0);
  FeatureMatrix f(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw DimensionError("stack_rows: ragged feature rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return f;
}

nlohmann::json MetricReport::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"fwv", num(fwv)}, {"ivo_mean", num(ivo_mean)}, {"ivo_diverged", ivo_diverged},
          {"f8", num(f8)},   {"f18", num(f18)},           {"fd", num(fd)},
          {"kd", num(kd)}};
}

}  // namespace chimle
