#pragma once

// Discrete-time diffusion on Gaussian mixtures with affine-Gaussian reverse
// kernels. Every density involved is exact, so the two ways of writing the
// variational bound can be checked against each other, and a fitted reverse
// chain can be probed for bridged or suppressed modes.

#include <cstdint>
#include <string>
#include <vector>

#include "chimle/errors.hpp"
#include "chimle/rng.hpp"

namespace chimle {

class DegenerateForwardError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Isotropic Gaussian mixture in 1 or 2 dimensions.
struct MixtureSpec {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;  // [k][d]
  std::vector<double> stds;

  int dim() const { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
  void validate() const;
  double log_density(const std::vector<double>& x) const;
  std::vector<double> sample(Rng& rng) const;
  double mean(int d) const;

  /// Two 1-D modes at -offset and +offset.
  static MixtureSpec two_modes(double offset, double s, double weight_first = 0.5);
  static MixtureSpec standard_normal(int dim = 1);
};

struct DiffusionSpec {
  std::vector<double> sigma;  // per-step forward std, index t-1
  double prior_var = 1.0;     // p(x_T) = N(0, prior_var I)

  int steps() const { return static_cast<int>(sigma.size()); }
  double sigma_at(int t) const { return sigma.at(static_cast<std::size_t>(t - 1)); }
  void validate() const;
  /// Throws DegenerateForwardError if any forward step has zero variance.
  void require_nondegenerate() const;

  static DiffusionSpec constant(int steps, double sigma_q, double prior_var = 1.0);
};

/// p(x_{t-1} | x_t) = N(a_t x_t + b_t, c_t^2) per dimension, c_t = exp(log_c_t).
struct ReverseModel {
  std::vector<std::vector<double>> a, b, log_c;  // [t-1][d]

  int steps() const { return static_cast<int>(a.size()); }
  int dim() const { return a.empty() ? 0 : static_cast<int>(a[0].size()); }
  void validate() const;

  /// a = 1, b = 0, c = 1.
  static ReverseModel initial(const DiffusionSpec& diffusion, int dim);
};

using Trajectory = std::vector<std::vector<double>>;  // [t][d], t = 0..T

Trajectory forward_sample(const MixtureSpec& mixture, const DiffusionSpec& diffusion, Rng& rng);
/// Ancestral samples of x_0 from the reverse chain.
std::vector<std::vector<double>> sample_model(const DiffusionSpec& diffusion, const ReverseModel& reverse, int n, Rng& rng);

/// Per-dimension Gaussian marginals of the reverse chain, index t = 0..T.
struct GaussianMarginal {
  std::vector<double> mean, var;
};
std::vector<GaussianMarginal> model_marginals(const DiffusionSpec& diffusion, const ReverseModel& reverse);

double log_normal(double x, double mean, double var);
double kl_normal(double mean_p, double var_p, double mean_q, double var_q);

/// Closed-form log p(x_0).
double log_marginal(const DiffusionSpec& diffusion, const ReverseModel& reverse, const std::vector<double>& x0);
/// Importance-sampling estimate of log p(x_0); the proposal is the model's own
/// reverse-time posterior chain p(x_t | x_{t-1}).
double log_marginal_is(const DiffusionSpec& diffusion, const ReverseModel& reverse, const std::vector<double>& x0,
                       int samples, Rng& rng);

struct ElboEstimate {
  double direct = 0, direct_se = 0;          // trajectory Monte Carlo of E_q[log p(x_0:T) - log q(x_1:T | x_0)]
  double decomposed = 0, decomposed_se = 0;  // log p(x_0) - sum_t E[KL(q(x_t|x_{t-1}) || p(x_t|x_{0:t-1}))]
  double loglik = 0, loglik_se = 0;          // E_data[log p(x_0)] by importance sampling
};

/// The two paths use independent trajectory sets drawn from substreams of `seed`.
ElboEstimate elbo(const MixtureSpec& mixture, const DiffusionSpec& diffusion, const ReverseModel& reverse, int n_mc,
                  std::uint64_t seed, int is_samples = 8);

struct FitOptions {
  int iterations = 1500;
  int batch = 256;
  double learning_rate = 0.01;
  int eval_every = 50;
  int eval_trajectories = 4000;
};

struct FitResult {
  ReverseModel model;
  std::vector<double> elbo_trace;  // direct bound on a fixed evaluation set
};

/// Adam ascent on the Monte Carlo bound from ReverseModel::initial, with a
/// fresh trajectory batch per iteration and a linearly decaying step.
FitResult fit_reverse(const MixtureSpec& mixture, const DiffusionSpec& diffusion, const FitOptions& options,
                      std::uint64_t seed);

double silverman_bandwidth(const std::vector<double>& samples);
double kde(const std::vector<double>& samples, double x, double bandwidth);
double spearman(const std::vector<double>& values);

struct ForcingScore {
  double bridge_ratio = 0;
  std::vector<double> mode_mass;
  double bandwidth = 0;
};

/// 1-D, two well-separated modes. The ratio divides the KDE at the midpoint by
/// the true density smoothed with the same kernel, so an exact sampler scores 1.
ForcingScore mode_forcing_score(const MixtureSpec& mixture, const std::vector<double>& samples);
ForcingScore mode_forcing_score(const MixtureSpec& mixture, const DiffusionSpec& diffusion, const ReverseModel& reverse,
                                int n, std::uint64_t seed);

struct SweepRow {
  double sigma_q = 0;  // 0 marks the true-sampler self-test
  double elbo = 0;
  double loglik_est = 0;
  double bridge_ratio = 0;
  double mass_1 = 0;
  double mass_2 = 0;
};

struct SweepOptions {
  int steps = 50;
  FitOptions fit;
  int samples = 100000;
  int elbo_trajectories = 4000;
};

/// Self-test row first, then one fitted model per sigma_q.
std::vector<SweepRow> mode_forcing_sweep(const MixtureSpec& mixture, const std::vector<double>& sigmas,
                                         const SweepOptions& options, std::uint64_t seed);

}  // namespace chimle
