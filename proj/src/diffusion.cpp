#include "chimle/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace chimle {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

struct MeanSe {
  double mean = 0, se = 0;
};

MeanSe mean_se(const std::vector<double>& v) {
  MeanSe r;
  const double n = static_cast<double>(v.size());
  for (double x : v) r.mean += x;
  r.mean /= n;
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.se = v.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
  return r;
}

void check_compatible(const DiffusionSpec& diffusion, const ReverseModel& reverse, int dim) {
  diffusion.validate();
  reverse.validate();
  if (reverse.steps() != diffusion.steps())
    throw DimensionError("reverse model has " + std::to_string(reverse.steps()) + " steps, diffusion has " +
                         std::to_string(diffusion.steps()));
  if (reverse.dim() != dim)
    throw DimensionError("reverse model dimension " + std::to_string(reverse.dim()) + " != " + std::to_string(dim));
}

// log p(x_{0:T}) under the reverse chain.
double log_joint(const DiffusionSpec& diffusion, const ReverseModel& reverse, const Trajectory& x) {
  const int T = diffusion.steps();
  double lp = 0;
  for (std::size_t d = 0; d < x[0].size(); ++d) {
    lp += log_normal(x[static_cast<std::size_t>(T)][d], 0.0, diffusion.prior_var);
    for (int t = 1; t <= T; ++t) {
      const std::size_t k = static_cast<std::size_t>(t - 1);
      const double c = std::exp(reverse.log_c[k][d]);
      lp += log_normal(x[k][d], reverse.a[k][d] * x[k + 1][d] + reverse.b[k][d], c * c);
    }
  }
  return lp;
}

// log q(x_{1:T} | x_0).
double log_forward(const DiffusionSpec& diffusion, const Trajectory& x) {
  double lq = 0;
  for (std::size_t d = 0; d < x[0].size(); ++d)
    for (int t = 1; t <= diffusion.steps(); ++t) {
      const double s = diffusion.sigma_at(t);
      lq += log_normal(x[static_cast<std::size_t>(t)][d], x[static_cast<std::size_t>(t - 1)][d], s * s);
    }
  return lq;
}

// Reverse-time posterior p(x_t | x_{t-1}) of the chain, dimension d.
void posterior_step(const GaussianMarginal& marg_t, const ReverseModel& reverse, int t, std::size_t d, double prev,
                    double& mean, double& var) {
  const std::size_t k = static_cast<std::size_t>(t - 1);
  const double a = reverse.a[k][d];
  const double c2 = std::exp(2 * reverse.log_c[k][d]);
  const double prec = 1.0 / marg_t.var[d] + a * a / c2;
  var = 1.0 / prec;
  mean = var * (marg_t.mean[d] / marg_t.var[d] + a * (prev - reverse.b[k][d]) / c2);
}

}  // namespace

// ---------------------------------------------------------------------------

void MixtureSpec::validate() const {
  if (weights.empty()) throw ContractError("mixture: no components");
  if (means.size() != weights.size() || stds.size() != weights.size())
    throw DimensionError("mixture: weights, means and stds differ in length");
  const int d = dim();
  if (d < 1 || d > 2) throw ContractError("mixture: dimension must be 1 or 2");
  double total = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (static_cast<int>(means[k].size()) != d) throw DimensionError("mixture: ragged means");
    if (!(weights[k] > 0)) throw ContractError("mixture: weights must be positive");
    if (!(stds[k] > 0)) throw ContractError("mixture: stds must be positive");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("mixture: weights must sum to 1");
}

double MixtureSpec::log_density(const std::vector<double>& x) const {
  if (static_cast<int>(x.size()) != dim()) throw DimensionError("mixture: point has wrong dimension");
  std::vector<double> terms;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    double l = std::log(weights[k]);
    for (std::size_t d = 0; d < x.size(); ++d) l += log_normal(x[d], means[k][d], stds[k] * stds[k]);
    terms.push_back(l);
  }
  return log_sum_exp(terms);
}

std::vector<double> MixtureSpec::sample(Rng& rng) const {
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> n01;
  const std::size_t k = pick(rng);
  std::vector<double> x(means[k].size());
  for (std::size_t d = 0; d < x.size(); ++d) x[d] = means[k][d] + stds[k] * n01(rng);
  return x;
}

double MixtureSpec::mean(int d) const {
  double m = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * means[k][static_cast<std::size_t>(d)];
  return m;
}

MixtureSpec MixtureSpec::two_modes(double offset, double s, double weight_first) {
  MixtureSpec m{{weight_first, 1.0 - weight_first}, {{-offset}, {offset}}, {s, s}};
  m.validate();
  return m;
}

MixtureSpec MixtureSpec::standard_normal(int dim) {
  MixtureSpec m{{1.0}, {std::vector<double>(static_cast<std::size_t>(dim), 0.0)}, {1.0}};
  m.validate();
  return m;
}

void DiffusionSpec::validate() const {
  if (sigma.empty()) throw ContractError("diffusion: need at least one step");
  for (double s : sigma)
    if (!(s >= 0) || !std::isfinite(s)) throw ContractError("diffusion: forward sigma must be finite and >= 0");
  if (!(prior_var > 0) || !std::isfinite(prior_var)) throw ContractError("diffusion: prior variance must be positive");
}

void DiffusionSpec::require_nondegenerate() const {
  validate();
  for (std::size_t t = 0; t < sigma.size(); ++t)
    if (sigma[t] == 0)
      throw DegenerateForwardError("degenerate forward process: sigma is 0 at step " + std::to_string(t + 1));
}

DiffusionSpec DiffusionSpec::constant(int steps, double sigma_q, double prior_var) {
  if (steps < 1) throw ContractError("diffusion: need at least one step");
  DiffusionSpec d{std::vector<double>(static_cast<std::size_t>(steps), sigma_q), prior_var};
  d.validate();
  return d;
}

void ReverseModel::validate() const {
  if (a.empty() || b.size() != a.size() || log_c.size() != a.size()) throw DimensionError("reverse model: ragged steps");
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].size() != a[0].size() || b[t].size() != a[0].size() || log_c[t].size() != a[0].size())
      throw DimensionError("reverse model: ragged dimensions");
    for (std::size_t d = 0; d < a[t].size(); ++d)
      if (!std::isfinite(a[t][d]) || !std::isfinite(b[t][d]) || !std::isfinite(log_c[t][d]))
        throw NumericalError("reverse model: non-finite parameter at step " + std::to_string(t + 1));
  }
}

ReverseModel ReverseModel::initial(const DiffusionSpec& diffusion, int dim) {
  diffusion.require_nondegenerate();
  ReverseModel r;
  const std::size_t D = static_cast<std::size_t>(dim);
  for (int t = 1; t <= diffusion.steps(); ++t) {
    r.a.push_back(std::vector<double>(D, 1.0));
    r.b.push_back(std::vector<double>(D, 0.0));
    r.log_c.push_back(std::vector<double>(D, 0.0));
  }
  return r;
}

// ---------------------------------------------------------------------------

Trajectory forward_sample(const MixtureSpec& mixture, const DiffusionSpec& diffusion, Rng& rng) {
  std::normal_distribution<double> n01;
  Trajectory x;
  x.push_back(mixture.sample(rng));
  for (int t = 1; t <= diffusion.steps(); ++t) {
    std::vector<double> next = x.back();
    for (double& v : next) v += diffusion.sigma_at(t) * n01(rng);
    x.push_back(std::move(next));
  }
  return x;
}

std::vector<std::vector<double>> sample_model(const DiffusionSpec& diffusion, const ReverseModel& reverse, int n,
                                              Rng& rng) {
  check_compatible(diffusion, reverse, reverse.dim());
  std::normal_distribution<double> n01;
  const double prior_sd = std::sqrt(diffusion.prior_var);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n));
  for (auto& x : out) {
    x.resize(static_cast<std::size_t>(reverse.dim()));
    for (double& v : x) v = prior_sd * n01(rng);
    for (int t = diffusion.steps(); t >= 1; --t) {
      const std::size_t k = static_cast<std::size_t>(t - 1);
      for (std::size_t d = 0; d < x.size(); ++d)
        x[d] = reverse.a[k][d] * x[d] + reverse.b[k][d] + std::exp(reverse.log_c[k][d]) * n01(rng);
    }
  }
  return out;
}

std::vector<GaussianMarginal> model_marginals(const DiffusionSpec& diffusion, const ReverseModel& reverse) {
  check_compatible(diffusion, reverse, reverse.dim());
  const std::size_t D = static_cast<std::size_t>(reverse.dim());
  const int T = diffusion.steps();
  std::vector<GaussianMarginal> m(static_cast<std::size_t>(T + 1));
  m[static_cast<std::size_t>(T)] = {std::vector<double>(D, 0.0), std::vector<double>(D, diffusion.prior_var)};
  for (int t = T; t >= 1; --t) {
    const std::size_t k = static_cast<std::size_t>(t - 1);
    GaussianMarginal& prev = m[k];
    const GaussianMarginal& cur = m[k + 1];
    prev.mean.resize(D);
    prev.var.resize(D);
    for (std::size_t d = 0; d < D; ++d) {
      const double a = reverse.a[k][d];
      prev.mean[d] = a * cur.mean[d] + reverse.b[k][d];
      prev.var[d] = a * a * cur.var[d] + std::exp(2 * reverse.log_c[k][d]);
    }
  }
  return m;
}

double log_normal(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

double kl_normal(double mean_p, double var_p, double mean_q, double var_q) {
  const double dm = mean_p - mean_q;
  return 0.5 * (std::log(var_q / var_p) + (var_p + dm * dm) / var_q - 1.0);
}

double log_marginal(const DiffusionSpec& diffusion, const ReverseModel& reverse, const std::vector<double>& x0) {
  const auto m = model_marginals(diffusion, reverse);
  if (x0.size() != m[0].mean.size()) throw DimensionError("log_marginal: point has wrong dimension");
  double l = 0;
  for (std::size_t d = 0; d < x0.size(); ++d) l += log_normal(x0[d], m[0].mean[d], m[0].var[d]);
  return l;
}

double log_marginal_is(const DiffusionSpec& diffusion, const ReverseModel& reverse, const std::vector<double>& x0,
                       int samples, Rng& rng) {
  if (samples < 1) throw ContractError("log_marginal_is: need at least one sample");
  const auto m = model_marginals(diffusion, reverse);
  if (x0.size() != m[0].mean.size()) throw DimensionError("log_marginal_is: point has wrong dimension");
  std::normal_distribution<double> n01;
  const int T = diffusion.steps();
  std::vector<double> logw;
  for (int s = 0; s < samples; ++s) {
    Trajectory x{x0};
    double log_r = 0;
    for (int t = 1; t <= T; ++t) {
      std::vector<double> next(x0.size());
      for (std::size_t d = 0; d < x0.size(); ++d) {
        double mean = 0, var = 0;
        posterior_step(m[static_cast<std::size_t>(t)], reverse, t, d, x.back()[d], mean, var);
        next[d] = mean + std::sqrt(var) * n01(rng);
        log_r += log_normal(next[d], mean, var);
      }
      x.push_back(std::move(next));
    }
    logw.push_back(log_joint(diffusion, reverse, x) - log_r);
  }
  return log_sum_exp(logw) - std::log(static_cast<double>(samples));
}

ElboEstimate elbo(const MixtureSpec& mixture, const DiffusionSpec& diffusion, const ReverseModel& reverse, int n_mc,
                  std::uint64_t seed, int is_samples) {
  mixture.validate();
  diffusion.require_nondegenerate();
  check_compatible(diffusion, reverse, mixture.dim());
  if (n_mc < 2) throw ContractError("elbo: need at least 2 trajectories");
  const auto marg = model_marginals(diffusion, reverse);
  const int T = diffusion.steps();

  std::vector<double> direct, decomposed, loglik;
  Rng rd = substream(seed, {1});
  Rng rp = substream(seed, {2});
  Rng ri = substream(seed, {3});
  for (int i = 0; i < n_mc; ++i) {
    const Trajectory x = forward_sample(mixture, diffusion, rd);
    direct.push_back(log_joint(diffusion, reverse, x) - log_forward(diffusion, x));

    const Trajectory y = forward_sample(mixture, diffusion, rp);
    const double ll = log_marginal_is(diffusion, reverse, y[0], is_samples, ri);
    double kl = 0;
    for (int t = 1; t <= T; ++t) {
      const double s2 = diffusion.sigma_at(t) * diffusion.sigma_at(t);
      for (std::size_t d = 0; d < y[0].size(); ++d) {
        double mean = 0, var = 0;
        posterior_step(marg[static_cast<std::size_t>(t)], reverse, t, d, y[static_cast<std::size_t>(t - 1)][d], mean,
                       var);
        kl += kl_normal(y[static_cast<std::size_t>(t - 1)][d], s2, mean, var);
      }
    }
    decomposed.push_back(ll - kl);
    loglik.push_back(ll);
  }
  const MeanSe a = mean_se(direct), b = mean_se(decomposed), c = mean_se(loglik);
  return {a.mean, a.se, b.mean, b.se, c.mean, c.se};
}

// ---------------------------------------------------------------------------

FitResult fit_reverse(const MixtureSpec& mixture, const DiffusionSpec& diffusion, const FitOptions& options,
                      std::uint64_t seed) {
  mixture.validate();
  diffusion.require_nondegenerate();
  if (options.iterations < 0 || options.batch < 1 || !(options.learning_rate > 0) || options.eval_every < 1 ||
      options.eval_trajectories < 1)
    throw ContractError("fit_reverse: invalid options");

  FitResult out;
  out.model = ReverseModel::initial(diffusion, mixture.dim());
  ReverseModel& r = out.model;
  const int T = diffusion.steps();
  const std::size_t D = static_cast<std::size_t>(mixture.dim());

  // Parameters flattened as [t][d][a, b, log_c].
  const std::size_t P = static_cast<std::size_t>(T) * D * 3;
  std::vector<double> m1(P, 0.0), m2(P, 0.0), grad(P);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  std::vector<Trajectory> eval_set;
  Rng re = substream(seed, {0xE7A1ULL});
  for (int i = 0; i < options.eval_trajectories; ++i) eval_set.push_back(forward_sample(mixture, diffusion, re));
  auto eval_bound = [&] {
    double s = 0;
    for (const Trajectory& x : eval_set) s += log_joint(diffusion, r, x) - log_forward(diffusion, x);
    return s / static_cast<double>(eval_set.size());
  };

  for (int it = 0; it < options.iterations; ++it) {
    if (it % options.eval_every == 0) out.elbo_trace.push_back(eval_bound());
    Rng rb = substream(seed, {static_cast<std::uint64_t>(it)});
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int n = 0; n < options.batch; ++n) {
      const Trajectory x = forward_sample(mixture, diffusion, rb);
      for (int t = 1; t <= T; ++t) {
        const std::size_t k = static_cast<std::size_t>(t - 1);
        for (std::size_t d = 0; d < D; ++d) {
          const double inv_c2 = std::exp(-2 * r.log_c[k][d]);
          const double res = x[k][d] - r.a[k][d] * x[k + 1][d] - r.b[k][d];
          double* g = &grad[(k * D + d) * 3];
          g[0] += res * x[k + 1][d] * inv_c2;
          g[1] += res * inv_c2;
          g[2] += res * res * inv_c2 - 1.0;
        }
      }
    }
    // Linear decay keeps the Adam jitter at the optimum from showing up in the trace.
    const double step = options.learning_rate * (1.0 - static_cast<double>(it) / options.iterations);
    const double bc1 = 1 - std::pow(beta1, it + 1), bc2 = 1 - std::pow(beta2, it + 1);
    for (std::size_t p = 0; p < P; ++p) {
      const double g = -grad[p] / options.batch;  // ascent on the bound
      if (!std::isfinite(g))
        throw NumericalError("fit_reverse: non-finite gradient at iteration " + std::to_string(it + 1));
      m1[p] = beta1 * m1[p] + (1 - beta1) * g;
      m2[p] = beta2 * m2[p] + (1 - beta2) * g * g;
      const double delta = step * (m1[p] / bc1) / (std::sqrt(m2[p] / bc2) + eps);
      const std::size_t k = p / (D * 3), d = (p / 3) % D;
      double& v = p % 3 == 0 ? r.a[k][d] : p % 3 == 1 ? r.b[k][d] : r.log_c[k][d];
      v -= delta;
    }
  }
  out.elbo_trace.push_back(eval_bound());
  for (double v : out.elbo_trace)
    if (!std::isfinite(v)) throw NumericalError("fit_reverse: non-finite bound");
  return out;
}

// ---------------------------------------------------------------------------

double silverman_bandwidth(const std::vector<double>& samples) {
  if (samples.size() < 2) throw ContractError("silverman_bandwidth: need at least 2 samples");
  const double n = static_cast<double>(samples.size());
  double mean = 0;
  for (double x : samples) mean += x;
  mean /= n;
  double ss = 0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1));
  std::vector<double> s = samples;
  auto quantile = [&](double q) {
    auto it = s.begin() + static_cast<std::ptrdiff_t>(q * (n - 1));
    std::nth_element(s.begin(), it, s.end());
    return *it;
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0)) spread = sd;
  if (!(spread > 0)) throw NumericalError("silverman_bandwidth: samples have zero spread");
  return 0.9 * spread * std::pow(n, -0.2);
}

double kde(const std::vector<double>& samples, double x, double bandwidth) {
  if (samples.empty() || !(bandwidth > 0)) throw ContractError("kde: need samples and a positive bandwidth");
  double s = 0;
  for (double v : samples) {
    const double u = (x - v) / bandwidth;
    s += std::exp(-0.5 * u * u);
  }
  return s / (static_cast<double>(samples.size()) * bandwidth * std::sqrt(2 * std::numbers::pi));
}

double spearman(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) throw ContractError("spearman: need at least 2 values");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = 0.5 * static_cast<double>(i + j);
    i = j + 1;
  }
  // Pearson between value ranks and positions.
  const double mean = 0.5 * static_cast<double>(n - 1);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rank[i] - mean, b = static_cast<double>(i) - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

ForcingScore mode_forcing_score(const MixtureSpec& mixture, const std::vector<double>& samples) {
  mixture.validate();
  if (mixture.dim() != 1 || mixture.weights.size() != 2)
    throw ContractError("mode_forcing_score: needs a 1-D mixture with two modes");
  const double m1 = mixture.means[0][0], m2 = mixture.means[1][0];
  const double s1 = mixture.stds[0], s2 = mixture.stds[1];
  if (std::abs(m1 - m2) < 6 * std::max(s1, s2))
    throw ContractError("mode_forcing_score: modes must be at least 6 standard deviations apart");
  ForcingScore out;
  out.bandwidth = silverman_bandwidth(samples);
  const double mid = 0.5 * (m1 + m2);
  const double h2 = out.bandwidth * out.bandwidth;
  const double smoothed_true =
      mixture.weights[0] * std::exp(log_normal(mid, m1, s1 * s1 + h2)) +
      mixture.weights[1] * std::exp(log_normal(mid, m2, s2 * s2 + h2));
  out.bridge_ratio = kde(samples, mid, out.bandwidth) / smoothed_true;
  for (std::size_t k = 0; k < 2; ++k) {
    const double mu = mixture.means[k][0], s = mixture.stds[k];
    std::size_t in = 0;
    for (double x : samples) in += std::abs(x - mu) <= 3 * s ? 1 : 0;
    out.mode_mass.push_back(static_cast<double>(in) / static_cast<double>(samples.size()));
  }
  return out;
}

ForcingScore mode_forcing_score(const MixtureSpec& mixture, const DiffusionSpec& diffusion, const ReverseModel& reverse,
                                int n, std::uint64_t seed) {
  Rng rng = substream(seed, {0xF0AC3ULL});
  std::vector<double> xs;
  for (const auto& x : sample_model(diffusion, reverse, n, rng)) xs.push_back(x.at(0));
  return mode_forcing_score(mixture, xs);
}

std::vector<SweepRow> mode_forcing_sweep(const MixtureSpec& mixture, const std::vector<double>& sigmas,
                                         const SweepOptions& options, std::uint64_t seed) {
  mixture.validate();
  std::vector<SweepRow> rows;
  {
    // Exact sampler: bound and likelihood are both the data log-density.
    Rng rng = substream(seed, {0x5E1FULL});
    std::vector<double> xs;
    double ll = 0;
    for (int i = 0; i < options.samples; ++i) {
      xs.push_back(mixture.sample(rng).at(0));
      ll += mixture.log_density({xs.back()});
    }
    ll /= options.samples;
    const ForcingScore f = mode_forcing_score(mixture, xs);
    rows.push_back({0.0, ll, ll, f.bridge_ratio, f.mode_mass[0], f.mode_mass[1]});
  }
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const DiffusionSpec diffusion = DiffusionSpec::constant(options.steps, sigmas[i]);
    const std::uint64_t s = substream_seed(seed, {static_cast<std::uint64_t>(i)});
    const FitResult fit = fit_reverse(mixture, diffusion, options.fit, s);
    const ElboEstimate e = elbo(mixture, diffusion, fit.model, options.elbo_trajectories, s, 1);
    const ForcingScore f = mode_forcing_score(mixture, diffusion, fit.model, options.samples, s);
    rows.push_back({sigmas[i], e.direct, e.loglik, f.bridge_ratio, f.mode_mass[0], f.mode_mass[1]});
  }
  return rows;
}

}  // namespace chimle
