#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "d2c/aggregate.hpp"
#include "d2c/error.hpp"
#include "d2c/linear.hpp"
#include "d2c/matrix.hpp"
#include "d2c/mlp.hpp"
#include "d2c/parallel.hpp"
#include "d2c/rng.hpp"

namespace d2c::theory {

/// k jointly Gaussian zero-mean errors, variance s each, pairwise covariance c.
struct CorrelatedErrorSpec {
  std::size_t k = 2;
  double s = 1.0;
  double c = 0.0;
  std::size_t trials = 200000;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(k >= 1, "variance check: need k >= 1");
    detail::require(s > 0.0, "variance check: need s > 0");
    detail::require(trials >= 2, "variance check: need at least 2 trials");
    detail::require(std::abs(c) <= s, "variance check: need |c| <= s");
    if (k > 1)
      detail::require(c >= -s / static_cast<double>(k - 1),
                      "variance check: covariance not positive semidefinite (need c >= -s/(k-1))");
  }
};

struct VarianceEstimate {
  double estimated = 0.0;
  double theoretical = 0.0;
  double tolerance = 0.0;  ///< four standard errors of the sample variance

  bool pass() const noexcept { return std::abs(estimated - theoretical) <= tolerance; }
};

/// (s + c(k-1)) / k
inline double uniform_variance(std::size_t k, double s, double c) noexcept {
  const double kd = static_cast<double>(k);
  return (s + c * (kd - 1.0)) / kd;
}

/// s sum alpha_i^2 + c sum_{i != l} alpha_i alpha_l
inline double weighted_variance(std::span<const double> alpha, double s, double c) noexcept {
  double sq = 0.0, sum = 0.0;
  for (double a : alpha) {
    sq += a * a;
    sum += a;
  }
  return s * sq + c * (sum * sum - sq);
}

namespace detail {

constexpr std::size_t kBlock = 8192;

struct Moments {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) noexcept {
    n += 1.0;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  void merge(const Moments& o) noexcept {
    if (o.n == 0.0) return;
    const double total = n + o.n;
    const double d = o.mean - mean;
    mean += d * o.n / total;
    m2 += o.m2 + d * d * n * o.n / total;
    n = total;
  }
  double variance() const noexcept { return m2 / (n - 1.0); }
};

/// Sample variance of sum_i alpha_i e_i where e = A z, z standard normal, with
/// e_i = scale_i z_i + shared * mean(z). Blocks are seeded independently and merged in order.
inline Moments simulate(std::span<const double> alpha, std::span<const double> scale, double shared,
                        std::size_t trials, std::uint64_t seed) {
  const std::size_t k = alpha.size();
  const std::size_t blocks = (trials + kBlock - 1) / kBlock;
  std::vector<Moments> parts(blocks);
  parallel_for(blocks, default_thread_count(), [&](std::size_t b) {
    Rng rng = make_rng(seed, {0x6d63, b});
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> z(k);
    const std::size_t count = std::min(kBlock, trials - b * kBlock);
    Moments m;
    for (std::size_t t = 0; t < count; ++t) {
      double zbar = 0.0;
      for (auto& v : z) {
        v = gauss(rng);
        zbar += v;
      }
      zbar /= static_cast<double>(k);
      double avg = 0.0;
      for (std::size_t i = 0; i < k; ++i) avg += alpha[i] * (scale[i] * z[i] + shared * zbar);
      m.add(avg);
    }
    parts[b] = m;
  });
  Moments total;
  for (const auto& p : parts) total.merge(p);
  return total;
}

inline double four_sigma(double variance, std::size_t trials) noexcept {
  return 4.0 * variance * std::sqrt(2.0 / static_cast<double>(trials - 1));
}

}  // namespace detail

/// Monte Carlo variance of a weighted average of equicorrelated errors against
/// s sum alpha^2 + c sum_{i != l} alpha_i alpha_l.
///
/// Sampling uses the spectral factorization of (s - c) I + c 11^T:
/// e = sqrt(s - c) z + (sqrt(s + (k-1)c) - sqrt(s - c)) mean(z) 1, valid for every PSD (s, c).
inline VarianceEstimate mc_variance_weighted(std::span<const double> alpha, const CorrelatedErrorSpec& spec) {
  spec.validate();
  d2c::detail::require(alpha.size() == spec.k, "variance check: need k weights");
  double sum = 0.0;
  for (double a : alpha) {
    d2c::detail::require(a >= 0.0, "variance check: weights must be >= 0");
    sum += a;
  }
  d2c::detail::require(std::abs(sum - 1.0) <= 1e-9, "variance check: weights must sum to 1");

  const double kd = static_cast<double>(spec.k);
  const double indep = std::sqrt(spec.s - spec.c);
  const double along_ones = std::sqrt(std::max(0.0, spec.s + (kd - 1.0) * spec.c));
  const std::vector<double> scale(spec.k, indep);
  const auto m = detail::simulate(alpha, scale, along_ones - indep, spec.trials, spec.seed);

  VarianceEstimate out;
  out.estimated = m.variance();
  out.theoretical = weighted_variance(alpha, spec.s, spec.c);
  out.tolerance = detail::four_sigma(std::max(out.theoretical, out.estimated), spec.trials);
  return out;
}

/// Uniform 1/k averaging; the theoretical value is the closed form (s + c(k-1))/k.
inline VarianceEstimate mc_variance_uniform(const CorrelatedErrorSpec& spec) {
  spec.validate();
  const std::vector<double> alpha(spec.k, 1.0 / static_cast<double>(spec.k));
  auto out = mc_variance_weighted(alpha, spec);
  out.theoretical = uniform_variance(spec.k, spec.s, spec.c);
  out.tolerance = detail::four_sigma(std::max(out.theoretical, out.estimated), spec.trials);
  return out;
}

/// Independent edge errors with per-edge variances: sum alpha_i^2 s_i.
inline double heterogeneous_variance(std::span<const double> alpha, std::span<const double> variances) {
  d2c::detail::require(alpha.size() == variances.size(), "heterogeneous_variance: length mismatch");
  double v = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) v += alpha[i] * alpha[i] * variances[i];
  return v;
}

inline VarianceEstimate mc_variance_heterogeneous(std::span<const double> alpha, std::span<const double> variances,
                                                  std::size_t trials, std::uint64_t seed) {
  d2c::detail::require(alpha.size() == variances.size() && !alpha.empty(), "heterogeneous: length mismatch");
  d2c::detail::require(trials >= 2, "heterogeneous: need at least 2 trials");
  std::vector<double> scale(variances.size());
  for (std::size_t i = 0; i < scale.size(); ++i) {
    d2c::detail::require(variances[i] > 0.0, "heterogeneous: variances must be > 0");
    scale[i] = std::sqrt(variances[i]);
  }
  const auto m = detail::simulate(alpha, scale, 0.0, trials, seed);
  VarianceEstimate out;
  out.estimated = m.variance();
  out.theoretical = heterogeneous_variance(alpha, variances);
  out.tolerance = detail::four_sigma(std::max(out.theoretical, out.estimated), trials);
  return out;
}

// ---------------------------------------------------------------------------
// Averaging equivalence

/// max over probe rows of |f_avg(x) - sum_i alpha_i f_i(x)| for linear models; zero up to
/// rounding because prediction is linear in the parameters.
inline double linear_average_equivalence(std::span<const LinearModel> models, std::span<const double> alpha,
                                         const Matrix& probes) {
  const LinearModel avg = average_linear(models, alpha);
  d2c::detail::require(probes.cols() == avg.dims(), "linear_average_equivalence: probe dimension mismatch");
  double worst = 0.0;
  for (std::size_t r = 0; r < probes.rows(); ++r) {
    double mixed = 0.0;
    for (std::size_t k = 0; k < models.size(); ++k) mixed += alpha[k] * predict_linear(models[k], probes.row(r));
    worst = std::max(worst, std::abs(predict_linear(avg, probes.row(r)) - mixed));
  }
  return worst;
}

/// Same comparison for softmax MLPs, over every class probability. Nonzero in general.
inline double mlp_average_deviation(std::span<const ParamVector> params, std::span<const double> alpha,
                                    const MLPConfig& cfg, const Matrix& probes) {
  const ParamVector avg = aggregate_params(params, alpha);
  const Matrix merged = forward(avg, cfg, probes);
  Matrix mixed(probes.rows(), cfg.num_classes(), 0.0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix p = forward(params[k], cfg, probes);
    for (std::size_t j = 0; j < p.data().size(); ++j) mixed.data()[j] += alpha[k] * p.data()[j];
  }
  double worst = 0.0;
  for (std::size_t j = 0; j < merged.data().size(); ++j)
    worst = std::max(worst, std::abs(merged.data()[j] - mixed.data()[j]));
  return worst;
}

// ---------------------------------------------------------------------------
// Noise decomposition

struct NoiseSpec {
  double sigma = 0.5;
  std::size_t m = 100000;  ///< test draws
  std::uint64_t seed = 0;
};

struct Decomposition {
  double observed = 0.0;    ///< mean (yhat - y)^2 against noisy labels
  double decomposed = 0.0;  ///< mean (yhat - f)^2 + sigma^2
};

/// Draws x ~ N(0, I), y = f(x) + N(0, sigma^2) and compares the observed test MSE with the
/// noise-free prediction error plus sigma^2.
inline Decomposition mse_noise_decomposition(const NoiseSpec& spec, const LinearModel& truth,
                                             const LinearModel& fitted) {
  d2c::detail::require(spec.m >= 1, "noise decomposition: need m >= 1");
  d2c::detail::require(spec.sigma >= 0.0, "noise decomposition: need sigma >= 0");
  d2c::detail::require(truth.dims() == fitted.dims(), "noise decomposition: dimension mismatch");
  Rng rng = make_rng(spec.seed, {0x6e6f6973});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(truth.dims());
  double observed = 0.0, pred = 0.0;
  for (std::size_t t = 0; t < spec.m; ++t) {
    for (auto& v : x) v = gauss(rng);
    const double f = predict_linear(truth, x);
    const double y = f + spec.sigma * gauss(rng);
    const double yhat = predict_linear(fitted, x);
    observed += (yhat - y) * (yhat - y);
    pred += (yhat - f) * (yhat - f);
  }
  const double md = static_cast<double>(spec.m);
  return {observed / md, pred / md + spec.sigma * spec.sigma};
}

struct TrainingDecomposition {
  double observed = 0.0;     ///< mean training MSE against noisy labels
  double decomposed = 0.0;   ///< mean (yhat - f)^2 + sigma^2 - 2 sigma^2 tr(H) / n
  double hat_trace = 0.0;    ///< mean of sum_i d yhat_i / d y_i over trials
};

namespace detail {

/// Solves the SPD system A x = b by Cholesky; A is p x p row-major.
inline std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, std::size_t p) {
  for (std::size_t j = 0; j < p; ++j) {
    double d = a[j * p + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
    d2c::detail::require(d > 0.0, "least squares: design matrix is rank deficient");
    a[j * p + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < p; ++i) {
      double v = a[i * p + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * p + k] * a[j * p + k];
      a[i * p + j] = v / a[j * p + j];
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < i; ++k) b[i] -= a[i * p + k] * b[k];
    b[i] /= a[i * p + i];
  }
  for (std::size_t i = p; i-- > 0;) {
    for (std::size_t k = i + 1; k < p; ++k) b[i] -= a[k * p + i] * b[k];
    b[i] /= a[i * p + i];
  }
  return b;
}

}  // namespace detail

/// Ordinary least squares with intercept on n noisy training points, repeated `trials` times.
/// The training error understates the noise by 2 sigma^2 tr(H)/n, where the derivative of each
/// fitted value with respect to its own label is the hat-matrix diagonal.
inline TrainingDecomposition ols_training_decomposition(const LinearModel& truth, std::size_t n, double sigma,
                                                        std::size_t trials, std::uint64_t seed) {
  const std::size_t d = truth.dims();
  const std::size_t p = d + 1;
  d2c::detail::require(n > p, "ols decomposition: need more rows than parameters");
  d2c::detail::require(trials >= 1, "ols decomposition: need trials >= 1");
  Rng rng = make_rng(seed, {0x6f6c73});
  std::normal_distribution<double> gauss(0.0, 1.0);

  TrainingDecomposition out;
  Matrix x(n, p);
  std::vector<double> f(n), y(n);
  for (std::size_t t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (std::size_t j = 1; j < p; ++j) x(i, j) = gauss(rng);
      f[i] = predict_linear(truth, x.row(i).subspan(1));
      y[i] = f[i] + sigma * gauss(rng);
    }
    std::vector<double> gram(p * p, 0.0), rhs(p, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < p; ++a) {
        rhs[a] += x(i, a) * y[i];
        for (std::size_t b = 0; b < p; ++b) gram[a * p + b] += x(i, a) * x(i, b);
      }
    const auto beta = detail::cholesky_solve(gram, rhs, p);

    double train = 0.0, pred = 0.0, trace = 0.0;
    std::vector<double> unit(p);
    for (std::size_t i = 0; i < n; ++i) {
      double yhat = 0.0;
      for (std::size_t a = 0; a < p; ++a) yhat += beta[a] * x(i, a);
      train += (yhat - y[i]) * (yhat - y[i]);
      pred += (yhat - f[i]) * (yhat - f[i]);
      std::vector<double> xi(x.row(i).begin(), x.row(i).end());
      const auto h = detail::cholesky_solve(gram, xi, p);
      for (std::size_t a = 0; a < p; ++a) trace += x(i, a) * h[a];
    }
    const double nd = static_cast<double>(n);
    out.observed += train / nd;
    out.decomposed += pred / nd + sigma * sigma - 2.0 * sigma * sigma * trace / nd;
    out.hat_trace += trace;
  }
  const double td = static_cast<double>(trials);
  out.observed /= td;
  out.decomposed /= td;
  out.hat_trace /= td;
  return out;
}

// ---------------------------------------------------------------------------
// Moment identities on finite samples

struct IdentityReport {
  double var_central = 0.0;      ///< mean (X - mean X)^2
  double var_moments = 0.0;      ///< mean X^2 - (mean X)^2
  double cov_central = 0.0;      ///< mean (X - mean X)(Y - mean Y) on paired halves
  double cov_moments = 0.0;      ///< mean XY - mean X mean Y
  double combo_direct = 0.0;     ///< population variance of aX + bY
  double combo_expanded = 0.0;   ///< a^2 Var X + b^2 Var Y + 2ab Cov(X, Y)
  double var_rel_error = 0.0;
  double cov_rel_error = 0.0;
  double combo_rel_error = 0.0;

  bool pass(double tol = 1e-9) const noexcept {
    return var_rel_error <= tol && cov_rel_error <= tol && combo_rel_error <= tol;
  }
};

/// Checks the variance/covariance identities on the empirical distribution of `samples`.
/// X is the whole sequence for the variance identity; for the covariance and linear
/// combination identities X and Y are the first and second halves, paired by position.
/// Relative errors are measured against the second-moment scale of the quantities involved,
/// the magnitude the cancellation in the moment form is exposed to.
inline IdentityReport variance_identities_check(std::span<const double> samples, double a = 2.0, double b = -3.0) {
  if (samples.size() < 2) throw InvalidArgument("variance identities: need at least 2 samples");
  auto mean = [](std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  auto mean_prod = [](std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s / static_cast<double>(u.size());
  };
  auto central = [&](std::span<const double> u, std::span<const double> v) {
    const double mu = mean(u), mv = mean(v);
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - mu) * (v[i] - mv);
    return s / static_cast<double>(u.size());
  };
  auto rel = [](double lhs, double rhs, double scale) {
    const double denom = std::max({std::abs(lhs), std::abs(rhs), scale});
    return denom > 0.0 ? std::abs(lhs - rhs) / denom : 0.0;
  };

  IdentityReport r;
  const double ex = mean(samples);
  r.var_central = central(samples, samples);
  r.var_moments = mean_prod(samples, samples) - ex * ex;
  r.var_rel_error = rel(r.var_central, r.var_moments, mean_prod(samples, samples));

  const std::size_t half = samples.size() / 2;
  const auto x = samples.subspan(0, half);
  const auto y = samples.subspan(half, half);
  const double mx = mean(x), my = mean(y);
  const double sxx = mean_prod(x, x), syy = mean_prod(y, y);
  r.cov_central = central(x, y);
  r.cov_moments = mean_prod(x, y) - mx * my;
  r.cov_rel_error = rel(r.cov_central, r.cov_moments, std::sqrt(sxx * syy));

  std::vector<double> combo(half);
  for (std::size_t i = 0; i < half; ++i) combo[i] = a * x[i] + b * y[i];
  r.combo_direct = central(combo, combo);
  r.combo_expanded = a * a * central(x, x) + b * b * central(y, y) + 2.0 * a * b * r.cov_central;
  r.combo_rel_error = rel(r.combo_direct, r.combo_expanded, a * a * sxx + b * b * syy);
  return r;
}

}  // namespace d2c::theory
