#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "d2c/data.hpp"
#include "d2c/error.hpp"
#include "d2c/matrix.hpp"
#include "d2c/metrics.hpp"
#include "d2c/params.hpp"
#include "d2c/rng.hpp"

namespace d2c {

enum class Activation { relu };

/// Fully connected softmax classifier: layer_sizes = [d, h_1, ..., h_L, K].
struct MLPConfig {
  std::vector<std::size_t> layer_sizes;
  Activation hidden_activation = Activation::relu;
  double dropout_p = 0.0;  ///< inverted dropout on hidden activations, training only
  std::uint64_t seed = 0;  ///< initialization seed

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }

  void validate() const {
    detail::require(layer_sizes.size() >= 2, "mlp: need at least input and output sizes");
    for (std::size_t s : layer_sizes) detail::require(s >= 1, "mlp: layer sizes must be >= 1");
    detail::require(num_classes() >= 2, "mlp: output layer needs K >= 2");
    detail::require(dropout_p >= 0.0 && dropout_p < 1.0, "mlp: dropout must lie in [0,1)");
  }

  ParamShape shape() const {
    validate();
    ParamShape s;
    for (std::size_t l = 1; l < layer_sizes.size(); ++l)
      s.push_back({LayerKind::dense, static_cast<std::uint32_t>(layer_sizes[l]),
                   static_cast<std::uint32_t>(layer_sizes[l - 1])});
    return s;
  }
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t local_epochs = 1;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(batch_size >= 1, "train: batch size must be >= 1");
    detail::require(local_epochs >= 1, "train: local epochs must be >= 1");
    detail::require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train: learning rate must be >= 0");
    detail::require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train: adam betas must lie in [0,1)");
    detail::require(adam_eps > 0.0, "train: adam eps must be > 0");
  }
};

struct TrainStats {
  std::size_t rows_visited = 0;     ///< rows consumed by gradient steps
  double last_epoch_loss = 0.0;     ///< mean minibatch loss over the final epoch
};

constexpr double kProbFloor = 1e-12;

/// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const MLPConfig& cfg) {
  const ParamShape shape = cfg.shape();
  std::vector<double> values;
  values.reserve(param_count(shape));
  Rng rng = make_rng(cfg.seed, {0x696e6974});
  for (const auto& l : shape) {
    const double limit = std::sqrt(6.0 / static_cast<double>(l.rows + l.cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < static_cast<std::size_t>(l.rows) * l.cols; ++i) values.push_back(u(rng));
    values.insert(values.end(), l.rows, 0.0);
  }
  return ParamVector(shape, std::move(values));
}

namespace detail {

inline void check_compatible(const ParamVector& p, const MLPConfig& cfg) {
  require(p.shape() == cfg.shape(), "mlp: parameter shape does not match config");
}

/// Per-batch activations kept for the backward pass.
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<std::vector<double>> act;   ///< act[0] input, act[l] output of layer l (post-dropout)
  std::vector<std::vector<double>> pre;   ///< pre[l] pre-activation of layer l (l >= 1)
  std::vector<std::vector<double>> mask;  ///< dropout scale per hidden unit, empty when off
};

inline void softmax_rows(std::span<const double> logits, std::span<double> out, std::size_t batch, std::size_t k) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = logits.data() + b * k;
    double* p = out.data() + b * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - zmax);
      sum += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= sum;
  }
}

/// Runs the network on cache.act[0] (batch rows); leaves probabilities in cache.act.back().
inline void forward_pass(std::span<const double> theta, const MLPConfig& cfg, ForwardCache& cache, double dropout_p,
                         Rng* rng) {
  const auto& sizes = cfg.layer_sizes;
  const std::size_t layers = sizes.size() - 1;
  const std::size_t batch = cache.batch;
  cache.act.resize(layers + 1);
  cache.pre.resize(layers + 1);
  cache.mask.assign(layers + 1, {});

  std::size_t offset = 0;
  for (std::size_t l = 1; l <= layers; ++l) {
    const std::size_t in = sizes[l - 1];
    const std::size_t out = sizes[l];
    const double* w = theta.data() + offset;
    const double* bias = w + in * out;
    offset += in * out + out;

    auto& z = cache.pre[l];
    z.assign(batch * out, 0.0);
    const auto& x = cache.act[l - 1];
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xb = x.data() + b * in;
      double* zb = z.data() + b * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wo = w + o * in;
        double acc = bias[o];
        for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xb[i];
        zb[o] = acc;
      }
    }

    auto& a = cache.act[l];
    a.resize(batch * out);
    if (l == layers) {
      softmax_rows(z, a, batch, out);
    } else {
      for (std::size_t j = 0; j < z.size(); ++j) a[j] = z[j] < 0.0 ? 0.0 : z[j];
      if (dropout_p > 0.0 && rng != nullptr) {
        auto& m = cache.mask[l];
        m.resize(a.size());
        std::bernoulli_distribution keep(1.0 - dropout_p);
        const double scale = 1.0 / (1.0 - dropout_p);
        for (std::size_t j = 0; j < a.size(); ++j) {
          m[j] = keep(*rng) ? scale : 0.0;
          a[j] *= m[j];
        }
      }
    }
  }
}

/// Mean cross-entropy over the batch; gradient into `grad` (same layout as theta), overwritten.
inline double backward_pass(std::span<const double> theta, const MLPConfig& cfg, const ForwardCache& cache,
                            std::span<const Label> labels, std::span<double> grad) {
  const auto& sizes = cfg.layer_sizes;
  const std::size_t layers = sizes.size() - 1;
  const std::size_t batch = cache.batch;
  const std::size_t k = sizes.back();
  const double inv_b = 1.0 / static_cast<double>(batch);

  const auto& probs = cache.act[layers];
  const auto& logits = cache.pre[layers];
  std::vector<double> delta(batch * k);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = logits.data() + b * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
    loss += zmax + std::log(sum) - z[labels[b]];
    for (std::size_t j = 0; j < k; ++j)
      delta[b * k + j] = (probs[b * k + j] - (j == labels[b] ? 1.0 : 0.0)) * inv_b;
  }
  loss *= inv_b;

  std::vector<std::size_t> offsets(layers + 1, 0);
  for (std::size_t l = 1; l <= layers; ++l) offsets[l] = offsets[l - 1] + sizes[l - 1] * sizes[l] + sizes[l];

  std::vector<double> below;
  for (std::size_t l = layers; l >= 1; --l) {
    const std::size_t in = sizes[l - 1];
    const std::size_t out = sizes[l];
    const double* w = theta.data() + offsets[l - 1];
    double* gw = grad.data() + offsets[l - 1];
    double* gb = gw + in * out;
    std::fill(gw, gw + in * out + out, 0.0);
    const auto& x = cache.act[l - 1];

    for (std::size_t b = 0; b < batch; ++b) {
      const double* db = delta.data() + b * out;
      const double* xb = x.data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = db[o];
        if (d == 0.0) continue;
        double* gwo = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) gwo[i] += d * xb[i];
        gb[o] += d;
      }
    }
    if (l == 1) break;

    below.assign(batch * in, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* db = delta.data() + b * out;
      double* nb = below.data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = db[o];
        if (d == 0.0) continue;
        const double* wo = w + o * in;
        for (std::size_t i = 0; i < in; ++i) nb[i] += d * wo[i];
      }
    }
    const auto& z = cache.pre[l - 1];
    const auto& m = cache.mask[l - 1];
    for (std::size_t j = 0; j < below.size(); ++j) {
      if (z[j] <= 0.0) below[j] = 0.0;
      else if (!m.empty()) below[j] *= m[j];
    }
    delta.swap(below);
  }
  return loss;
}

inline void load_rows(const Dataset& ds, std::span<const std::size_t> rows, ForwardCache& cache,
                      std::vector<Label>& labels) {
  const std::size_t d = ds.dims();
  cache.batch = rows.size();
  cache.act.resize(1);
  cache.act[0].resize(rows.size() * d);
  labels.resize(rows.size());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    auto r = ds.row(rows[b]);
    std::copy(r.begin(), r.end(), cache.act[0].begin() + static_cast<std::ptrdiff_t>(b * d));
    labels[b] = ds.label(rows[b]);
  }
}

inline void check_dataset(const Dataset& ds, const MLPConfig& cfg) {
  require(ds.dims() == cfg.input_dim(), "mlp: dataset has " + std::to_string(ds.dims()) +
                                            " features, network expects " + std::to_string(cfg.input_dim()));
  require(ds.num_classes() <= cfg.num_classes(), "mlp: dataset has more classes than the network outputs");
}

}  // namespace detail

/// Class probabilities (inference mode, no dropout), one row per input row.
inline Matrix forward(const ParamVector& p, const MLPConfig& cfg, const Matrix& x) {
  detail::check_compatible(p, cfg);
  detail::require(x.cols() == cfg.input_dim(), "forward: feature count does not match the network input");
  detail::ForwardCache cache;
  cache.batch = x.rows();
  cache.act = {x.data()};
  detail::forward_pass(p.values(), cfg, cache, 0.0, nullptr);
  return Matrix(x.rows(), cfg.num_classes(), std::move(cache.act.back()));
}

inline std::vector<Label> predict_classes(const ParamVector& p, const MLPConfig& cfg, const Matrix& x) {
  return argmax_rows(forward(p, cfg, x));
}

/// Mean cross-entropy over the whole dataset and its gradient (no dropout).
inline std::pair<double, std::vector<double>> loss_and_gradient(const ParamVector& p, const MLPConfig& cfg,
                                                                const Dataset& batch) {
  detail::check_compatible(p, cfg);
  detail::check_dataset(batch, cfg);
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), 0);
  detail::ForwardCache cache;
  std::vector<Label> labels;
  detail::load_rows(batch, rows, cache, labels);
  detail::forward_pass(p.values(), cfg, cache, 0.0, nullptr);
  std::vector<double> grad(p.size());
  const double loss = detail::backward_pass(p.values(), cfg, cache, labels, grad);
  return {loss, std::move(grad)};
}

inline double mean_loss(const ParamVector& p, const MLPConfig& cfg, const Dataset& ds) {
  const Matrix probs = forward(p, cfg, ds.features());
  double loss = 0.0;
  for (std::size_t r = 0; r < ds.size(); ++r) loss -= std::log(std::max(probs(r, ds.label(r)), kProbFloor));
  return loss / static_cast<double>(ds.size());
}

/// Runs exactly tc.local_epochs epochs of minibatch cross-entropy training and returns the
/// new parameters. Epoch e draws its shuffle and dropout masks from the stream keyed by
/// (tc.seed, epoch_offset + e), so two consecutive calls with matching offsets reproduce one
/// longer call bit for bit under sgd. Optimizer state starts fresh on every call.
inline ParamVector train_local(const ParamVector& p, const MLPConfig& cfg, const Dataset& shard,
                               const TrainConfig& tc, std::size_t epoch_offset = 0, TrainStats* stats = nullptr) {
  detail::check_compatible(p, cfg);
  detail::check_dataset(shard, cfg);
  tc.validate();

  std::vector<double> theta = p.values();
  std::vector<double> grad(theta.size());
  std::vector<double> m1, m2;
  if (tc.optimizer == Optimizer::adam) {
    m1.assign(theta.size(), 0.0);
    m2.assign(theta.size(), 0.0);
  }
  std::size_t step = 0;

  detail::ForwardCache cache;
  std::vector<Label> labels;
  std::vector<std::size_t> order(shard.size());
  TrainStats local;

  for (std::size_t e = 0; e < tc.local_epochs; ++e) {
    Rng rng = make_rng(tc.seed, {epoch_offset + e});
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t len = std::min(tc.batch_size, order.size() - start);
      detail::load_rows(shard, std::span<const std::size_t>(order).subspan(start, len), cache, labels);
      detail::forward_pass(theta, cfg, cache, cfg.dropout_p, &rng);
      const double loss = detail::backward_pass(theta, cfg, cache, labels, grad);
      if (!std::isfinite(loss)) throw DivergenceError(epoch_offset + e, batches);
      epoch_loss += loss;
      ++batches;
      local.rows_visited += len;

      const double lr = tc.learning_rate;
      bool finite = true;
      if (tc.optimizer == Optimizer::sgd) {
        for (std::size_t j = 0; j < theta.size(); ++j) {
          theta[j] -= lr * grad[j];
          finite = finite && std::isfinite(theta[j]);
        }
      } else {
        ++step;
        const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
        for (std::size_t j = 0; j < theta.size(); ++j) {
          m1[j] = tc.beta1 * m1[j] + (1.0 - tc.beta1) * grad[j];
          m2[j] = tc.beta2 * m2[j] + (1.0 - tc.beta2) * grad[j] * grad[j];
          theta[j] -= lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + tc.adam_eps);
          finite = finite && std::isfinite(theta[j]);
        }
      }
      if (!finite) throw DivergenceError(epoch_offset + e, batches - 1);
    }
    local.last_epoch_loss = epoch_loss / static_cast<double>(batches);
  }
  if (stats != nullptr) *stats = local;
  return ParamVector(p.shape(), std::move(theta));
}

using GradientFn = std::function<std::vector<double>(const ParamVector&, const MLPConfig&, const Dataset&)>;

inline std::vector<double> analytic_gradient(const ParamVector& p, const MLPConfig& cfg, const Dataset& batch) {
  return loss_and_gradient(p, cfg, batch).second;
}

/// Max over a random sample of up to 100 coordinates of
/// |analytic - central difference| / max(1, |analytic|).
inline double grad_check(const ParamVector& p, const MLPConfig& cfg, const Dataset& batch, double h = 1e-5,
                         std::uint64_t seed = 0, const GradientFn& gradient = analytic_gradient) {
  detail::require(h > 0.0, "grad_check: step must be positive");
  const std::vector<double> g = gradient(p, cfg, batch);
  detail::require(g.size() == p.size(), "grad_check: gradient length mismatch");

  std::vector<std::size_t> coords(p.size());
  std::iota(coords.begin(), coords.end(), 0);
  Rng rng = make_rng(seed, {0x67726164});
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(std::min<std::size_t>(coords.size(), 100));

  double worst = 0.0;
  std::vector<double> probe = p.values();
  for (std::size_t j : coords) {
    const double orig = probe[j];
    probe[j] = orig + h;
    const double up = mean_loss(ParamVector(p.shape(), probe), cfg, batch);
    probe[j] = orig - h;
    const double down = mean_loss(ParamVector(p.shape(), probe), cfg, batch);
    probe[j] = orig;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(g[j] - numeric) / std::max(1.0, std::abs(g[j])));
  }
  return worst;
}

}  // namespace d2c
