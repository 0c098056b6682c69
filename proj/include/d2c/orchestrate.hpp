#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "d2c/aggregate.hpp"
#include "d2c/data.hpp"
#include "d2c/error.hpp"
#include "d2c/metrics.hpp"
#include "d2c/mlp.hpp"
#include "d2c/parallel.hpp"
#include "d2c/params.hpp"
#include "d2c/rng.hpp"

namespace d2c {

enum class Method { traditional, d2c, dua_d2c };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::traditional: return "traditional";
    case Method::d2c: return "d2c";
    case Method::dua_d2c: return "dua-d2c";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "traditional") return Method::traditional;
  if (s == "d2c") return Method::d2c;
  if (s == "dua-d2c" || s == "dua_d2c") return Method::dua_d2c;
  throw InvalidArgument("unknown method '" + s + "' (expected traditional, d2c or dua-d2c)");
}

/// Jittered copies added to every shard after splitting.
struct AugmentConfig {
  std::size_t multiplier = 1;
  double jitter_sigma = 0.0;
};

struct RunConfig {
  Method method = Method::dua_d2c;
  std::size_t subsets = 3;        ///< N
  std::size_t global_epochs = 10; ///< E_global; the local epoch count E lives in train.local_epochs
  TrainConfig train;
  WeightingConfig weighting;
  MLPConfig model;
  SplitSpec split;
  AugmentConfig augment;
  std::uint64_t master_seed = 0;

  std::size_t local_epochs() const noexcept { return train.local_epochs; }

  void validate() const {
    detail::require(subsets >= 1, "run: need N >= 1");
    detail::require(global_epochs >= 1, "run: need E_global >= 1");
    if (method == Method::traditional)
      detail::require(subsets == 1, "run: method traditional requires N = 1 (got N = " + std::to_string(subsets) + ")");
    detail::require(augment.multiplier >= 1, "run: augmentation multiplier must be >= 1");
    detail::require(augment.jitter_sigma >= 0.0, "run: jitter sigma must be >= 0");
    train.validate();
    weighting.validate();
    model.validate();
  }
};

struct EpochRecord {
  std::size_t global_epoch = 0;  ///< 1-based
  double central_val_loss = 0.0;
  double central_val_acc = 0.0;
  std::vector<double> edge_train_loss;
  std::vector<double> val_accuracy;
  std::vector<double> mean_entropy;
  AggregationWeights weights;
  double seconds = 0.0;

  double mean_edge_train_loss() const {
    double s = 0.0;
    for (double v : edge_train_loss) s += v;
    return s / static_cast<double>(edge_train_loss.size());
  }
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  std::vector<std::uint64_t> shard_fingerprints;
  std::vector<std::size_t> shard_sizes;
  std::vector<std::size_t> rows_visited;  ///< per edge, summed over the run
  Evaluation train;  ///< final central model on the training rows it was given
  Evaluation val;
  Evaluation test;
};

struct RunResult {
  ParamVector params;
  RunLog log;
};

struct RunOptions {
  std::size_t threads = 0;  ///< 0: default_thread_count()
  /// Called with each global epoch's reports before they are weighted (test hook).
  std::function<void(std::size_t global_epoch, std::vector<EdgeReport>& reports)> review_reports;
  /// Replaces edge_seed() for the edge training streams (test hook).
  std::function<std::uint64_t(std::size_t edge)> edge_seed_override;
};

namespace detail {

inline void check_compatible_data(const RunConfig& cfg, const Dataset& ref, const Dataset& other, const char* what) {
  require(other.dims() == ref.dims(), std::string("run: ") + what + " feature count differs from training data");
  require(other.num_classes() == ref.num_classes(), std::string("run: ") + what + " class count differs");
  require(cfg.model.input_dim() == ref.dims(), "run: model input size does not match the data");
  require(cfg.model.num_classes() == ref.num_classes(), "run: model output size does not match K");
  require(cfg.weighting.num_classes == ref.num_classes(), "run: weighting K does not match the data");
}

inline Dataset concat(const std::vector<Dataset>& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  Matrix x(n, parts.front().dims());
  std::vector<Label> y;
  y.reserve(n);
  std::size_t r = 0;
  for (const auto& p : parts)
    for (std::size_t i = 0; i < p.size(); ++i, ++r) {
      std::copy(p.row(i).begin(), p.row(i).end(), x.row(r).begin());
      y.push_back(p.label(i));
    }
  return Dataset(std::move(x), std::move(y), parts.front().num_classes());
}

inline Evaluation evaluate_model(const ParamVector& p, const MLPConfig& cfg, const Dataset& ds) {
  return evaluate(forward(p, cfg, ds.features()), ds.labels(), ds.num_classes());
}

}  // namespace detail

/// Seed of edge `edge`'s training stream; epoch e of global round g draws from
/// (edge seed, g * E + e).
inline std::uint64_t edge_seed(std::uint64_t master_seed, std::size_t edge) {
  return derive_seed(master_seed, {0x65646765, edge});
}

/// Weights for one round of reports under the given method. Confidence and composite scores
/// are recorded for every method; only dua-d2c aggregates with them.
inline AggregationWeights round_weights(Method method, std::span<const double> acc, std::span<const double> ent,
                                        const WeightingConfig& cfg) {
  AggregationWeights w = uncertainty_weights(acc, ent, cfg);
  if (method == Method::d2c || method == Method::traditional) {
    w.alpha = uniform_weights(acc.size());
    w.fallback = false;
  }
  return w;
}

/// The global loop on pre-built shards: broadcast the central parameters, train every edge
/// for E local epochs on its own shard, score each edge on `val`, weight, aggregate; repeat
/// E_global times. Edges of one round train concurrently; their results are combined in
/// edge order, so the outcome does not depend on the thread count.
inline RunResult run_sharded(const RunConfig& cfg, const ShardSet& shards, const Dataset& val, const Dataset& test,
                             const RunOptions& opts = {}) {
  cfg.validate();
  detail::require(shards.size() == cfg.subsets, "run: shard count does not match N");
  const Dataset& ref = shards.shards.front();
  detail::check_compatible_data(cfg, ref, val, "validation");
  detail::check_compatible_data(cfg, ref, test, "test");
  for (const auto& s : shards.shards) detail::check_compatible_data(cfg, ref, s, "shard");

  const std::size_t n_edges = cfg.subsets;
  const std::size_t threads = opts.threads > 0 ? opts.threads : default_thread_count();
  const std::size_t local_epochs = cfg.train.local_epochs;

  RunResult result;
  RunLog& log = result.log;
  for (const auto& s : shards.shards) {
    log.shard_fingerprints.push_back(s.fingerprint());
    log.shard_sizes.push_back(s.size());
  }
  log.rows_visited.assign(n_edges, 0);

  ParamVector central = init_params(cfg.model);

  for (std::size_t g = 0; g < cfg.global_epochs; ++g) {
    const auto started = std::chrono::steady_clock::now();
    std::vector<EdgeReport> reports(n_edges);
    std::vector<TrainStats> stats(n_edges);
    std::vector<double> train_loss(n_edges);

    parallel_for(n_edges, threads, [&](std::size_t i) {
      TrainConfig tc = cfg.train;
      tc.seed = opts.edge_seed_override ? opts.edge_seed_override(i) : edge_seed(cfg.master_seed, i);
      const Dataset& shard_i = shards.shards[i];
      ParamVector trained = train_local(central, cfg.model, shard_i, tc, g * local_epochs, &stats[i]);
      const Matrix probs = forward(trained, cfg.model, val.features());
      const Evaluation ev = evaluate(probs, val.labels(), val.num_classes());
      train_loss[i] = mean_loss(trained, cfg.model, shard_i);
      reports[i] = EdgeReport{i, std::move(trained), ev.accuracy, ev.mean_entropy};
    });

    if (opts.review_reports) opts.review_reports(g + 1, reports);

    EpochRecord rec;
    rec.global_epoch = g + 1;
    std::vector<ParamVector> edge_params;
    edge_params.reserve(n_edges);
    for (std::size_t i = 0; i < n_edges; ++i) {
      rec.val_accuracy.push_back(reports[i].val_accuracy);
      rec.mean_entropy.push_back(reports[i].mean_entropy);
      edge_params.push_back(std::move(reports[i].params));
      log.rows_visited[i] += stats[i].rows_visited;
    }
    rec.weights = round_weights(cfg.method, rec.val_accuracy, rec.mean_entropy, cfg.weighting);
    central = aggregate_params(edge_params, rec.weights.alpha);

    const Evaluation central_val = detail::evaluate_model(central, cfg.model, val);
    rec.central_val_loss = central_val.log_loss;
    rec.central_val_acc = central_val.accuracy;
    rec.edge_train_loss = std::move(train_loss);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.epochs.push_back(std::move(rec));
  }

  log.train = detail::evaluate_model(central, cfg.model, detail::concat(shards.shards));
  log.val = detail::evaluate_model(central, cfg.model, val);
  log.test = detail::evaluate_model(central, cfg.model, test);
  result.params = std::move(central);
  return result;
}

/// Shards `train` once (then augments the shards if configured) and runs the global loop.
inline RunResult run(const RunConfig& cfg, const Dataset& train, const Dataset& val, const Dataset& test,
                     const RunOptions& opts = {}) {
  cfg.validate();
  ShardSet shards = shard(train, cfg.subsets, derive_seed(cfg.master_seed, {0x7368}));
  if (cfg.augment.multiplier > 1)
    shards = augment_shards(shards, cfg.augment.jitter_sigma, cfg.augment.multiplier,
                            derive_seed(cfg.master_seed, {0x6175}));
  RunResult r = run_sharded(cfg, shards, val, test, opts);
  if (cfg.augment.multiplier == 1) r.log.train = detail::evaluate_model(r.params, cfg.model, train);
  return r;
}

// ---------------------------------------------------------------------------
// Decision grids

struct Box {
  double x_min = -1.0, x_max = 1.0, y_min = -1.0, y_max = 1.0;
};

/// Row-major lattice of predicted classes; row r spans y, column c spans x, each cell sampled
/// at its center.
struct DecisionGrid {
  std::size_t resolution = 0;
  Box box;
  std::vector<Label> classes;

  Label at(std::size_t r, std::size_t c) const { return classes[r * resolution + c]; }
  double x(std::size_t c) const {
    return box.x_min + (static_cast<double>(c) + 0.5) * (box.x_max - box.x_min) / static_cast<double>(resolution);
  }
  double y(std::size_t r) const {
    return box.y_min + (static_cast<double>(r) + 0.5) * (box.y_max - box.y_min) / static_cast<double>(resolution);
  }
};

inline DecisionGrid decision_grid(const ParamVector& params, const MLPConfig& cfg, const Box& box,
                                  std::size_t resolution) {
  detail::require(cfg.input_dim() == 2, "decision_grid: needs a 2-feature model");
  detail::require(resolution >= 1, "decision_grid: resolution must be >= 1");
  detail::require(box.x_max > box.x_min && box.y_max > box.y_min, "decision_grid: empty box");
  DecisionGrid grid{resolution, box, {}};
  Matrix pts(resolution * resolution, 2);
  for (std::size_t r = 0; r < resolution; ++r)
    for (std::size_t c = 0; c < resolution; ++c) {
      pts(r * resolution + c, 0) = grid.x(c);
      pts(r * resolution + c, 1) = grid.y(r);
    }
  grid.classes = predict_classes(params, cfg, pts);
  return grid;
}

/// Cells with at least one 4-neighbour of a different class.
inline std::size_t boundary_cell_count(const DecisionGrid& g) {
  std::size_t count = 0;
  const std::size_t n = g.resolution;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const Label v = g.at(r, c);
      if ((r > 0 && g.at(r - 1, c) != v) || (r + 1 < n && g.at(r + 1, c) != v) || (c > 0 && g.at(r, c - 1) != v) ||
          (c + 1 < n && g.at(r, c + 1) != v))
        ++count;
    }
  return count;
}

/// Bounding box of the first two features, padded by `margin` times its extent.
inline Box bounding_box(const Dataset& ds, double margin = 0.1) {
  detail::require(ds.dims() >= 2, "bounding_box: need 2 features");
  Box b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
        std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    b.x_min = std::min(b.x_min, ds.row(i)[0]);
    b.x_max = std::max(b.x_max, ds.row(i)[0]);
    b.y_min = std::min(b.y_min, ds.row(i)[1]);
    b.y_max = std::max(b.y_max, ds.row(i)[1]);
  }
  const double px = std::max(margin * (b.x_max - b.x_min), 1e-6);
  const double py = std::max(margin * (b.y_max - b.y_min), 1e-6);
  return {b.x_min - px, b.x_max + px, b.y_min - py, b.y_max + py};
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
  std::vector<std::size_t> subsets;
  std::vector<std::size_t> local_epochs;
  std::vector<double> lambdas;
  std::vector<double> c_max;
  std::size_t reps = 1;
  RunConfig base;

  void validate() const {
    detail::require(!subsets.empty() && !local_epochs.empty() && !lambdas.empty() && !c_max.empty(),
                    "sweep: every grid needs at least one value");
    detail::require(reps >= 1, "sweep: need reps >= 1");
  }
};

struct SweepCell {
  std::size_t index = 0;
  std::size_t subsets = 0;
  std::size_t local_epochs = 0;
  double lambda = 0.0;
  double c_max = 0.0;
};

struct SweepRow {
  SweepCell cell;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  bool skipped = false;
  std::string reason;
  double val_accuracy = 0.0;
  double val_log_loss = 0.0;
  Evaluation test;
};

struct FieldStats {
  double mean = 0.0, min = 0.0, max = 0.0;
};

struct SweepSummaryRow {
  SweepCell cell;
  bool skipped = false;
  std::size_t runs = 0;
  std::size_t rank = 0;  ///< 1 = best; 0 for skipped cells
  double mean_val_accuracy = 0.0;
  double mean_val_log_loss = 0.0;
  /// accuracy, macro_f1, log_loss, mcc, cohen_kappa, roc_auc_ovr, mean_entropy
  std::array<FieldStats, 7> test;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepSummaryRow> summary;  ///< ranked cells first, then skipped cells
};

inline std::array<double, 7> evaluation_fields(const Evaluation& e) {
  return {e.accuracy, e.macro_f1, e.log_loss, e.mcc, e.cohen_kappa, e.roc_auc_ovr, e.mean_entropy};
}

inline const std::array<const char*, 7>& evaluation_field_names() {
  static const std::array<const char*, 7> names{"accuracy", "macro_f1",    "log_loss",    "mcc",
                                                "cohen_kappa", "roc_auc_ovr", "mean_entropy"};
  return names;
}

/// Orders cells by mean validation accuracy (descending), then mean validation log loss
/// (ascending), then grid position.
inline void rank_summary(std::vector<SweepSummaryRow>& summary) {
  std::stable_sort(summary.begin(), summary.end(), [](const SweepSummaryRow& a, const SweepSummaryRow& b) {
    if (a.skipped != b.skipped) return !a.skipped;
    if (a.skipped) return a.cell.index < b.cell.index;
    if (a.mean_val_accuracy != b.mean_val_accuracy) return a.mean_val_accuracy > b.mean_val_accuracy;
    if (a.mean_val_log_loss != b.mean_val_log_loss) return a.mean_val_log_loss < b.mean_val_log_loss;
    return a.cell.index < b.cell.index;
  });
  std::size_t rank = 0;
  for (auto& s : summary) s.rank = s.skipped ? 0 : ++rank;
}

/// Runs every grid cell `reps` times. Repetition r of every cell uses the same derived seeds
/// (master and initialization), so cells are compared on common random numbers. Cells whose
/// configuration or data preconditions fail are recorded as skipped.
inline SweepResult sweep(const SweepSpec& spec, const Dataset& train, const Dataset& val, const Dataset& test,
                         const RunOptions& opts = {}) {
  spec.validate();
  SweepResult out;
  std::size_t index = 0;
  for (std::size_t n : spec.subsets)
    for (std::size_t e : spec.local_epochs)
      for (double lambda : spec.lambdas)
        for (double cmax : spec.c_max) {
          SweepCell cell{index++, n, e, lambda, cmax};
          SweepSummaryRow summary;
          summary.cell = cell;
          std::vector<SweepRow> cell_rows;
          for (std::size_t r = 0; r < spec.reps; ++r) {
            RunConfig cfg = spec.base;
            cfg.subsets = n;
            cfg.train.local_epochs = e;
            cfg.weighting.lambda = lambda;
            cfg.weighting.c_max = cmax;
            cfg.master_seed = derive_seed(spec.base.master_seed, {0x726570, r});
            cfg.model.seed = derive_seed(spec.base.model.seed, {0x726570, r});
            SweepRow row;
            row.cell = cell;
            row.rep = r;
            row.seed = cfg.master_seed;
            try {
              const RunResult res = run(cfg, train, val, test, opts);
              row.val_accuracy = res.log.val.accuracy;
              row.val_log_loss = res.log.val.log_loss;
              row.test = res.log.test;
            } catch (const InvalidArgument& ex) {
              row.skipped = true;
              row.reason = ex.what();
            } catch (const DataError& ex) {
              row.skipped = true;
              row.reason = ex.what();
            }
            cell_rows.push_back(std::move(row));
          }

          summary.skipped = std::any_of(cell_rows.begin(), cell_rows.end(), [](const SweepRow& r) { return r.skipped; });
          if (!summary.skipped) {
            const double reps = static_cast<double>(cell_rows.size());
            for (std::size_t f = 0; f < 7; ++f) {
              summary.test[f].min = std::numeric_limits<double>::infinity();
              summary.test[f].max = -std::numeric_limits<double>::infinity();
            }
            for (const auto& row : cell_rows) {
              summary.mean_val_accuracy += row.val_accuracy / reps;
              summary.mean_val_log_loss += row.val_log_loss / reps;
              const auto fields = evaluation_fields(row.test);
              for (std::size_t f = 0; f < 7; ++f) {
                summary.test[f].mean += fields[f] / reps;
                summary.test[f].min = std::min(summary.test[f].min, fields[f]);
                summary.test[f].max = std::max(summary.test[f].max, fields[f]);
              }
            }
            summary.runs = cell_rows.size();
          }
          out.summary.push_back(summary);
          for (auto& row : cell_rows) out.rows.push_back(std::move(row));
        }
  rank_summary(out.summary);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{
      {"method", to_string(c.method)},
      {"subsets", c.subsets},
      {"global_epochs", c.global_epochs},
      {"master_seed", c.master_seed},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"local_epochs", c.train.local_epochs},
        {"learning_rate", c.train.learning_rate},
        {"optimizer", c.train.optimizer == Optimizer::adam ? "adam" : "sgd"},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps}}},
      {"weighting",
       {{"lambda", c.weighting.lambda},
        {"c_max", c.weighting.c_max},
        {"delta_e", c.weighting.delta_e},
        {"eps_s", c.weighting.eps_s},
        {"num_classes", c.weighting.num_classes}}},
      {"model",
       {{"layer_sizes", c.model.layer_sizes},
        {"hidden_activation", "relu"},
        {"dropout_p", c.model.dropout_p},
        {"seed", c.model.seed}}},
      {"split", {{"validation_fraction", c.split.validation_fraction}, {"seed", c.split.seed}}},
      {"augment", {{"multiplier", c.augment.multiplier}, {"jitter_sigma", c.augment.jitter_sigma}}},
  };
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.method = parse_method(j.at("method").get<std::string>());
  j.at("subsets").get_to(c.subsets);
  j.at("global_epochs").get_to(c.global_epochs);
  j.at("master_seed").get_to(c.master_seed);
  const auto& t = j.at("train");
  t.at("batch_size").get_to(c.train.batch_size);
  t.at("local_epochs").get_to(c.train.local_epochs);
  t.at("learning_rate").get_to(c.train.learning_rate);
  const auto opt = t.at("optimizer").get<std::string>();
  if (opt != "adam" && opt != "sgd") throw InvalidArgument("config: unknown optimizer '" + opt + "'");
  c.train.optimizer = opt == "adam" ? Optimizer::adam : Optimizer::sgd;
  t.at("beta1").get_to(c.train.beta1);
  t.at("beta2").get_to(c.train.beta2);
  t.at("adam_eps").get_to(c.train.adam_eps);
  const auto& w = j.at("weighting");
  w.at("lambda").get_to(c.weighting.lambda);
  w.at("c_max").get_to(c.weighting.c_max);
  w.at("delta_e").get_to(c.weighting.delta_e);
  w.at("eps_s").get_to(c.weighting.eps_s);
  w.at("num_classes").get_to(c.weighting.num_classes);
  const auto& m = j.at("model");
  m.at("layer_sizes").get_to(c.model.layer_sizes);
  m.at("dropout_p").get_to(c.model.dropout_p);
  m.at("seed").get_to(c.model.seed);
  const auto& s = j.at("split");
  s.at("validation_fraction").get_to(c.split.validation_fraction);
  s.at("seed").get_to(c.split.seed);
  const auto& a = j.at("augment");
  a.at("multiplier").get_to(c.augment.multiplier);
  a.at("jitter_sigma").get_to(c.augment.jitter_sigma);
}

inline std::string curves_csv(const RunLog& log) {
  std::string out = "global_epoch,central_val_loss,central_val_acc,mean_edge_train_loss\n";
  for (const auto& e : log.epochs)
    out += std::to_string(e.global_epoch) + ',' + detail::format_double(e.central_val_loss) + ',' +
           detail::format_double(e.central_val_acc) + ',' + detail::format_double(e.mean_edge_train_loss()) + '\n';
  return out;
}

inline std::string alphas_csv(const RunLog& log) {
  std::string out = "global_epoch,edge_id,a_i,epsilon_i,u_i,s_i,alpha_i\n";
  for (const auto& e : log.epochs)
    for (std::size_t i = 0; i < e.weights.alpha.size(); ++i)
      out += std::to_string(e.global_epoch) + ',' + std::to_string(i) + ',' + detail::format_double(e.val_accuracy[i]) +
             ',' + detail::format_double(e.mean_entropy[i]) + ',' + detail::format_double(e.weights.u[i]) + ',' +
             detail::format_double(e.weights.s_raw[i]) + ',' + detail::format_double(e.weights.alpha[i]) + '\n';
  return out;
}

inline std::string timing_csv(const RunLog& log) {
  std::string out = "global_epoch,seconds\n";
  for (const auto& e : log.epochs)
    out += std::to_string(e.global_epoch) + ',' + detail::format_double(e.seconds) + '\n';
  return out;
}

inline std::string grid_csv(const DecisionGrid& g) {
  std::string out = "row,col,x,y,class\n";
  for (std::size_t r = 0; r < g.resolution; ++r)
    for (std::size_t c = 0; c < g.resolution; ++c)
      out += std::to_string(r) + ',' + std::to_string(c) + ',' + detail::format_double(g.x(c)) + ',' +
             detail::format_double(g.y(r)) + ',' + std::to_string(g.at(r, c)) + '\n';
  return out;
}

inline std::string sweep_csv(const SweepResult& res) {
  std::string out = "cell,subsets,local_epochs,lambda,c_max,rep,seed,status,val_accuracy,val_log_loss";
  for (const char* name : evaluation_field_names()) out += std::string(",test_") + name;
  out += '\n';
  for (const auto& r : res.rows) {
    out += std::to_string(r.cell.index) + ',' + std::to_string(r.cell.subsets) + ',' +
           std::to_string(r.cell.local_epochs) + ',' + detail::format_double(r.cell.lambda) + ',' +
           detail::format_double(r.cell.c_max) + ',' + std::to_string(r.rep) + ',' + std::to_string(r.seed) + ',' +
           (r.skipped ? "skipped" : "ok");
    if (r.skipped) {
      out += ",,";
      for (std::size_t f = 0; f < 7; ++f) out += ',';
    } else {
      out += ',' + detail::format_double(r.val_accuracy) + ',' + detail::format_double(r.val_log_loss);
      for (double v : evaluation_fields(r.test)) out += ',' + detail::format_double(v);
    }
    out += '\n';
  }
  return out;
}

inline std::string sweep_summary_csv(const SweepResult& res) {
  std::string out = "rank,cell,subsets,local_epochs,lambda,c_max,status,runs,mean_val_accuracy,mean_val_log_loss";
  for (const char* name : evaluation_field_names())
    for (const char* stat : {"mean", "min", "max"}) out += std::string(",test_") + name + '_' + stat;
  out += '\n';
  for (const auto& s : res.summary) {
    out += std::to_string(s.rank) + ',' + std::to_string(s.cell.index) + ',' + std::to_string(s.cell.subsets) + ',' +
           std::to_string(s.cell.local_epochs) + ',' + detail::format_double(s.cell.lambda) + ',' +
           detail::format_double(s.cell.c_max) + ',' + (s.skipped ? "skipped" : "ok") + ',' + std::to_string(s.runs);
    if (s.skipped) {
      out += ",,";
      for (std::size_t f = 0; f < 21; ++f) out += ',';
    } else {
      out += ',' + detail::format_double(s.mean_val_accuracy) + ',' + detail::format_double(s.mean_val_log_loss);
      for (const auto& f : s.test)
        out += ',' + detail::format_double(f.mean) + ',' + detail::format_double(f.min) + ',' +
               detail::format_double(f.max);
    }
    out += '\n';
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

/// Writes config.json, curves.csv, alphas.csv, timing.csv, final.pv, evaluation.json and,
/// when given, grid.csv into `dir`.
inline void write_run_dir(const std::filesystem::path& dir, const nlohmann::json& config, const RunResult& result,
                          const DecisionGrid* grid = nullptr) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", config.dump(2) + "\n");
  write_text(dir / "curves.csv", curves_csv(result.log));
  write_text(dir / "alphas.csv", alphas_csv(result.log));
  write_text(dir / "timing.csv", timing_csv(result.log));
  save_pv(result.params, (dir / "final.pv").string());
  write_text(dir / "evaluation.json", nlohmann::json(result.log.test).dump(2) + "\n");
  if (grid != nullptr) write_text(dir / "grid.csv", grid_csv(*grid));
}

}  // namespace d2c
