#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "d2c/data.hpp"
#include "d2c/error.hpp"
#include "d2c/orchestrate.hpp"
#include "d2c/theory.hpp"

namespace d2c::cli {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kData = 3, kDivergence = 4 };

struct CommandOutcome {
  int exit_code = kOk;
  std::optional<std::filesystem::path> run_dir;
  std::string summary_line;
};

namespace detail {

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto trimmed = d2c::detail::trim(item);
    if (trimmed.empty()) continue;
    T value{};
    const auto* end = trimmed.data() + trimmed.size();
    const auto res = std::from_chars(trimmed.data(), end, value);
    if (res.ec != std::errc{} || res.ptr != end)
      throw InvalidArgument(std::string(flag) + ": cannot parse '" + std::string(trimmed) + "'");
    out.push_back(value);
  }
  if (out.empty()) throw InvalidArgument(std::string(flag) + ": empty list");
  return out;
}

inline std::string summary(const Evaluation& train, const Evaluation& test) {
  std::ostringstream os;
  os << "train_accuracy=" << d2c::detail::format_double(train.accuracy);
  const auto fields = evaluation_fields(test);
  for (std::size_t f = 0; f < fields.size(); ++f)
    os << " test_" << evaluation_field_names()[f] << '=' << d2c::detail::format_double(fields[f]);
  return os.str();
}

/// Data flags shared by train and sweep.
struct DataOptions {
  std::string data;
  std::string test_data;
  std::string label_column = "label";
  double val_frac = 0.1;
  double test_frac = 0.2;

  std::vector<CLI::Option*> opts;

  void add(CLI::App& app) {
    opts = {
        app.add_option("--data", data, "Training CSV (numeric features plus a label column)"),
        app.add_option("--test-data", test_data, "Held-out test CSV; if omitted, --test-frac of --data is held out"),
        app.add_option("--label-column", label_column, "Name of the label column")->capture_default_str(),
        app.add_option("--val-frac", val_frac, "Stratified validation fraction of the training pool")
            ->capture_default_str(),
        app.add_option("--test-frac", test_frac, "Stratified test fraction when --test-data is absent")
            ->capture_default_str(),
    };
  }

  /// Copies the explicitly given flags onto `base`.
  void overlay(DataOptions& base) const {
    if (opts.empty()) return;
    if (opts[0]->count() > 0) base.data = data;
    if (opts[1]->count() > 0) base.test_data = test_data;
    if (opts[2]->count() > 0) base.label_column = label_column;
    if (opts[3]->count() > 0) base.val_frac = val_frac;
    if (opts[4]->count() > 0) base.test_frac = test_frac;
  }

  nlohmann::json to_json() const {
    const auto abs = [](const std::string& p) {
      return p.empty() ? p : std::filesystem::absolute(p).lexically_normal().string();
    };
    return {{"data", abs(data)},       {"test_data", abs(test_data)}, {"label_column", label_column},
            {"val_frac", val_frac},    {"test_frac", test_frac}};
  }

  void from_json(const nlohmann::json& j) {
    j.at("data").get_to(data);
    j.at("test_data").get_to(test_data);
    j.at("label_column").get_to(label_column);
    j.at("val_frac").get_to(val_frac);
    j.at("test_frac").get_to(test_frac);
  }
};

struct DataTriple {
  Dataset train, val, test;
};

inline DataTriple load_triple(const DataOptions& opt, const SplitSpec& split) {
  d2c::detail::require(!opt.data.empty(), "--data is required");
  d2c::detail::require(opt.val_frac > 0.0 && opt.val_frac < 1.0, "--val-frac must lie in (0,1)");
  Dataset pool = load_csv(opt.data, opt.label_column);
  std::optional<Dataset> test;
  if (!opt.test_data.empty()) {
    test = load_csv(opt.test_data, opt.label_column);
  } else {
    d2c::detail::require(opt.test_frac > 0.0 && opt.test_frac < 1.0, "--test-frac must lie in (0,1)");
    auto [rest, held] = stratified_split(pool, SplitSpec{opt.test_frac, derive_seed(split.seed, {0x74657374})});
    pool = std::move(rest);
    test = std::move(held);
  }
  auto [train, val] = stratified_split(pool, SplitSpec{split.validation_fraction, split.seed});
  if (test->dims() != train.dims() || test->num_classes() != train.num_classes())
    throw DataError("test data shape (d = " + std::to_string(test->dims()) + ", K = " +
                    std::to_string(test->num_classes()) + ") differs from training data");
  return {std::move(train), std::move(val), std::move(*test)};
}

/// Flags that map onto RunConfig fields. Values are applied on top of a base config only when
/// given on the command line, so a loaded config.json keeps everything not overridden.
struct RunFlags {
  std::string method = "dua-d2c";
  std::size_t subsets = 3;
  std::size_t local_epochs = 1;
  std::size_t global_epochs = 20;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  double lambda = 0.7;
  double cmax = 10.0;
  double delta_e = 1e-8;
  double eps_s = 1e-8;
  std::uint64_t seed = 0;
  std::string hidden = "100,100,100";
  double dropout = 0.0;
  std::size_t augment = 1;
  double jitter = 0.0;

  std::vector<std::pair<std::string, CLI::Option*>> opts;

  void add(CLI::App& app, bool grids) {
    opts.emplace_back("method", app.add_option("--method", method, "traditional | d2c | dua-d2c")->capture_default_str());
    if (!grids) {
      opts.emplace_back("subsets", app.add_option("--subsets", subsets, "Number of subsets N")->capture_default_str());
      opts.emplace_back("local_epochs",
                        app.add_option("--local-epochs", local_epochs, "Local epochs E per round")->capture_default_str());
      opts.emplace_back("lambda", app.add_option("--lambda", lambda, "Accuracy weight lambda")->capture_default_str());
      opts.emplace_back("cmax", app.add_option("--cmax", cmax, "Inverse-entropy cap C_max")->capture_default_str());
    }
    opts.emplace_back("global_epochs",
                      app.add_option("--global-epochs", global_epochs, "Global rounds E_global")->capture_default_str());
    opts.emplace_back("batch", app.add_option("--batch", batch, "Minibatch size B")->capture_default_str());
    opts.emplace_back("lr", app.add_option("--lr", lr, "Learning rate")->capture_default_str());
    opts.emplace_back("optimizer", app.add_option("--optimizer", optimizer, "adam | sgd")->capture_default_str());
    opts.emplace_back("delta_e", app.add_option("--delta-e", delta_e, "Entropy offset delta_e")->capture_default_str());
    opts.emplace_back("eps_s", app.add_option("--eps-s", eps_s, "Normalization offset eps_s")->capture_default_str());
    opts.emplace_back("seed", app.add_option("--seed", seed, "Master seed")->capture_default_str());
    opts.emplace_back("hidden", app.add_option("--hidden", hidden, "Hidden layer widths, comma separated")
                                    ->capture_default_str());
    opts.emplace_back("dropout", app.add_option("--dropout", dropout, "Dropout on hidden layers")->capture_default_str());
    opts.emplace_back("augment", app.add_option("--augment", augment, "Shard size multiplier from jittered copies")
                                     ->capture_default_str());
    opts.emplace_back("jitter", app.add_option("--jitter", jitter, "Gaussian jitter sigma for augmentation")
                                    ->capture_default_str());
  }

  bool given(const std::string& name) const {
    for (const auto& [n, o] : opts)
      if (n == name) return o->count() > 0;
    return false;
  }

  /// Fresh config from the flag values (defaults included).
  RunConfig build() const {
    RunConfig c;
    overlay(c, true);
    return c;
  }

  void overlay(RunConfig& c, bool all) const {
    const auto on = [&](const char* n) { return all || given(n); };
    if (on("method")) c.method = parse_method(method);
    if (on("subsets")) c.subsets = subsets;
    if (on("local_epochs")) c.train.local_epochs = local_epochs;
    if (on("global_epochs")) c.global_epochs = global_epochs;
    if (on("batch")) c.train.batch_size = batch;
    if (on("lr")) c.train.learning_rate = lr;
    if (on("optimizer")) {
      if (optimizer != "adam" && optimizer != "sgd") throw InvalidArgument("--optimizer must be adam or sgd");
      c.train.optimizer = optimizer == "adam" ? Optimizer::adam : Optimizer::sgd;
    }
    if (on("lambda")) c.weighting.lambda = lambda;
    if (on("cmax")) c.weighting.c_max = cmax;
    if (on("delta_e")) c.weighting.delta_e = delta_e;
    if (on("eps_s")) c.weighting.eps_s = eps_s;
    if (on("seed")) {
      c.master_seed = seed;
      c.model.seed = derive_seed(seed, {0x696e6974});
      c.split.seed = derive_seed(seed, {0x73706c6974});
    }
    if (on("hidden")) {
      c.model.layer_sizes = {0};
      if (!d2c::detail::trim(hidden).empty())
        for (std::size_t h : parse_list<std::size_t>(hidden, "--hidden")) c.model.layer_sizes.push_back(h);
      c.model.layer_sizes.push_back(0);
    }
    if (on("dropout")) c.model.dropout_p = dropout;
    if (on("augment")) c.augment.multiplier = augment;
    if (on("jitter")) c.augment.jitter_sigma = jitter;
  }
};

/// Fills the data-dependent sizes: model input and output widths and the weighting K.
inline void bind_to_data(RunConfig& c, const Dataset& train) {
  d2c::detail::require(c.model.layer_sizes.size() >= 2, "config: model needs input and output layers");
  c.model.layer_sizes.front() = train.dims();
  c.model.layer_sizes.back() = train.num_classes();
  c.weighting.num_classes = train.num_classes();
}

/// Validates everything that does not depend on the data, before the data is read.
inline void prevalidate(RunConfig c) {
  d2c::detail::require(c.model.layer_sizes.size() >= 2, "config: model needs input and output layers");
  c.model.layer_sizes.front() = std::max<std::size_t>(c.model.layer_sizes.front(), 1);
  c.model.layer_sizes.back() = std::max<std::size_t>(c.model.layer_sizes.back(), 2);
  c.validate();
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(path + ": " + e.what());
  }
}

}  // namespace detail

struct SynthArgs {
  std::size_t n = 240;
  std::size_t dims = 2;
  std::size_t classes = 2;
  double sep = 2.0;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::string out;
};

inline CommandOutcome cmd_synth(const SynthArgs& a) {
  d2c::detail::require(!a.out.empty(), "synth: --out is required");
  d2c::detail::require(a.classes >= 2, "synth: --classes must be >= 2");
  const Dataset ds = gen_synthetic(a.n, a.dims, a.classes, a.sep, a.noise, a.seed);
  write_csv(ds, a.out);
  return {kOk, std::nullopt, "wrote " + std::to_string(ds.size()) + " rows to " + a.out};
}

struct TrainArgs {
  detail::DataOptions data;
  detail::RunFlags flags;
  std::string config;
  std::string out_dir;
  std::size_t grid_resolution = 50;
};

inline CommandOutcome cmd_train(const TrainArgs& a) {
  d2c::detail::require(!a.out_dir.empty(), "train: --out-dir is required");
  RunConfig cfg;
  detail::DataOptions data = a.data;
  std::size_t grid_resolution = a.grid_resolution;
  if (!a.config.empty()) {
    const auto j = detail::read_json(a.config);
    try {
      cfg = j.at("run").get<RunConfig>();
      data.from_json(j.at("data"));
      if (j.contains("grid_resolution")) j.at("grid_resolution").get_to(grid_resolution);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(a.config + ": " + e.what());
    }
    a.flags.overlay(cfg, false);
    a.data.overlay(data);
  } else {
    cfg = a.flags.build();
  }
  cfg.split.validation_fraction = data.val_frac;
  detail::prevalidate(cfg);

  const auto triple = detail::load_triple(data, cfg.split);
  detail::bind_to_data(cfg, triple.train);
  cfg.validate();

  const RunResult result = run(cfg, triple.train, triple.val, triple.test);

  nlohmann::json config{{"run", cfg}, {"data", data.to_json()}, {"grid_resolution", grid_resolution}};
  std::optional<DecisionGrid> grid;
  if (grid_resolution > 0 && triple.train.dims() == 2)
    grid = decision_grid(result.params, cfg.model, bounding_box(triple.train), grid_resolution);
  write_run_dir(a.out_dir, config, result, grid ? &*grid : nullptr);
  return {kOk, std::filesystem::path(a.out_dir), detail::summary(result.log.train, result.log.test)};
}

struct SweepArgs {
  detail::DataOptions data;
  detail::RunFlags flags;
  std::string subsets = "1,3";
  std::string local_epochs = "1";
  std::string lambdas = "0.7";
  std::string cmax = "10";
  std::size_t reps = 1;
  std::string out_dir;
};

inline CommandOutcome cmd_sweep(const SweepArgs& a) {
  d2c::detail::require(!a.out_dir.empty(), "sweep: --out-dir is required");
  SweepSpec spec;
  spec.subsets = detail::parse_list<std::size_t>(a.subsets, "--subsets");
  spec.local_epochs = detail::parse_list<std::size_t>(a.local_epochs, "--local-epochs");
  spec.lambdas = detail::parse_list<double>(a.lambdas, "--lambda");
  spec.c_max = detail::parse_list<double>(a.cmax, "--cmax");
  spec.reps = a.reps;
  spec.base = a.flags.build();
  spec.base.split.validation_fraction = a.data.val_frac;
  spec.validate();
  detail::prevalidate(spec.base);

  const auto triple = detail::load_triple(a.data, spec.base.split);
  detail::bind_to_data(spec.base, triple.train);
  const SweepResult res = sweep(spec, triple.train, triple.val, triple.test);

  std::filesystem::create_directories(a.out_dir);
  const std::filesystem::path dir(a.out_dir);
  write_text(dir / "sweep.csv", sweep_csv(res));
  write_text(dir / "sweep_summary.csv", sweep_summary_csv(res));

  std::size_t skipped = 0;
  for (const auto& s : res.summary) skipped += s.skipped ? 1 : 0;
  std::string line = std::to_string(res.summary.size()) + " cells, " + std::to_string(res.rows.size()) + " runs, " +
                     std::to_string(skipped) + " skipped cells";
  if (!res.summary.empty() && !res.summary.front().skipped) {
    const auto& best = res.summary.front();
    line += "; best cell " + std::to_string(best.cell.index) + " (N=" + std::to_string(best.cell.subsets) +
            " E=" + std::to_string(best.cell.local_epochs) + " lambda=" + d2c::detail::format_double(best.cell.lambda) +
            " c_max=" + d2c::detail::format_double(best.cell.c_max) +
            ") mean_val_accuracy=" + d2c::detail::format_double(best.mean_val_accuracy);
  }
  return {kOk, dir, line};
}

struct VarianceArgs {
  std::size_t k = 0;
  double s = 1.0;
  double c = 0.0;
  std::size_t trials = 200000;
  std::uint64_t seed = 0;
  std::string alpha;
};

inline CommandOutcome cmd_variance_check(const VarianceArgs& a) {
  theory::CorrelatedErrorSpec spec{a.k, a.s, a.c, a.trials, a.seed};
  std::vector<double> alpha;
  if (!a.alpha.empty()) {
    alpha = detail::parse_list<double>(a.alpha, "--alpha");
    if (spec.k == 0) spec.k = alpha.size();
    d2c::detail::require(alpha.size() == spec.k, "--alpha needs exactly k weights");
  }
  d2c::detail::require(spec.k >= 1, "--k is required (or give --alpha)");
  const theory::VarianceEstimate est =
      alpha.empty() ? theory::mc_variance_uniform(spec) : theory::mc_variance_weighted(alpha, spec);
  if (alpha.empty()) alpha.assign(spec.k, 1.0 / static_cast<double>(spec.k));
  const nlohmann::json report{{"k", spec.k},
                              {"s", spec.s},
                              {"c", spec.c},
                              {"alpha", alpha},
                              {"theoretical", est.theoretical},
                              {"estimated", est.estimated},
                              {"tolerance", est.tolerance},
                              {"pass", est.pass()}};
  return {est.pass() ? kOk : kCheckFailed, std::nullopt, report.dump()};
}

/// Parses argv, dispatches the subcommand and maps errors to exit codes: 2 for usage and
/// validation errors, 3 for data preconditions, 4 for divergence.
inline int main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Divide-and-conquer training with uncertainty-aware aggregation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic Gaussian-blob dataset as CSV");
  s->add_option("--n", synth.n, "Rows")->capture_default_str();
  s->add_option("--dims", synth.dims, "Features")->capture_default_str();
  s->add_option("--classes", synth.classes, "Classes K")->capture_default_str();
  s->add_option("--sep", synth.sep, "Distance between class means")->capture_default_str();
  s->add_option("--noise", synth.noise, "Label-flip fraction")->capture_default_str();
  s->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output CSV")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run traditional, D2C or DUA-D2C training into a run directory");
  train.data.add(*t);
  train.flags.add(*t, false);
  t->add_option("--config", train.config, "Reload a run's config.json; explicit flags override it");
  t->add_option("--grid-resolution", train.grid_resolution, "Decision grid cells per side for 2-D data (0: off)")
      ->capture_default_str();
  t->add_option("--out-dir", train.out_dir, "Run directory")->required();

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Grid search over N, E, lambda and C_max with repetitions");
  sw.data.add(*w);
  sw.flags.add(*w, true);
  w->add_option("--subsets", sw.subsets, "Grid of N, comma separated")->capture_default_str();
  w->add_option("--local-epochs", sw.local_epochs, "Grid of E")->capture_default_str();
  w->add_option("--lambda", sw.lambdas, "Grid of lambda")->capture_default_str();
  w->add_option("--cmax", sw.cmax, "Grid of C_max")->capture_default_str();
  w->add_option("--reps", sw.reps, "Repetitions per cell")->capture_default_str();
  w->add_option("--out-dir", sw.out_dir, "Output directory")->required();

  VarianceArgs var;
  auto* v = app.add_subcommand("variance-check", "Monte Carlo check of the ensemble variance law");
  v->add_option("--k", var.k, "Number of averaged errors");
  v->add_option("--s", var.s, "Per-error variance")->capture_default_str();
  v->add_option("--c", var.c, "Pairwise covariance")->capture_default_str();
  v->add_option("--trials", var.trials, "Monte Carlo draws")->capture_default_str();
  v->add_option("--seed", var.seed, "Seed")->capture_default_str();
  v->add_option("--alpha", var.alpha, "Aggregation weights, comma separated (default uniform)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    CommandOutcome res;
    if (*s)
      res = cmd_synth(synth);
    else if (*t)
      res = cmd_train(train);
    else if (*w)
      res = cmd_sweep(sw);
    else
      res = cmd_variance_check(var);
    out << res.summary_line << '\n';
    return res.exit_code;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace d2c::cli
