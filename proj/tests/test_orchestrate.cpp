#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "d2c/orchestrate.hpp"

namespace {

using namespace d2c;

struct Triple {
  Dataset train, val, test;
};

Triple make_triple(std::uint64_t seed, std::size_t n = 160, double noise = 0.1) {
  const Dataset all = gen_synthetic(n, 2, 2, 2.0, noise, seed);
  auto [pool, test] = stratified_split(all, SplitSpec{0.25, seed + 1});
  auto [train, val] = stratified_split(pool, SplitSpec{0.15, seed + 2});
  return {std::move(train), std::move(val), std::move(test)};
}

RunConfig small_config(Method m, std::size_t n) {
  RunConfig cfg;
  cfg.method = m;
  cfg.subsets = n;
  cfg.global_epochs = 4;
  cfg.train.local_epochs = 2;
  cfg.train.batch_size = 8;
  cfg.train.learning_rate = 5e-3;
  cfg.model.layer_sizes = {2, 12, 2};
  cfg.model.seed = 17;
  cfg.weighting.num_classes = 2;
  cfg.master_seed = 99;
  return cfg;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(RunConfig, Invariants) {
  RunConfig cfg = small_config(Method::traditional, 3);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg.subsets = 1;
  EXPECT_NO_THROW(cfg.validate());
  cfg.global_epochs = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_config(Method::d2c, 0);
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = small_config(Method::d2c, 2);
  cfg.train.local_epochs = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig cfg = small_config(Method::dua_d2c, 3);
  cfg.master_seed = 0xFFFFFFFFFFFFFFF1ull;
  cfg.train.optimizer = Optimizer::sgd;
  cfg.augment = {3, 0.05};
  const nlohmann::json j = cfg;
  const RunConfig back = j.get<RunConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.master_seed, cfg.master_seed);
  EXPECT_EQ(j.at("weighting").at("lambda").get<double>(), 0.7);
  EXPECT_THROW(parse_method("fedavg"), InvalidArgument);
}

TEST(Run, LogShapeAndAlphaConservation) {
  const auto t = make_triple(1);
  const RunConfig cfg = small_config(Method::dua_d2c, 3);
  const RunResult r = run(cfg, t.train, t.val, t.test);
  ASSERT_EQ(r.log.epochs.size(), cfg.global_epochs);
  for (std::size_t g = 0; g < r.log.epochs.size(); ++g) {
    const auto& e = r.log.epochs[g];
    EXPECT_EQ(e.global_epoch, g + 1);
    ASSERT_EQ(e.weights.alpha.size(), 3u);
    double sum = 0.0;
    for (double a : e.weights.alpha) {
      EXPECT_GE(a, 0.0);
      sum += a;
    }
    EXPECT_EQ(sum, 1.0);
    EXPECT_EQ(e.edge_train_loss.size(), 3u);
    EXPECT_GE(e.seconds, 0.0);
  }
  EXPECT_TRUE(r.params.all_finite());
  EXPECT_EQ(r.log.shard_sizes.size(), 3u);
}

TEST(Run, MethodsWeightAsDocumented) {
  const auto t = make_triple(2);
  const RunResult trad = run(small_config(Method::traditional, 1), t.train, t.val, t.test);
  for (const auto& e : trad.log.epochs) EXPECT_EQ(e.weights.alpha, std::vector<double>{1.0});
  const RunResult d2c = run(small_config(Method::d2c, 4), t.train, t.val, t.test);
  for (const auto& e : d2c.log.epochs) EXPECT_EQ(e.weights.alpha, uniform_weights(4));
  const RunResult dua = run(small_config(Method::dua_d2c, 4), t.train, t.val, t.test);
  bool non_uniform = false;
  for (const auto& e : dua.log.epochs) non_uniform |= e.weights.alpha != uniform_weights(4);
  EXPECT_TRUE(non_uniform);
}

TEST(Run, SingleShardDuaMatchesTraditionalBitForBit) {
  const auto t = make_triple(3);
  for (Optimizer opt : {Optimizer::adam, Optimizer::sgd}) {
    RunConfig dua = small_config(Method::dua_d2c, 1);
    dua.train.optimizer = opt;
    RunConfig trad = dua;
    trad.method = Method::traditional;
    const RunResult a = run(dua, t.train, t.val, t.test);
    const RunResult b = run(trad, t.train, t.val, t.test);
    EXPECT_TRUE(a.params.bit_equal(b.params));
    for (const auto& e : a.log.epochs) EXPECT_EQ(e.weights.alpha, std::vector<double>{1.0});
    RunConfig plain = dua;
    plain.method = Method::d2c;
    EXPECT_TRUE(run(plain, t.train, t.val, t.test).params.bit_equal(b.params));
  }
}

TEST(Run, SingleShardMatchesCollapsedScheduleUnderSgd) {
  const auto t = make_triple(4);
  RunConfig dua = small_config(Method::dua_d2c, 1);
  dua.train.optimizer = Optimizer::sgd;
  dua.global_epochs = 3;
  dua.train.local_epochs = 2;
  RunConfig trad = dua;
  trad.method = Method::traditional;
  trad.global_epochs = 1;
  trad.train.local_epochs = 6;
  EXPECT_TRUE(run(dua, t.train, t.val, t.test).params.bit_equal(run(trad, t.train, t.val, t.test).params));
}

TEST(Run, IdenticalShardsAndSeedsGiveUniformWeightsAndEdgeParams) {
  const auto t = make_triple(5);
  ShardSet shards;
  for (int i = 0; i < 3; ++i) shards.shards.push_back(t.train);
  RunConfig cfg = small_config(Method::dua_d2c, 3);
  cfg.global_epochs = 1;
  std::vector<EdgeReport> seen;
  RunOptions opts;
  opts.edge_seed_override = [](std::size_t) { return std::uint64_t{1234}; };
  opts.review_reports = [&](std::size_t, std::vector<EdgeReport>& reports) { seen = reports; };
  const RunResult r = run_sharded(cfg, shards, t.val, t.test, opts);
  ASSERT_EQ(seen.size(), 3u);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_TRUE(seen[i].params.bit_equal(seen[0].params));
    EXPECT_EQ(seen[i].val_accuracy, seen[0].val_accuracy);
    EXPECT_EQ(seen[i].mean_entropy, seen[0].mean_entropy);
  }
  EXPECT_EQ(r.log.epochs[0].weights.alpha, uniform_weights(3));
  for (std::size_t j = 0; j < r.params.size(); ++j) EXPECT_NEAR(r.params[j], seen[0].params[j], 1e-12);
}

TEST(Run, EqualizedReportsMakeDuaEqualToD2c) {
  const auto t = make_triple(6);
  RunOptions opts;
  opts.review_reports = [](std::size_t, std::vector<EdgeReport>& reports) {
    for (auto& r : reports) {
      r.val_accuracy = 0.75;
      r.mean_entropy = 0.4;
    }
  };
  const RunResult dua = run(small_config(Method::dua_d2c, 3), t.train, t.val, t.test, opts);
  const RunResult d2c = run(small_config(Method::d2c, 3), t.train, t.val, t.test, opts);
  EXPECT_TRUE(dua.params.bit_equal(d2c.params));
}

TEST(Run, DeterministicAcrossThreadCounts) {
  const auto t = make_triple(7);
  const RunConfig cfg = small_config(Method::dua_d2c, 4);
  RunOptions one, eight;
  one.threads = 1;
  eight.threads = 8;
  const RunResult a = run(cfg, t.train, t.val, t.test, one);
  const RunResult b = run(cfg, t.train, t.val, t.test, eight);
  EXPECT_TRUE(a.params.bit_equal(b.params));
  EXPECT_EQ(curves_csv(a.log), curves_csv(b.log));
  EXPECT_EQ(alphas_csv(a.log), alphas_csv(b.log));
  EXPECT_EQ(a.log.test, b.log.test);
}

TEST(Run, EdgesOnlyTouchTheirOwnShard) {
  const auto t = make_triple(8);
  const RunConfig cfg = small_config(Method::d2c, 3);
  const ShardSet shards = shard(t.train, 3, derive_seed(cfg.master_seed, {0x7368}));
  const RunResult r = run(cfg, t.train, t.val, t.test);
  ASSERT_EQ(r.log.shard_fingerprints.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.log.shard_fingerprints[i], shards.shards[i].fingerprint());
    EXPECT_EQ(r.log.rows_visited[i], shards.shards[i].size() * cfg.train.local_epochs * cfg.global_epochs);
  }
  std::set<std::size_t> seen;
  for (const auto& rows : shards.source_rows)
    for (std::size_t row : rows) EXPECT_TRUE(seen.insert(row).second);
}

TEST(Run, ChangingOneShardOnlyChangesThatEdge) {
  const auto t = make_triple(18);
  RunConfig cfg = small_config(Method::d2c, 3);
  cfg.global_epochs = 1;
  const ShardSet base = shard(t.train, 3, 5);
  ShardSet altered = base;
  Matrix x = altered.shards[2].features();
  x(0, 1) += 0.5;
  altered.shards[2] = Dataset(x, altered.shards[2].labels(), 2);

  std::vector<EdgeReport> a, b;
  RunOptions opts;
  opts.review_reports = [&](std::size_t, std::vector<EdgeReport>& r) { a = r; };
  run_sharded(cfg, base, t.val, t.test, opts);
  opts.review_reports = [&](std::size_t, std::vector<EdgeReport>& r) { b = r; };
  run_sharded(cfg, altered, t.val, t.test, opts);
  EXPECT_TRUE(a[0].params.bit_equal(b[0].params));
  EXPECT_TRUE(a[1].params.bit_equal(b[1].params));
  EXPECT_FALSE(a[2].params.bit_equal(b[2].params));
}

TEST(Run, ShardFailurePropagates) {
  const auto t = make_triple(9, 40);
  EXPECT_THROW(run(small_config(Method::d2c, 30), t.train, t.val, t.test), DataError);
}

TEST(Run, MismatchedDataIsRejected) {
  const auto t = make_triple(10);
  const Dataset wide = gen_synthetic(30, 3, 2, 1.0, 0.0, 1);
  EXPECT_THROW(run(small_config(Method::d2c, 2), t.train, t.val, wide), InvalidArgument);
  RunConfig cfg = small_config(Method::d2c, 2);
  cfg.model.layer_sizes = {2, 4, 3};
  EXPECT_THROW(run(cfg, t.train, t.val, t.test), InvalidArgument);
}

TEST(Run, DivergenceAbortsTheRun) {
  auto t = make_triple(11);
  Matrix x = t.train.features();
  x(0, 0) = std::nan("");
  const Dataset poisoned(x, t.train.labels(), 2);
  EXPECT_THROW(run(small_config(Method::d2c, 2), poisoned, t.val, t.test), DivergenceError);
}

TEST(Run, AugmentationMultipliesShardRows) {
  const auto t = make_triple(12);
  RunConfig cfg = small_config(Method::d2c, 2);
  cfg.augment = {3, 0.05};
  const RunResult r = run(cfg, t.train, t.val, t.test);
  EXPECT_EQ(r.log.shard_sizes[0] + r.log.shard_sizes[1], 3 * t.train.size());
}

TEST(DecisionGrid, ConstantModelFillsOneClass) {
  const MLPConfig cfg{{2, 2}};
  const ParamVector p(cfg.shape(), {0, 0, 0, 0, -1.0, 1.0});
  const DecisionGrid g = decision_grid(p, cfg, Box{-3, 3, -3, 3}, 9);
  ASSERT_EQ(g.classes.size(), 81u);
  for (Label c : g.classes) EXPECT_EQ(c, 1u);
  EXPECT_EQ(boundary_cell_count(g), 0u);
}

TEST(DecisionGrid, VerticalSeparatorSplitsAtMiddleColumn) {
  const MLPConfig cfg{{2, 2}};
  const ParamVector p(cfg.shape(), {-1.0, 0.0, 1.0, 0.0, 0.0, 0.0});  // class 1 iff x0 > 0
  const std::size_t res = 20;
  const DecisionGrid g = decision_grid(p, cfg, Box{-1, 1, -1, 1}, res);
  for (std::size_t r = 0; r < res; ++r) {
    std::size_t first_one = res;
    for (std::size_t c = 0; c < res; ++c)
      if (g.at(r, c) == 1) {
        first_one = c;
        break;
      }
    EXPECT_GE(first_one + 1, res / 2);
    EXPECT_LE(first_one, res / 2 + 1);
    for (std::size_t c = first_one; c < res; ++c) EXPECT_EQ(g.at(r, c), 1u);
  }
  EXPECT_EQ(boundary_cell_count(g), 2 * res);
}

TEST(DecisionGrid, RequiresTwoFeatures) {
  const MLPConfig cfg{{3, 2}};
  EXPECT_THROW(decision_grid(init_params(cfg), cfg, Box{}, 10), InvalidArgument);
}

TEST(Sweep, CardinalityAndRerunDeterminism) {
  const auto t = make_triple(13);
  SweepSpec spec;
  spec.subsets = {2, 3};
  spec.local_epochs = {1, 2};
  spec.lambdas = {0.7};
  spec.c_max = {10.0};
  spec.reps = 2;
  spec.base = small_config(Method::dua_d2c, 2);
  spec.base.global_epochs = 2;
  const SweepResult a = sweep(spec, t.train, t.val, t.test);
  EXPECT_EQ(a.rows.size(), 8u);
  EXPECT_EQ(a.summary.size(), 4u);
  const SweepResult b = sweep(spec, t.train, t.val, t.test);
  EXPECT_EQ(sweep_csv(a), sweep_csv(b));
  EXPECT_EQ(sweep_summary_csv(a), sweep_summary_csv(b));
  // Repetitions of one cell use distinct seeds.
  EXPECT_NE(a.rows[0].seed, a.rows[1].seed);
  EXPECT_EQ(a.rows[0].seed, a.rows[2].seed);
}

TEST(Sweep, SingleCellRepsWithFixedSeedsRepeatExactly) {
  const auto t = make_triple(14);
  SweepSpec spec;
  spec.subsets = {1};
  spec.local_epochs = {1};
  spec.lambdas = {0.7};
  spec.c_max = {10.0};
  spec.reps = 2;
  spec.base = small_config(Method::d2c, 1);
  const SweepResult a = sweep(spec, t.train, t.val, t.test);
  const SweepResult b = sweep(spec, t.train, t.val, t.test);
  ASSERT_EQ(a.rows.size(), 2u);
  EXPECT_EQ(a.rows[0].test, b.rows[0].test);
  EXPECT_EQ(a.rows[1].test, b.rows[1].test);
}

TEST(Sweep, InfeasibleCellsAreSkipped) {
  const auto t = make_triple(15, 60);
  SweepSpec spec;
  spec.subsets = {2, 500};
  spec.local_epochs = {1};
  spec.lambdas = {0.7};
  spec.c_max = {10.0, 0.5};  // 0.5 is below 1/ln 2
  spec.base = small_config(Method::dua_d2c, 2);
  spec.base.global_epochs = 1;
  const SweepResult r = sweep(spec, t.train, t.val, t.test);
  ASSERT_EQ(r.summary.size(), 4u);
  EXPECT_FALSE(r.summary[0].skipped);
  EXPECT_EQ(r.summary[0].rank, 1u);
  EXPECT_EQ(r.summary[0].cell.subsets, 2u);
  for (std::size_t i = 1; i < 4; ++i) {
    EXPECT_TRUE(r.summary[i].skipped);
    EXPECT_EQ(r.summary[i].rank, 0u);
  }
  EXPECT_NE(sweep_csv(r).find(",skipped"), std::string::npos);
  EXPECT_THROW(sweep(SweepSpec{}, t.train, t.val, t.test), InvalidArgument);
}

TEST(Sweep, RankingBreaksAccuracyTiesByLogLoss) {
  std::vector<SweepSummaryRow> rows(3);
  for (std::size_t i = 0; i < 3; ++i) rows[i].cell.index = i;
  rows[0].mean_val_accuracy = 0.8;
  rows[0].mean_val_log_loss = 0.5;
  rows[1].mean_val_accuracy = 0.8;
  rows[1].mean_val_log_loss = 0.3;
  rows[2].mean_val_accuracy = 0.9;
  rows[2].mean_val_log_loss = 0.9;
  rank_summary(rows);
  EXPECT_EQ(rows[0].cell.index, 2u);
  EXPECT_EQ(rows[1].cell.index, 1u);
  EXPECT_EQ(rows[2].cell.index, 0u);
  EXPECT_EQ(rows[2].rank, 3u);
}

TEST(RunDir, WritesTheLayout) {
  const auto t = make_triple(16);
  const RunConfig cfg = small_config(Method::dua_d2c, 2);
  const RunResult r = run(cfg, t.train, t.val, t.test);
  const auto dir = std::filesystem::temp_directory_path() / "d2c_test_rundir";
  std::filesystem::remove_all(dir);
  const DecisionGrid g = decision_grid(r.params, cfg.model, bounding_box(t.train), 8);
  write_run_dir(dir, nlohmann::json(cfg), r, &g);
  for (const char* f : {"config.json", "curves.csv", "alphas.csv", "final.pv", "evaluation.json", "grid.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  EXPECT_TRUE(load_pv((dir / "final.pv").string()).bit_equal(r.params));
  const auto curves = read_file(dir / "curves.csv");
  EXPECT_EQ(curves.rfind("global_epoch,central_val_loss,central_val_acc,mean_edge_train_loss\n", 0), 0u);
  EXPECT_EQ(std::count(curves.begin(), curves.end(), '\n'), 1 + static_cast<long>(cfg.global_epochs));
  const auto alphas = read_file(dir / "alphas.csv");
  EXPECT_EQ(alphas.rfind("global_epoch,edge_id,a_i,epsilon_i,u_i,s_i,alpha_i\n", 0), 0u);
  EXPECT_EQ(std::count(alphas.begin(), alphas.end(), '\n'), 1 + 2 * static_cast<long>(cfg.global_epochs));
  const auto eval = nlohmann::json::parse(read_file(dir / "evaluation.json"));
  EXPECT_EQ(eval.get<Evaluation>(), r.log.test);
  EXPECT_EQ(nlohmann::json::parse(read_file(dir / "config.json")).get<RunConfig>().master_seed, cfg.master_seed);
}

}  // namespace
