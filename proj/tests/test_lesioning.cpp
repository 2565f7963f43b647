#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "esncid/lesioning.hpp"
#include "esncid/mackey_glass.hpp"
#include "esncid/parallel.hpp"

using namespace esncid;

namespace {

std::shared_ptr<const EsnModel> toy_model(int n, std::uint64_t seed) {
  SmallWorldSpec sw;
  sw.n = n;
  sw.k = 2;
  sw.seed = seed;
  EsnConfig cfg;
  cfg.seed = seed;
  MackeyGlassParams mg;
  mg.n_samples = 1500;
  mg.sample_every = 1;
  mg.seed = seed;
  const auto teacher = squash(integrate_mackey_glass(mg));
  return std::make_shared<const EsnModel>(train_readout(make_esn_params(generate_small_world(sw), cfg), teacher, {200, 1e-8}));
}

}  // namespace

TEST(LesionMask, SetSemanticsAndHex) {
  LesionMask m(10, {3, 1, 3});
  EXPECT_EQ(m.count(), 2);
  EXPECT_EQ(m.lesioned(), (std::vector<int>{1, 3}));
  EXPECT_EQ(m.hex(), "000000000000000a");
  EXPECT_EQ(m, LesionMask(10, {1, 3}));
  EXPECT_THROW(LesionMask(10, {10}), std::out_of_range);
  EXPECT_THROW(LesionMask(65), std::invalid_argument);
  EXPECT_EQ(LesionMask::all(64).count(), 64);
  EXPECT_EQ(LesionMask::all(5).survivors().size(), 0u);
}

TEST(L2Energy, ClosedFormsAndOracle) {
  EXPECT_EQ(l2_energy(std::vector<double>(10, 0.0)), 0.0);
  EXPECT_NEAR(l2_energy(std::vector<double>(25, -0.3)), 0.3 * 5.0, 1e-14);
  Stream rng(1);
  std::vector<double> x(1000);
  for (double& v : x) v = rng.uniform(-2, 2);
  double acc = 0.0;
  for (double v : x) acc += v * v;
  EXPECT_NEAR(l2_energy(x), std::sqrt(acc), 1e-12);
  std::vector<double> scaled = x;
  for (double& v : scaled) v *= -3.5;
  EXPECT_NEAR(l2_energy(scaled), 3.5 * l2_energy(x), 1e-12);
  double acc3 = 0.0;
  for (double v : x) acc3 += std::abs(v) * v * v;
  EXPECT_NEAR(l2_energy(x, 3.0), std::cbrt(acc3), 1e-12);
  EXPECT_THROW(l2_energy(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(l2_energy(x, 0.5), std::invalid_argument);
  EXPECT_NEAR(l2_energy(TimeSeries{{3.0, 4.0}, 1.0}), 5.0, 1e-15);
}

TEST(EsnEvaluator, FullMaskBehaviorHasClosedForm) {
  auto m = std::make_shared<EsnModel>(*toy_model(6, 2));
  m->w_out(6) = 0.95;
  auto ev = make_esn_evaluator(m, 500, 1e6);
  const auto e = ev->evaluate(LesionMask::all(6));
  // Geometric recursion y_t = 0.95^(t+1) u0 through the input column.
  double acc = 0.0;
  for (int t = 0; t < 500; ++t) {
    const double y = std::pow(0.95, t + 1) * m->last_teacher;
    acc += y * y;
  }
  EXPECT_NEAR(e->behavior, std::sqrt(acc), 1e-12 * std::max(1.0, std::sqrt(acc)));
  for (double v : e->nodes) EXPECT_EQ(v, 0.0);
}

TEST(EsnEvaluator, NodeEnergiesMatchFreshRollout) {
  const auto m = toy_model(5, 3);
  auto ev = make_esn_evaluator(m, 500, 1e6);
  const LesionMask mask(5, {2});
  const auto e = ev->evaluate(mask);
  const auto traj = free_run(*m, mask, 500, 1e6);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> xi(500);
    for (int t = 0; t < 500; ++t) xi[static_cast<std::size_t>(t)] = traj.states(t, i);
    EXPECT_NEAR(e->nodes[static_cast<std::size_t>(i)], l2_energy(xi), 1e-12);
  }
  EXPECT_EQ(e->nodes[2], 0.0);
  EXPECT_NEAR(e->behavior, l2_energy(traj.outputs), 1e-12);
}

TEST(EsnEvaluator, CacheHitsAreTransparent) {
  const auto m = toy_model(6, 4);
  auto ev = make_esn_evaluator(m, 300, 1e6);
  const LesionMask mask(6, {1, 4});
  const auto a = *ev->evaluate(mask);
  EXPECT_EQ(ev->stats().rollouts, 1u);
  const auto b = *ev->evaluate(mask);
  EXPECT_EQ(ev->stats().rollouts, 1u);
  EXPECT_EQ(ev->stats().hits, 1u);
  EXPECT_EQ(ev->stats().requests, 2u);
  EXPECT_EQ(a.behavior, b.behavior);
  EXPECT_EQ(a.nodes, b.nodes);
  // An uncached evaluator gives bit-identical numbers.
  auto fresh = make_esn_evaluator(m, 300, 1e6);
  EXPECT_EQ(fresh->evaluate(mask)->nodes, a.nodes);
}

TEST(EvaluationCache, EvictsLeastRecentlyUsed) {
  EvaluationCache cache(16);  // one entry per shard
  const auto v = std::make_shared<const Evaluation>();
  for (std::uint64_t b = 0; b < 200; ++b) cache.insert(LesionMask(10, b), v);
  EXPECT_LE(cache.size(), 16u);
  EXPECT_GT(cache.evictions(), 0u);
  // The most recent insert survives.
  EXPECT_TRUE(cache.find(LesionMask(10, 199)).has_value());
}

TEST(EvaluationCache, ConcurrentUseIsSafe) {
  const auto m = toy_model(8, 5);
  auto ev = make_esn_evaluator(m, 100, 1e6, 64);
  std::vector<double> values(2000);
  parallel_for(2000, 8, [&](std::size_t i) { values[i] = ev->behavior_value(LesionMask(8, i % 256)); });
  auto ref = make_esn_evaluator(m, 100, 1e6);
  for (std::size_t i = 0; i < 2000; ++i) ASSERT_EQ(values[i], ref->behavior_value(LesionMask(8, i % 256)));
  EXPECT_EQ(ev->stats().requests, 2000u);
}

TEST(EsnEvaluator, UnreachableNodeEnergyIsMaskInvariant) {
  // Node 0 has no incoming edges and no input weight: it decays on its own.
  auto m = std::make_shared<EsnModel>(*toy_model(6, 6));
  m->params.w.row(0).setZero();
  m->params.w_in(0) = 0.0;
  m->params.w_fb(0) = 0.0;
  auto ev = make_esn_evaluator(m, 200, 1e6);
  const double ref = ev->evaluate(LesionMask::none(6))->nodes[0];
  for (std::uint64_t b = 0; b < 64; ++b) {
    if (b & 1U) continue;
    ASSERT_EQ(ev->evaluate(LesionMask(6, b))->nodes[0], ref);
  }
}

TEST(SerEvaluator, LesionNullityAndDeterminism) {
  SmallWorldSpec sw;
  sw.n = 12;
  sw.k = 4;
  sw.seed = 3;
  auto ens = std::make_shared<SerEnsemble>();
  ens->connectome = resample_weights(generate_small_world(sw), 0.1, 1.0, 4);
  ens->params.p_spont = 0.02;
  ens->params.seed = 9;
  ens->runs = 3;
  auto ev = make_ser_evaluator(ens);
  const LesionMask mask(12, {0, 7});
  const auto e = ev->evaluate(mask);
  EXPECT_TRUE(std::isnan(e->behavior));
  EXPECT_EQ(e->nodes[0], 0.0);
  EXPECT_EQ(e->nodes[7], 0.0);
  for (double v : ev->evaluate(LesionMask::all(12))->nodes) EXPECT_EQ(v, 0.0);
  // Recompute by hand: mean over runs of the smoothed-train energy.
  const SerGraph g(ens->connectome);
  for (int i : mask.survivors()) {
    double acc = 0.0;
    for (int r = 0; r < 3; ++r) {
      const SerStream st(9, static_cast<std::uint64_t>(r));
      const auto tr = ser_run(g, ens->params, random_init(12, st), mask, st);
      acc += l2_energy(smooth_gaussian(tr.row(i), 10.0));
    }
    EXPECT_NEAR(e->nodes[static_cast<std::size_t>(i)], acc / 3.0, 1e-12);
  }
}

TEST(PerturbationLog, CanonicalOrderAndIncrementalSink) {
  const auto path = std::filesystem::temp_directory_path() / "esncid_test_log.csv";
  PerturbationLog log(path);
  log.append(LesionMask(3, {2}), {1.5, {0.1, 0.2, 0.0}});
  log.append(LesionMask(3, {0}), {2.5, {0.0, 0.2, 0.3}});
  log.append(LesionMask(3, {2}), {1.5, {0.1, 0.2, 0.0}});
  const auto canon = log.canonical();
  ASSERT_EQ(canon.size(), 2u);
  EXPECT_EQ(canon[0].mask, LesionMask(3, {0}));
  EXPECT_EQ(canon[0].eval_id, 0u);
  EXPECT_EQ(canon[1].eval_id, 1u);
  log.finalize(3);
  std::ifstream in(path);
  std::string header, l1, l2, extra;
  std::getline(in, header);
  std::getline(in, l1);
  std::getline(in, l2);
  EXPECT_EQ(header, "eval_id,mask_bits_hex,behavior_energy,node_energy_0,node_energy_1,node_energy_2");
  EXPECT_EQ(l1, "0,0000000000000001,2.5,0,0.20000000000000001,0.29999999999999999");
  EXPECT_FALSE(std::getline(in, extra));
  std::filesystem::remove(path);
}
