#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "esncid/ser_model.hpp"

using namespace esncid;

namespace {

Connectome edgeless(int n) {
  Connectome c;
  c.n_nodes = n;
  c.weights = Matrix::Zero(n, n);
  c.adjacency = BoolMatrix::Constant(n, n, false);
  return c;
}

Connectome chain(int n, double w) {
  Connectome c = edgeless(n);
  for (int i = 1; i < n; ++i) {
    c.adjacency(i, i - 1) = true;
    c.weights(i, i - 1) = w;
  }
  return c;
}

Connectome ser_graph(std::uint64_t seed) {
  SmallWorldSpec sw;
  sw.seed = seed;
  return resample_weights(generate_small_world(sw), 0.1, 1.0, seed + 1);
}

}  // namespace

TEST(SerStep, ExcitedAlwaysBecomesRefractory) {
  const auto c = ser_graph(1);
  SerParams p;
  SerStateVector s(36, SerState::E);
  const auto next = ser_step(s, c, p, LesionMask::none(36), SerStream(1, 0), 1);
  for (auto v : next) EXPECT_EQ(v, SerState::R);
}

TEST(SerStep, ThresholdCrossingExcites) {
  auto c = edgeless(2);
  c.adjacency(1, 0) = true;
  c.weights(1, 0) = 0.7;
  SerParams p;
  p.p_spont = 0.0;
  const SerStateVector s{SerState::E, SerState::S};
  for (std::uint64_t step = 1; step < 50; ++step) {
    const auto next = ser_step(s, c, p, LesionMask::none(2), SerStream(3, 0), step);
    EXPECT_EQ(next[1], SerState::E);
  }
  c.weights(1, 0) = 0.5;  // below theta
  EXPECT_EQ(ser_step(s, c, p, LesionMask::none(2), SerStream(3, 0), 1)[1], SerState::S);
  // A lesioned sender contributes nothing.
  c.weights(1, 0) = 0.7;
  EXPECT_EQ(ser_step(s, c, p, LesionMask(2, {0}), SerStream(3, 0), 1)[1], SerState::S);
}

TEST(SerStep, RejectsNegativeWeights) {
  auto c = edgeless(2);
  c.adjacency(1, 0) = true;
  c.weights(1, 0) = -0.2;
  SerParams p;
  EXPECT_THROW(ser_step(SerStateVector(2, SerState::S), c, p, LesionMask::none(2), SerStream(1, 0), 1),
               std::invalid_argument);
}

TEST(SerRun, QuiescentWithoutSpontaneousFiring) {
  const auto c = ser_graph(2);
  SerParams p;
  p.p_spont = 0.0;
  const auto tr = ser_run(c, p, SerStateVector(36, SerState::S), LesionMask::none(36), SerStream(9, 0));
  for (auto b : tr.bits) ASSERT_EQ(b, 0);
}

TEST(SerRun, FullMaskIsSilent) {
  const auto c = ser_graph(2);
  SerParams p;
  p.p_spont = 0.5;
  const SerStream st(4, 0);
  const auto tr = ser_run(c, p, random_init(36, st), LesionMask::all(36), st);
  for (auto b : tr.bits) ASSERT_EQ(b, 0);
}

TEST(SerRun, WavefrontAdvancesOneHopPerStep) {
  const auto c = chain(10, 0.9);
  SerParams p;
  p.p_spont = 0.0;
  p.p_recover = 0.0;  // refractory forever: no re-excitation behind the front
  p.n_steps = 12;
  SerStateVector init(10, SerState::S);
  init[0] = SerState::E;
  const auto tr = ser_run(c, p, init, LesionMask::none(10), SerStream(1, 0));
  for (int i = 0; i < 10; ++i)
    for (std::size_t t = 0; t < 12; ++t) ASSERT_EQ(tr.at(i, t), static_cast<int>(t) == i ? 1 : 0) << i << "," << t;
}

TEST(SerRun, MatchesIteratedSerStep) {
  const auto c = ser_graph(3);
  SerParams p;
  p.p_spont = 0.05;
  const SerGraph g(c);
  const LesionMask mask(36, {3, 17, 30});
  const SerStream st(77, 2);
  const auto init = random_init(36, st);
  const auto tr = ser_run(g, p, init, mask, st);
  SerStateVector s = init;
  for (int i : mask.lesioned()) s[static_cast<std::size_t>(i)] = SerState::S;
  for (std::size_t t = 0; t < p.n_steps; ++t) {
    if (t > 0) s = ser_step(s, g, p, mask, st, t);
    for (int i = 0; i < 36; ++i) ASSERT_EQ(tr.at(i, t), s[static_cast<std::size_t>(i)] == SerState::E ? 1 : 0);
  }
}

TEST(SerRules, NoForbiddenTransitionsAndUnitExcitation) {
  const auto c = ser_graph(4);
  SerParams p;
  p.p_spont = 0.02;
  const SerGraph g(c);
  const LesionMask none = LesionMask::none(36);
  for (std::uint64_t run = 0; run < 20; ++run) {
    const SerStream st(5, run);
    SerStateVector s = random_init(36, st);
    for (std::uint64_t t = 1; t <= 500; ++t) {
      const auto next = ser_step(s, g, p, none, st, t);
      for (std::size_t i = 0; i < 36; ++i) {
        ASSERT_FALSE(s[i] == SerState::S && next[i] == SerState::R);
        ASSERT_FALSE(s[i] == SerState::E && next[i] == SerState::S);
        ASSERT_FALSE(s[i] == SerState::E && next[i] == SerState::E);
      }
      s = next;
    }
  }
}

TEST(SerRules, SpontaneousAndRecoveryRates) {
  // Isolated nodes: S->E only by spontaneous firing.
  const SerGraph g(edgeless(36));
  SerParams p;
  const LesionMask none = LesionMask::none(36);
  double s_trials = 0, s_fires = 0, r_trials = 0, r_recovers = 0;
  for (std::uint64_t run = 0; run < 400; ++run) {
    const SerStream st(6, run);
    SerStateVector s = random_init(36, st);
    for (std::uint64_t t = 1; t <= 500; ++t) {
      const auto next = ser_step(s, g, p, none, st, t);
      for (std::size_t i = 0; i < 36; ++i) {
        if (s[i] == SerState::S) {
          s_trials += 1;
          s_fires += next[i] == SerState::E;
        } else if (s[i] == SerState::R) {
          r_trials += 1;
          r_recovers += next[i] == SerState::S;
        }
      }
      s = next;
    }
  }
  EXPECT_NEAR(s_fires / s_trials, 0.005, 0.0005);
  EXPECT_NEAR(r_recovers / r_trials, 0.3, 0.01);
}

TEST(SerInit, UniformOverSymbolsAndDeterministic) {
  std::vector<std::array<int, 3>> counts(36, {0, 0, 0});
  for (std::uint64_t run = 0; run < 30000; ++run) {
    const auto v = random_init(36, SerStream(8, run));
    for (std::size_t i = 0; i < 36; ++i) counts[i][static_cast<int>(v[i])]++;
  }
  for (const auto& c : counts)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(c[k] / 30000.0, 1.0 / 3.0, 0.01);
  EXPECT_EQ(random_init(36, SerStream(8, 1)), random_init(36, SerStream(8, 1)));
  EXPECT_EQ(random_init(1, SerStream(8, 1)).size(), 1u);
  EXPECT_THROW(random_init(0, SerStream(8, 1)), std::invalid_argument);
}

TEST(SerRun, CommonRandomNumbersAcrossMasks) {
  // Edgeless graph: every surviving node is unaffected by the lesion, so its
  // train must be identical under both masks.
  const auto c = edgeless(36);
  SerParams p;
  p.p_spont = 0.05;
  const SerStream st(10, 3);
  const auto init = random_init(36, st);
  const auto a = ser_run(c, p, init, LesionMask::none(36), st);
  const auto b = ser_run(c, p, init, LesionMask(36, {0, 5, 9}), st);
  for (int i = 0; i < 36; ++i) {
    if (i == 0 || i == 5 || i == 9) continue;
    EXPECT_EQ(a.row(i), b.row(i));
  }
}

TEST(Smoothing, KernelAndImpulse) {
  const auto k = gaussian_kernel(10.0);
  EXPECT_EQ(k.size(), 81u);
  EXPECT_NEAR(std::accumulate(k.begin(), k.end(), 0.0), 1.0, 1e-12);
  std::vector<double> train(201, 0.0);
  train[100] = 1.0;
  const auto s = smooth_gaussian(train, 10.0);
  EXPECT_EQ(s.size(), 201u);
  for (int d = -40; d <= 40; ++d) EXPECT_DOUBLE_EQ(s[static_cast<std::size_t>(100 + d)], k[static_cast<std::size_t>(d + 40)]);
  EXPECT_NEAR(std::accumulate(s.values.begin(), s.values.end(), 0.0), 1.0, 1e-12);
  EXPECT_EQ(s[100], *std::max_element(k.begin(), k.end()));
  const auto z = smooth_gaussian(std::vector<double>(50, 0.0), 3.0);
  for (double v : z.values) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(gaussian_kernel(0.0), std::invalid_argument);
}

TEST(Smoothing, MatchesNaiveConvolution) {
  Stream rng(11);
  std::vector<double> train(500);
  for (double& v : train) v = rng.uniform() < 0.1 ? 1.0 : 0.0;
  const auto k = gaussian_kernel(10.0);
  const auto s = smooth_gaussian(train, 10.0);
  for (int t = 0; t < 500; ++t) {
    double acc = 0.0;
    for (int d = -40; d <= 40; ++d) {
      const int src = t - d;
      if (src >= 0 && src < 500) acc += k[static_cast<std::size_t>(d + 40)] * train[static_cast<std::size_t>(src)];
    }
    ASSERT_NEAR(s[static_cast<std::size_t>(t)], acc, 1e-12);
    ASSERT_GE(s[static_cast<std::size_t>(t)], 0.0);
    ASSERT_LE(s[static_cast<std::size_t>(t)], 1.0);
  }
}
