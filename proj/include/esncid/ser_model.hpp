#pragma once

// Susceptible-excited-refractory (SER) automaton on a weighted connectome.
//
// All random draws are counter based: node i at step t of run r reads
// counter_uniform(substream(seed, r, i), t). Changing the lesion mask never
// changes the numbers an unaffected node sees.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "esncid/connectome.hpp"
#include "esncid/io.hpp"
#include "esncid/lesion_mask.hpp"
#include "esncid/rng.hpp"
#include "esncid/time_series.hpp"

namespace esncid {

enum class SerState : std::uint8_t { S = 0, E = 1, R = 2 };

using SerStateVector = std::vector<SerState>;

struct SerParams {
  double p_spont = 0.005;
  double theta = 0.6;
  double p_recover = 0.3;
  double sigma_smooth = 10.0;
  std::size_t n_steps = 500;
  std::uint64_t seed = 0;
};

inline void validate(const SerParams& p) {
  auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!prob(p.p_spont) || !prob(p.p_recover)) throw std::invalid_argument("SerParams: probabilities must lie in [0, 1]");
  if (!(p.theta > 0.0)) throw std::invalid_argument("SerParams: theta must be positive");
  if (!(p.sigma_smooth > 0.0)) throw std::invalid_argument("SerParams: sigma_smooth must be positive");
}

// Handle on the random numbers of one run: node substreams keyed by
// (seed, run index, node), indexed by step.
class SerStream {
 public:
  SerStream(std::uint64_t seed, std::uint64_t run) : key_(substream_key(seed, run)) {}

  std::uint64_t node_key(int node) const { return substream_key(key_, static_cast<std::uint64_t>(node)); }
  // Draw used by the transition rule at `step` (steps start at 1).
  double transition(int node, std::uint64_t step) const { return counter_uniform(node_key(node), step); }
  // Draw used for the initial condition (step 0).
  double initial(int node) const { return counter_uniform(node_key(node), 0); }

 private:
  std::uint64_t key_;
};

inline SerStateVector random_init(int n, const SerStream& stream) {
  if (n < 1) throw std::invalid_argument("random_init: need at least one node");
  SerStateVector v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double u = stream.initial(i);
    v[static_cast<std::size_t>(i)] = u < 1.0 / 3.0 ? SerState::S : (u < 2.0 / 3.0 ? SerState::E : SerState::R);
  }
  return v;
}

// Compact in-edge lists, the hot path for repeated rollouts.
struct SerGraph {
  int n_nodes = 0;
  std::vector<std::vector<int>> sources;
  std::vector<std::vector<double>> weights;

  explicit SerGraph(const Connectome& c) : n_nodes(c.n_nodes), sources(c.n_nodes), weights(c.n_nodes) {
    for (int i = 0; i < c.n_nodes; ++i)
      for (int j = 0; j < c.n_nodes; ++j) {
        if (!c.adjacency(i, j)) continue;
        if (c.weights(i, j) < 0.0) throw std::invalid_argument("SER connectome: negative weights are not allowed");
        sources[i].push_back(j);
        weights[i].push_back(c.weights(i, j));
      }
  }
};

// Synchronous update for step `step`; lesioned nodes stay at S and send
// nothing.
inline SerStateVector ser_step(const SerStateVector& states, const SerGraph& g, const SerParams& p,
                               const LesionMask& mask, const SerStream& stream, std::uint64_t step) {
  const int n = g.n_nodes;
  if (static_cast<int>(states.size()) != n || mask.n_nodes() != n)
    throw std::invalid_argument("ser_step: state/mask size does not match connectome");
  SerStateVector next(states.size());
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (mask.contains(i)) {
      next[ui] = SerState::S;
      continue;
    }
    switch (states[ui]) {
      case SerState::E:
        next[ui] = SerState::R;
        break;
      case SerState::R:
        next[ui] = stream.transition(i, step) < p.p_recover ? SerState::S : SerState::R;
        break;
      case SerState::S: {
        double drive = 0.0;
        const auto& src = g.sources[ui];
        for (std::size_t e = 0; e < src.size(); ++e)
          if (states[static_cast<std::size_t>(src[e])] == SerState::E && !mask.contains(src[e]))
            drive += g.weights[ui][e];
        const bool fire = drive > p.theta || stream.transition(i, step) < p.p_spont;
        next[ui] = fire ? SerState::E : SerState::S;
        break;
      }
    }
  }
  return next;
}

inline SerStateVector ser_step(const SerStateVector& states, const Connectome& c, const SerParams& p,
                               const LesionMask& mask, const SerStream& stream, std::uint64_t step) {
  return ser_step(states, SerGraph(c), p, mask, stream, step);
}

// Binary excitation trains, n rows by n_steps columns (row-major).
struct ExcitationTrains {
  int n_nodes = 0;
  std::size_t n_steps = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(int node, std::size_t t) const { return bits[static_cast<std::size_t>(node) * n_steps + t]; }
  std::vector<double> row(int node) const {
    std::vector<double> r(n_steps);
    for (std::size_t t = 0; t < n_steps; ++t) r[t] = at(node, t);
    return r;
  }
};

// train(i, t) = 1 iff node i is excited at step t; step 0 is the (masked)
// initial condition. Same transitions as iterating ser_step, with the per-node
// key mixing hoisted out of the step loop.
inline ExcitationTrains ser_run(const SerGraph& g, const SerParams& p, const SerStateVector& init,
                                const LesionMask& mask, const SerStream& stream) {
  validate(p);
  const int n = g.n_nodes;
  if (static_cast<int>(init.size()) != n) throw std::invalid_argument("ser_run: initial state size mismatch");
  if (mask.n_nodes() != n) throw std::invalid_argument("ser_run: mask size does not match connectome");
  ExcitationTrains out;
  out.n_nodes = n;
  out.n_steps = p.n_steps;
  out.bits.assign(static_cast<std::size_t>(n) * p.n_steps, 0);
  const auto un = static_cast<std::size_t>(n);
  std::vector<std::uint64_t> mixed(un);
  for (int i = 0; i < n; ++i) mixed[static_cast<std::size_t>(i)] = mix64(stream.node_key(i));
  SerStateVector cur = init, next(un);
  for (int i = 0; i < n; ++i)
    if (mask.contains(i)) cur[static_cast<std::size_t>(i)] = SerState::S;
  for (std::size_t t = 0; t < p.n_steps; ++t) {
    if (t > 0) {
      const std::uint64_t mc = mix64(static_cast<std::uint64_t>(t) + detail::kCounterSalt);
      for (std::size_t i = 0; i < un; ++i) {
        if (mask.contains(static_cast<int>(i))) {
          next[i] = SerState::S;
          continue;
        }
        switch (cur[i]) {
          case SerState::E:
            next[i] = SerState::R;
            break;
          case SerState::R:
            next[i] = to_unit(mix64(mixed[i] ^ mc)) < p.p_recover ? SerState::S : SerState::R;
            break;
          case SerState::S: {
            // Lesioned sources are always S, so they add nothing here.
            double drive = 0.0;
            const auto& src = g.sources[i];
            const auto& w = g.weights[i];
            for (std::size_t e = 0; e < src.size(); ++e)
              if (cur[static_cast<std::size_t>(src[e])] == SerState::E) drive += w[e];
            const bool fire = drive > p.theta || to_unit(mix64(mixed[i] ^ mc)) < p.p_spont;
            next[i] = fire ? SerState::E : SerState::S;
            break;
          }
        }
      }
      cur.swap(next);
    }
    for (std::size_t i = 0; i < un; ++i)
      if (cur[i] == SerState::E) out.bits[i * p.n_steps + t] = 1;
  }
  return out;
}

inline ExcitationTrains ser_run(const Connectome& c, const SerParams& p, const SerStateVector& init,
                                const LesionMask& mask, const SerStream& stream) {
  return ser_run(SerGraph(c), p, init, mask, stream);
}

// Unit-sum Gaussian kernel truncated at +-4 sigma; index 0 is offset -radius.
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const auto radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int d = -radius; d <= radius; ++d) {
    const double v = std::exp(-0.5 * (d / sigma) * (d / sigma));
    k[static_cast<std::size_t>(d + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Same-length convolution with zero padding. Only nonzero samples are
// scattered, so sparse trains are cheap.
inline TimeSeries smooth_gaussian(const std::vector<double>& train, double sigma) {
  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto len = static_cast<std::ptrdiff_t>(train.size());
  TimeSeries out;
  out.values.assign(train.size(), 0.0);
  for (std::ptrdiff_t s = 0; s < len; ++s) {
    const double v = train[static_cast<std::size_t>(s)];
    if (v == 0.0) continue;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, s - radius);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len - 1, s + radius);
    for (std::ptrdiff_t t = lo; t <= hi; ++t)
      out.values[static_cast<std::size_t>(t)] += v * kernel[static_cast<std::size_t>(t - s + radius)];
  }
  return out;
}

// An SER model plus the ensemble protocol used as a value function: K runs
// from seeded random initial conditions, energies averaged over runs.
struct SerEnsemble {
  Connectome connectome;
  SerParams params;
  int runs = 10;
};

inline void save_trains(const ExcitationTrains& tr, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  for (int i = 0; i < tr.n_nodes; ++i) {
    for (std::size_t t = 0; t < tr.n_steps; ++t) {
      if (t) out << ',';
      out << static_cast<int>(tr.at(i, t));
    }
    out << '\n';
  }
}

}  // namespace esncid
