#pragma once

// Shapley values over lesion coalitions, by sampled permutation walks and by
// full enumeration.
//
// Orientation: a coalition is the set of players left ALIVE. Nodes that are
// not players are never lesioned. A walk starts with every player lesioned
// and revives them one by one in a random order, so each walk costs
// |players| + 1 evaluations and its marginals sum to v(all) - v(none).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "esncid/io.hpp"
#include "esncid/lesion_mask.hpp"
#include "esncid/lesioning.hpp"
#include "esncid/parallel.hpp"
#include "esncid/rng.hpp"

namespace esncid {

using ValueFn = std::function<double(const LesionMask&)>;

// A value-function failure, tagged with the coalition that triggered it.
class ShapleyError : public std::runtime_error {
 public:
  ShapleyError(const std::string& what, LesionMask mask)
      : std::runtime_error(what + " [lesion mask " + mask.hex() + "]"), mask_(mask) {}
  const LesionMask& mask() const { return mask_; }

 private:
  LesionMask mask_;
};

struct ShapleyReport {
  std::vector<int> players;
  std::vector<double> values;
  std::vector<double> ci95;
  std::size_t n_permutations = 0;  // 0 for exact enumeration
  double grand_value = 0.0;        // v(all players alive)
  double null_value = 0.0;         // v(no player alive)
  std::string orientation = "survivors";
  std::string method = "sampled";
  std::uint64_t seed = 0;
  std::uint64_t evaluations = 0;  // value-function calls before any cache

  double sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }
  // Position of `node` in players, or -1.
  int index_of(int node) const {
    const auto it = std::find(players.begin(), players.end(), node);
    return it == players.end() ? -1 : static_cast<int>(it - players.begin());
  }
};

namespace detail {

inline void check_players(int n_nodes, const std::vector<int>& players) {
  if (players.empty()) throw std::invalid_argument("shapley: player list is empty");
  std::vector<int> sorted = players;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw std::invalid_argument("shapley: duplicate player");
  if (sorted.front() < 0 || sorted.back() >= n_nodes) throw std::invalid_argument("shapley: player index out of range");
}

template <typename Value>
double call_value(Value& value_fn, const LesionMask& mask) {
  try {
    return value_fn(mask);
  } catch (const ShapleyError&) {
    throw;
  } catch (const std::exception& e) {
    throw ShapleyError(e.what(), mask);
  }
}

}  // namespace detail

// `value_fn` must be safe to call concurrently when workers > 1.
template <typename Value>
ShapleyReport estimate_shapley(int n_nodes, const std::vector<int>& players, Value&& value_fn,
                               std::size_t n_permutations, std::uint64_t seed, int workers = 1) {
  detail::check_players(n_nodes, players);
  if (n_permutations < 1) throw std::invalid_argument("estimate_shapley: need at least one permutation");
  const std::size_t k = players.size();
  LesionMask start(n_nodes);
  for (int p : players) start.insert(p);

  // deltas[walk * k + slot], slot = position of the player in `players`.
  std::vector<double> deltas(n_permutations * k);
  std::vector<double> grand(n_permutations), null(n_permutations);
  parallel_for(n_permutations, workers, [&](std::size_t w) {
    Stream rng(substream_key(seed, w));
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    LesionMask mask = start;
    double prev = detail::call_value(value_fn, mask);
    null[w] = prev;
    for (std::size_t slot : order) {
      mask.erase(players[slot]);
      const double cur = detail::call_value(value_fn, mask);
      deltas[w * k + slot] = cur - prev;
      prev = cur;
    }
    grand[w] = prev;
  });

  ShapleyReport rep;
  rep.players = players;
  rep.n_permutations = n_permutations;
  rep.seed = seed;
  rep.evaluations = static_cast<std::uint64_t>(n_permutations * (k + 1));
  rep.grand_value = grand.front();
  rep.null_value = null.front();
  rep.values.assign(k, 0.0);
  rep.ci95.assign(k, std::numeric_limits<double>::quiet_NaN());
  const auto n = static_cast<double>(n_permutations);
  for (std::size_t s = 0; s < k; ++s) {
    double mean = 0.0;
    for (std::size_t w = 0; w < n_permutations; ++w) mean += deltas[w * k + s];
    mean /= n;
    rep.values[s] = mean;
    if (n_permutations > 1) {
      double ss = 0.0;
      for (std::size_t w = 0; w < n_permutations; ++w) {
        const double d = deltas[w * k + s] - mean;
        ss += d * d;
      }
      rep.ci95[s] = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
  }
  return rep;
}

inline constexpr std::size_t kExactPlayerLimit = 12;

// Subset-weighted sum over all 2^k coalitions of the players.
template <typename Value>
ShapleyReport exact_shapley(int n_nodes, const std::vector<int>& players, Value&& value_fn, int workers = 1) {
  detail::check_players(n_nodes, players);
  const std::size_t k = players.size();
  if (k > kExactPlayerLimit) throw std::invalid_argument("exact_shapley: more than 12 players");
  const std::size_t n_sub = std::size_t{1} << k;
  LesionMask start(n_nodes);
  for (int p : players) start.insert(p);

  // table[s]: value with exactly the players in bit set s alive.
  std::vector<double> table(n_sub);
  parallel_for(n_sub, workers, [&](std::size_t s) {
    LesionMask mask = start;
    for (std::size_t b = 0; b < k; ++b)
      if ((s >> b) & 1U) mask.erase(players[b]);
    table[s] = detail::call_value(value_fn, mask);
  });

  // weight[m] = m! (k - m - 1)! / k!
  std::vector<double> weight(k);
  for (std::size_t m = 0; m < k; ++m) {
    double w = 1.0 / static_cast<double>(k);
    for (std::size_t j = 1; j <= m; ++j) w *= static_cast<double>(j) / static_cast<double>(k - j);
    weight[m] = w;
  }

  ShapleyReport rep;
  rep.players = players;
  rep.method = "exact";
  rep.evaluations = n_sub;
  rep.null_value = table.front();
  rep.grand_value = table.back();
  rep.values.assign(k, 0.0);
  rep.ci95.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t bit = std::size_t{1} << i;
    double acc = 0.0;
    for (std::size_t s = 0; s < n_sub; ++s) {
      if (s & bit) continue;
      acc += weight[static_cast<std::size_t>(std::popcount(s))] * (table[s | bit] - table[s]);
    }
    rep.values[i] = acc;
  }
  return rep;
}

// Behavior MSA: every node is a player, v = energy of the predicted output.
inline ShapleyReport behavior_contributions(LesionEvaluator& evaluator, std::size_t n_permutations,
                                            std::uint64_t seed, int workers = 1) {
  std::vector<int> players(static_cast<std::size_t>(evaluator.n_nodes()));
  std::iota(players.begin(), players.end(), 0);
  return estimate_shapley(
      evaluator.n_nodes(), players, [&](const LesionMask& m) { return evaluator.behavior_value(m); },
      n_permutations, seed, workers);
}

inline void save_report(const ShapleyReport& r, const std::filesystem::path& stem) {
  {
    auto out = io::open_out(stem.string() + ".csv");
    out << "player,gamma,ci95_halfwidth\n";
    for (std::size_t i = 0; i < r.players.size(); ++i)
      out << r.players[i] << ',' << io::fmt(r.values[i]) << ','
          << (std::isnan(r.ci95[i]) ? std::string("NA") : io::fmt(r.ci95[i])) << '\n';
  }
  const nlohmann::json j = {{"n_permutations", r.n_permutations},
                            {"seed", r.seed},
                            {"orientation", r.orientation},
                            {"method", r.method},
                            {"grand_value", r.grand_value},
                            {"null_value", r.null_value},
                            {"sum_gamma", r.sum()},
                            {"evaluations", r.evaluations}};
  auto out = io::open_out(stem.string() + ".json");
  out << j.dump(2) << '\n';
}

}  // namespace esncid
