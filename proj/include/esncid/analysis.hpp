#pragma once

// Correlation with permutation p-values, rankings, and the log-energy
// histogram of a perturbation log.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "esncid/io.hpp"
#include "esncid/lesioning.hpp"
#include "esncid/rng.hpp"
#include "esncid/shapley.hpp"

namespace esncid {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 3) throw std::invalid_argument("pearson: need at least 3 pairs");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw std::invalid_argument("pearson: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Two-tailed: (1 + #{|r_shuffled| >= |r_observed|}) / (1 + n_shuffles).
// y is shuffled; a small relative slack keeps exact ties counted despite
// rounding in the reordered sums.
inline double permutation_pvalue(const std::vector<double>& x, const std::vector<double>& y, std::size_t n_shuffles,
                                 std::uint64_t seed) {
  if (n_shuffles < 100) throw std::invalid_argument("permutation_pvalue: need at least 100 shuffles");
  const double observed = std::abs(pearson(x, y));
  const double tol = 1e-12;
  Stream rng(derive_seed(seed, "analysis.shuffle"));
  std::vector<double> ys = y;
  std::size_t extreme = 0;
  for (std::size_t s = 0; s < n_shuffles; ++s) {
    rng.shuffle(ys);
    if (std::abs(pearson(x, ys)) >= observed - tol) ++extreme;
  }
  return static_cast<double>(1 + extreme) / static_cast<double>(1 + n_shuffles);
}

struct Correlation {
  double r = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
  std::size_t n_shuffles = 0;
  std::uint64_t seed = 0;
};

inline Correlation correlate(const std::vector<double>& x, const std::vector<double>& y, std::size_t n_shuffles,
                             std::uint64_t seed) {
  return {pearson(x, y), permutation_pvalue(x, y, n_shuffles, seed), x.size(), n_shuffles, seed};
}

inline nlohmann::json to_json(const Correlation& c) {
  return {{"r", c.r}, {"p", c.p}, {"n", c.n}, {"n_shuffles", c.n_shuffles}, {"seed", c.seed}};
}

inline void save_correlation(const Correlation& c, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  out << to_json(c).dump(2) << '\n';
}

// Descending by value, ties by ascending player index.
inline std::vector<int> rank_by_value(const ShapleyReport& r) {
  std::vector<std::size_t> idx(r.players.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (r.values[a] != r.values[b]) return r.values[a] > r.values[b];
    return r.players[a] < r.players[b];
  });
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(r.players[i]);
  return out;
}

struct Histogram {
  std::vector<double> bin_edges;  // n_bins + 1, strictly increasing
  std::vector<std::size_t> counts;
  std::size_t underflow = 0;  // zero energies, kept out of the log transform
  std::size_t n_total = 0;
};

// Equal-width bins over ln(energy). When every positive energy is identical
// the range is widened to one unit around it.
inline Histogram log_energy_histogram(const std::vector<double>& energies, std::size_t n_bins) {
  if (energies.empty()) throw std::invalid_argument("log_energy_histogram: empty log");
  if (n_bins < 1) throw std::invalid_argument("log_energy_histogram: need at least one bin");
  Histogram h;
  h.n_total = energies.size();
  std::vector<double> logs;
  logs.reserve(energies.size());
  for (double e : energies) {
    if (!(e >= 0.0)) throw std::invalid_argument("log_energy_histogram: energies must be nonnegative");
    if (e == 0.0)
      ++h.underflow;
    else
      logs.push_back(std::log(e));
  }
  double lo = 0.0, hi = 1.0;
  if (!logs.empty()) {
    const auto [mn, mx] = std::minmax_element(logs.begin(), logs.end());
    lo = *mn;
    hi = *mx;
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  h.bin_edges.resize(n_bins + 1);
  for (std::size_t b = 0; b <= n_bins; ++b)
    h.bin_edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins);
  h.counts.assign(n_bins, 0);
  for (double v : logs) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(n_bins));
    h.counts[std::min(b, n_bins - 1)] += 1;
  }
  return h;
}

inline Histogram log_energy_histogram(const std::vector<EvaluationRecord>& log, std::size_t n_bins) {
  std::vector<double> e;
  e.reserve(log.size());
  for (const auto& r : log) e.push_back(r.behavior_energy);
  return log_energy_histogram(e, n_bins);
}

inline void save_histogram(const Histogram& h, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  out << "underflow," << h.underflow << '\n';
  out << "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    out << io::fmt(h.bin_edges[b]) << ',' << io::fmt(h.bin_edges[b + 1]) << ',' << h.counts[b] << '\n';
}

}  // namespace esncid
