#pragma once

// Causal influence matrix: for every target node, the Shapley value of each
// other node on the target's energy, split into direct (a structural edge
// source -> target exists) and indirect entries.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "esncid/analysis.hpp"
#include "esncid/connectome.hpp"
#include "esncid/io.hpp"
#include "esncid/lesioning.hpp"
#include "esncid/rng.hpp"
#include "esncid/shapley.hpp"

namespace esncid {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// values(i, j): influence of source j on target i. The diagonal is NaN.
struct InfluenceMatrix {
  Matrix values;
  Matrix ci95;
  BoolMatrix adjacency;  // adjacency(i, j): edge j -> i
  std::size_t n_permutations = 0;
  std::uint64_t seed = 0;

  int n_nodes() const { return static_cast<int>(values.rows()); }
  bool is_direct(int target, int source) const { return adjacency(target, source); }
};

inline std::vector<int> players_except(int n, int target) {
  std::vector<int> players;
  for (int j = 0; j < n; ++j)
    if (j != target) players.push_back(j);
  return players;
}

namespace detail {

inline InfluenceMatrix empty_influence(const BoolMatrix& adjacency) {
  const auto n = adjacency.rows();
  if (adjacency.cols() != n) throw std::invalid_argument("influence: adjacency must be square");
  InfluenceMatrix m;
  m.values = Matrix::Constant(n, n, kMissing);
  m.ci95 = Matrix::Constant(n, n, kMissing);
  m.adjacency = adjacency;
  return m;
}

inline void fill_row(InfluenceMatrix& m, int target, const ShapleyReport& r) {
  for (std::size_t s = 0; s < r.players.size(); ++s) {
    m.values(target, r.players[s]) = r.values[s];
    m.ci95(target, r.players[s]) = r.ci95[s];
  }
}

}  // namespace detail

// Each target gets its own walk seed, derived from (seed, target). The
// evaluator's cache is shared, so identical coalitions across targets cost a
// single rollout.
inline InfluenceMatrix causal_influence_matrix(LesionEvaluator& evaluator, const BoolMatrix& adjacency,
                                               std::size_t n_permutations, std::uint64_t seed, int workers = 1) {
  const int n = evaluator.n_nodes();
  if (adjacency.rows() != n) throw std::invalid_argument("causal_influence_matrix: adjacency size mismatch");
  if (n < 2) throw std::invalid_argument("causal_influence_matrix: need at least two nodes");
  auto m = detail::empty_influence(adjacency);
  m.n_permutations = n_permutations;
  m.seed = seed;
  for (int i = 0; i < n; ++i) {
    const auto rep = estimate_shapley(
        n, players_except(n, i),
        [&, i](const LesionMask& mask) { return evaluator.evaluate(mask)->nodes[static_cast<std::size_t>(i)]; },
        n_permutations, derive_seed(seed, "cid.target", static_cast<std::uint64_t>(i)), workers);
    detail::fill_row(m, i, rep);
  }
  return m;
}

// Exact enumeration per target; for toy networks (n <= 13).
inline InfluenceMatrix exact_influence_matrix(LesionEvaluator& evaluator, const BoolMatrix& adjacency,
                                              int workers = 1) {
  const int n = evaluator.n_nodes();
  if (adjacency.rows() != n) throw std::invalid_argument("exact_influence_matrix: adjacency size mismatch");
  auto m = detail::empty_influence(adjacency);
  for (int i = 0; i < n; ++i) {
    const auto rep = exact_shapley(
        n, players_except(n, i),
        [&, i](const LesionMask& mask) { return evaluator.evaluate(mask)->nodes[static_cast<std::size_t>(i)]; },
        workers);
    detail::fill_row(m, i, rep);
  }
  return m;
}

struct InfluenceSummary {
  // Per source node; NaN where a class is empty (or has one entry, for CIs).
  std::vector<double> mean_direct, ci_direct, mean_indirect, ci_indirect, positive_ratio;
  std::size_t n_direct = 0;
  std::size_t n_indirect = 0;
};

namespace detail {

inline std::pair<double, double> mean_ci(const std::vector<double>& v) {
  if (v.empty()) return {kMissing, kMissing};
  const auto n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, kMissing};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

}  // namespace detail

// For source j: fraction of targets i != j with values(i, j) > 0.
inline std::vector<double> positive_influence_ratio(const InfluenceMatrix& m) {
  const int n = m.n_nodes();
  std::vector<double> out(static_cast<std::size_t>(n), kMissing);
  if (n < 2) return out;
  for (int j = 0; j < n; ++j) {
    int pos = 0;
    for (int i = 0; i < n; ++i)
      if (i != j && m.values(i, j) > 0.0) ++pos;
    out[static_cast<std::size_t>(j)] = static_cast<double>(pos) / static_cast<double>(n - 1);
  }
  return out;
}

inline InfluenceSummary decompose_direct_indirect(const InfluenceMatrix& m) {
  const int n = m.n_nodes();
  InfluenceSummary s;
  s.positive_ratio = positive_influence_ratio(m);
  for (int j = 0; j < n; ++j) {
    std::vector<double> direct, indirect;
    for (int i = 0; i < n; ++i) {
      if (i == j) continue;
      (m.is_direct(i, j) ? direct : indirect).push_back(m.values(i, j));
    }
    s.n_direct += direct.size();
    s.n_indirect += indirect.size();
    const auto [md, cd] = detail::mean_ci(direct);
    const auto [mi, ci] = detail::mean_ci(indirect);
    s.mean_direct.push_back(md);
    s.ci_direct.push_back(cd);
    s.mean_indirect.push_back(mi);
    s.ci_indirect.push_back(ci);
  }
  return s;
}

// Paired (|structural weight|, influence) over the direct entries.
struct StructurePairs {
  std::vector<double> abs_weight;
  std::vector<double> influence;
};

inline StructurePairs structure_pairs(const InfluenceMatrix& m, const Connectome& c) {
  if (c.n_nodes != m.n_nodes()) throw std::invalid_argument("structure_pairs: node count mismatch");
  StructurePairs p;
  for (int i = 0; i < c.n_nodes; ++i)
    for (int j = 0; j < c.n_nodes; ++j)
      if (i != j && m.is_direct(i, j)) {
        p.abs_weight.push_back(std::abs(c.weights(i, j)));
        p.influence.push_back(m.values(i, j));
      }
  return p;
}

inline Correlation structure_influence_correlation(const InfluenceMatrix& m, const Connectome& c,
                                                   std::size_t n_shuffles, std::uint64_t seed) {
  const auto p = structure_pairs(m, c);
  return correlate(p.abs_weight, p.influence, n_shuffles, seed);
}

namespace detail {

inline std::string cell(double v) { return std::isnan(v) ? std::string("NA") : io::fmt(v); }

inline void write_square(const Matrix& values, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (j) out << ',';
      out << (i == j ? std::string("NA") : cell(values(i, j)));
    }
    out << '\n';
  }
}

}  // namespace detail

// `<stem>.csv` (values), `<stem>_ci95.csv`; rows are targets, NA diagonal.
inline void save_influence(const InfluenceMatrix& m, const std::filesystem::path& stem) {
  detail::write_square(m.values, stem.string() + ".csv");
  detail::write_square(m.ci95, stem.string() + "_ci95.csv");
}

inline InfluenceMatrix load_influence(const std::filesystem::path& stem, const BoolMatrix& adjacency) {
  auto m = detail::empty_influence(adjacency);
  const auto read = [&](const std::string& path, Matrix& dst) {
    const auto rows = io::read_csv(path);
    if (static_cast<Eigen::Index>(rows.size()) != dst.rows()) throw std::runtime_error("influence CSV: wrong row count");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (static_cast<Eigen::Index>(rows[i].size()) != dst.cols()) throw std::runtime_error("influence CSV: ragged row");
      for (std::size_t j = 0; j < rows[i].size(); ++j)
        dst(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            rows[i][j] == "NA" ? kMissing : io::parse_double(rows[i][j]);
    }
  };
  read(stem.string() + ".csv", m.values);
  read(stem.string() + "_ci95.csv", m.ci95);
  return m;
}

inline void save_summary(const InfluenceSummary& s, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  out << "node,mean_direct,ci_direct,mean_indirect,ci_indirect,positive_ratio\n";
  for (std::size_t j = 0; j < s.mean_direct.size(); ++j)
    out << j << ',' << detail::cell(s.mean_direct[j]) << ',' << detail::cell(s.ci_direct[j]) << ','
        << detail::cell(s.mean_indirect[j]) << ',' << detail::cell(s.ci_indirect[j]) << ','
        << detail::cell(s.positive_ratio[j]) << '\n';
}

}  // namespace esncid
