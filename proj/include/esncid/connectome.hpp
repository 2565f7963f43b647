#pragma once

// Weighted directed small-world graph shared by the ESN and SER models.
//
// Orientation: weights(i, j) is the weight of the edge j -> i, i.e. row i
// holds everything node i receives.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "esncid/io.hpp"
#include "esncid/rng.hpp"

namespace esncid {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct SmallWorldSpec {
  int n = 36;
  int k = 6;
  double p_long = 0.4;
  double weight_low = -0.5;
  double weight_high = 0.5;
  std::uint64_t seed = 0;
};

struct Connectome {
  int n_nodes = 0;
  Matrix weights;
  BoolMatrix adjacency;
  SmallWorldSpec spec;

  std::size_t edge_count() const { return static_cast<std::size_t>(adjacency.count()); }
  bool has_edge(int source, int target) const { return adjacency(target, source); }

  // In-neighbours of each node, ascending by source index.
  std::vector<std::vector<int>> in_neighbours() const {
    std::vector<std::vector<int>> in(n_nodes);
    for (int i = 0; i < n_nodes; ++i)
      for (int j = 0; j < n_nodes; ++j)
        if (adjacency(i, j)) in[i].push_back(j);
    return in;
  }
};

inline int ring_distance(int a, int b, int n) {
  const int d = std::abs(a - b) % n;
  return std::min(d, n - d);
}

// Ring lattice where each node sends edges to its k/2 nearest neighbours on
// each side; each edge is then rewired with probability p_long to a uniformly
// chosen node outside that neighbourhood. Out-degree is conserved.
inline Connectome generate_small_world(const SmallWorldSpec& spec) {
  const int n = spec.n;
  const int k = spec.k;
  if (k <= 0 || k % 2 != 0) throw std::invalid_argument("generate_small_world: k must be even and positive");
  if (k >= n) throw std::invalid_argument("generate_small_world: k must be smaller than n");
  if (!(spec.p_long >= 0.0 && spec.p_long <= 1.0))
    throw std::invalid_argument("generate_small_world: p_long must lie in [0, 1]");
  if (!(spec.weight_low < spec.weight_high))
    throw std::invalid_argument("generate_small_world: empty weight interval");

  Stream rng(spec.seed);
  Connectome c;
  c.n_nodes = n;
  c.spec = spec;
  c.adjacency = BoolMatrix::Constant(n, n, false);
  c.weights = Matrix::Zero(n, n);

  const int half = k / 2;
  for (int src = 0; src < n; ++src) {
    std::vector<int> targets;
    for (int d = 1; d <= half; ++d) {
      targets.push_back((src + d) % n);
      targets.push_back((src - d + n) % n);
    }
    for (int& t : targets) {
      if (rng.uniform() >= spec.p_long) continue;
      std::vector<int> candidates;
      for (int cand = 0; cand < n; ++cand) {
        if (cand == src || ring_distance(cand, src, n) <= half) continue;
        if (std::find(targets.begin(), targets.end(), cand) != targets.end()) continue;
        candidates.push_back(cand);
      }
      if (candidates.empty()) continue;
      t = candidates[rng.below(candidates.size())];
    }
    for (int t : targets) {
      c.adjacency(t, src) = true;
      c.weights(t, src) = rng.uniform(spec.weight_low, spec.weight_high);
    }
  }
  return c;
}

// Same adjacency, fresh uniform weights (the SER model uses positive weights
// on the ESN's graph).
inline Connectome resample_weights(const Connectome& c, double low, double high, std::uint64_t seed) {
  if (!(low < high)) throw std::invalid_argument("resample_weights: empty weight interval");
  Stream rng(seed);
  Connectome out = c;
  out.spec.weight_low = low;
  out.spec.weight_high = high;
  out.weights.setZero();
  for (int j = 0; j < c.n_nodes; ++j)
    for (int i = 0; i < c.n_nodes; ++i)
      if (c.adjacency(i, j)) out.weights(i, j) = rng.uniform(low, high);
  return out;
}

// Largest eigenvalue modulus via a real Schur decomposition.
inline double spectral_radius(const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("spectral_radius: matrix must be square");
  if (m.rows() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("spectral_radius: eigenvalue iteration did not converge");
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

inline Connectome scale_to_spectral_radius(const Connectome& c, double rho_target) {
  if (!(rho_target > 0.0)) throw std::invalid_argument("scale_to_spectral_radius: target must be positive");
  const double rho = spectral_radius(c.weights);
  if (!(rho > 0.0)) throw std::invalid_argument("scale_to_spectral_radius: weight matrix has zero spectral radius");
  Connectome out = c;
  out.weights *= rho_target / rho;
  return out;
}

// --- persistence --------------------------------------------------------

inline nlohmann::json connectome_header(const Connectome& c) {
  return {{"n_nodes", c.n_nodes},
          {"k", c.spec.k},
          {"p_long", c.spec.p_long},
          {"seed", c.spec.seed},
          {"weight_low", c.spec.weight_low},
          {"weight_high", c.spec.weight_high},
          {"n_edges", c.edge_count()}};
}

// Writes `<stem>.csv` (source,target,weight) and `<stem>.json`.
inline void save_connectome(const Connectome& c, const std::filesystem::path& stem) {
  {
    auto out = io::open_out(std::filesystem::path(stem).replace_extension(".csv"));
    out << "source,target,weight\n";
    for (int j = 0; j < c.n_nodes; ++j)
      for (int i = 0; i < c.n_nodes; ++i)
        if (c.adjacency(i, j)) out << j << ',' << i << ',' << io::fmt(c.weights(i, j)) << '\n';
  }
  auto out = io::open_out(std::filesystem::path(stem).replace_extension(".json"));
  out << connectome_header(c).dump(2) << '\n';
}

inline Connectome load_connectome(const std::filesystem::path& stem) {
  auto hin = io::open_in(std::filesystem::path(stem).replace_extension(".json"));
  const auto header = nlohmann::json::parse(hin);
  Connectome c;
  c.n_nodes = header.at("n_nodes").get<int>();
  c.spec.n = c.n_nodes;
  c.spec.k = header.at("k").get<int>();
  c.spec.p_long = header.at("p_long").get<double>();
  c.spec.seed = header.at("seed").get<std::uint64_t>();
  c.spec.weight_low = header.at("weight_low").get<double>();
  c.spec.weight_high = header.at("weight_high").get<double>();
  c.weights = Matrix::Zero(c.n_nodes, c.n_nodes);
  c.adjacency = BoolMatrix::Constant(c.n_nodes, c.n_nodes, false);
  const auto rows = io::read_csv(std::filesystem::path(stem).replace_extension(".csv"));
  if (rows.empty() || rows.front() != std::vector<std::string>{"source", "target", "weight"})
    throw std::runtime_error("connectome CSV: expected header source,target,weight");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 3) throw std::runtime_error("connectome CSV: malformed row " + std::to_string(r));
    const int src = std::stoi(rows[r][0]);
    const int dst = std::stoi(rows[r][1]);
    if (src < 0 || dst < 0 || src >= c.n_nodes || dst >= c.n_nodes)
      throw std::runtime_error("connectome CSV: node index out of range");
    c.adjacency(dst, src) = true;
    c.weights(dst, src) = io::parse_double(rows[r][2]);
  }
  return c;
}

}  // namespace esncid
