#pragma once

// Leaky-integrator echo state network:
//
//   x(t+1) = (1 - a*eta) x(t) + a*eta * tanh(W_in u(t+1) + W x(t) + W_fb y(t))
//   y(t)   = W_out [x(t); u(t)]
//
// The update is a convex combination for 0 < a*eta <= 1, so |x_i| never
// exceeds max(|x_i(0)|, 1).
//
// Lesioned nodes have their state clamped to zero at every step, which is
// the same as deleting all of their incoming and outgoing weights.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "esncid/connectome.hpp"
#include "esncid/io.hpp"
#include "esncid/lesion_mask.hpp"
#include "esncid/rng.hpp"
#include "esncid/time_series.hpp"

namespace esncid {

struct EsnParams {
  double leak_a = 0.1;
  double eta = 1.0;
  double rho_target = 0.66;
  Matrix w;
  Vector w_in;
  Vector w_fb;
  std::uint64_t seed = 0;

  int n_nodes() const { return static_cast<int>(w.rows()); }
};

struct EsnConfig {
  double leak_a = 0.1;
  double eta = 1.0;
  double rho_target = 0.66;
  double input_scale = 0.75;
  // W_fb ~ U[-feedback_scale, feedback_scale]; zero disables feedback.
  double feedback_scale = 0.0;
  std::uint64_t seed = 0;
};

// Scales the connectome to rho_target and draws the input/feedback columns.
inline EsnParams make_esn_params(const Connectome& c, const EsnConfig& cfg) {
  if (!(cfg.leak_a > 0.0) || !(cfg.eta > 0.0)) throw std::invalid_argument("make_esn_params: a and eta must be positive");
  if (cfg.leak_a * cfg.eta > 1.0) throw std::invalid_argument("make_esn_params: a*eta must not exceed 1");
  EsnParams p;
  p.leak_a = cfg.leak_a;
  p.eta = cfg.eta;
  p.rho_target = cfg.rho_target;
  p.seed = cfg.seed;
  p.w = scale_to_spectral_radius(c, cfg.rho_target).weights;
  const int n = c.n_nodes;
  Stream rng(derive_seed(cfg.seed, "esn.w_in"));
  p.w_in.resize(n);
  for (int i = 0; i < n; ++i) p.w_in(i) = rng.uniform(-cfg.input_scale, cfg.input_scale);
  p.w_fb = Vector::Zero(n);
  if (cfg.feedback_scale > 0.0) {
    Stream fb(derive_seed(cfg.seed, "esn.w_fb"));
    for (int i = 0; i < n; ++i) p.w_fb(i) = fb.uniform(-cfg.feedback_scale, cfg.feedback_scale);
  }
  return p;
}

// One state update; lesioned coordinates come out as exactly zero.
inline Vector esn_step(const EsnParams& p, const Vector& x, double u, double y_prev,
                       const LesionMask& mask) {
  const int n = p.n_nodes();
  Vector xm = x;
  for (int i = 0; i < n; ++i)
    if (mask.contains(i)) xm(i) = 0.0;
  Vector pre = p.w_in * u + p.w * xm + p.w_fb * y_prev;
  const double gain = p.leak_a * p.eta;
  Vector next = (1.0 - gain) * xm + gain * pre.array().tanh().matrix();
  for (int i = 0; i < n; ++i)
    if (mask.contains(i)) next(i) = 0.0;
  return next;
}

struct EsnModel {
  EsnParams params;
  Vector w_out;  // n + 1 entries: states then the input channel
  Vector post_train_state;
  double last_teacher = 0.0;
  double train_mse = 0.0;
  double test_mse = std::numeric_limits<double>::quiet_NaN();

  int n_nodes() const { return params.n_nodes(); }
};

inline double readout(const EsnModel& m, const Vector& x, double u) {
  const int n = m.n_nodes();
  if (x.size() != n || m.w_out.size() != n + 1) throw std::invalid_argument("readout: dimension mismatch");
  return m.w_out.head(n).dot(x) + m.w_out(n) * u;
}

struct ReservoirTrajectory {
  Matrix states;  // horizon x n
  std::vector<double> outputs;
};

inline double evaluate_mse(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) throw std::invalid_argument("evaluate_mse: length mismatch");
  if (pred.empty()) throw std::invalid_argument("evaluate_mse: empty series");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

inline double evaluate_mse(const TimeSeries& pred, const TimeSeries& target) {
  return evaluate_mse(pred.values, target.values);
}

struct TrainOptions {
  std::size_t washout = 500;
  double ridge = 1e-8;
};

// Teacher forcing with u(t) = teacher(t-1), then least squares on the
// extended states [x(t); u(t)] collected after the washout.
inline EsnModel train_readout(const EsnParams& p, const TimeSeries& teacher, const TrainOptions& opt = {}) {
  const std::size_t len = teacher.size();
  if (len <= opt.washout + 1) throw std::invalid_argument("train_readout: teacher shorter than washout + 2");
  if (opt.ridge < 0.0) throw std::invalid_argument("train_readout: ridge must be nonnegative");
  const int n = p.n_nodes();
  const LesionMask intact = LesionMask::none(n);
  const auto rows = static_cast<Eigen::Index>(len - 1 - opt.washout);
  Matrix z(rows, n + 1);
  Vector target(rows);
  Vector x = Vector::Zero(n);
  for (std::size_t t = 1; t < len; ++t) {
    const double u = teacher[t - 1];
    x = esn_step(p, x, u, u, intact);
    if (t > opt.washout) {
      const auto r = static_cast<Eigen::Index>(t - 1 - opt.washout);
      z.row(r).head(n) = x.transpose();
      z(r, n) = u;
      target(r) = teacher[t];
    }
  }
  Matrix gram = z.transpose() * z;
  gram.diagonal().array() += opt.ridge;
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(ldlt.rcond() > std::numeric_limits<double>::epsilon()))
    throw std::runtime_error("train_readout: normal matrix is numerically singular (rank deficient states)");

  EsnModel m;
  m.params = p;
  m.w_out = ldlt.solve(z.transpose() * target);
  m.post_train_state = x;
  m.last_teacher = teacher[len - 1];
  m.train_mse = (z * m.w_out - target).squaredNorm() / static_cast<double>(rows);
  return m;
}

namespace detail {

// Closed-loop rollout on the surviving sub-network. `visit(t, alive, xs, y)`
// sees the compact state vector of the survivors at every step.
template <typename Visit>
void closed_loop(const EsnModel& m, const LesionMask& mask, std::size_t horizon, double u_clamp,
                 Visit&& visit) {
  const int n = m.n_nodes();
  if (mask.n_nodes() != n) throw std::invalid_argument("free_run: mask size does not match model");
  const std::vector<int> alive = mask.survivors();
  const auto k = static_cast<Eigen::Index>(alive.size());
  const EsnParams& p = m.params;

  Matrix w(k, k);
  Vector w_in(k), w_fb(k), w_out(k), xs(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < k; ++c) w(r, c) = p.w(alive[r], alive[c]);
    w_in(r) = p.w_in(alive[r]);
    w_fb(r) = p.w_fb(alive[r]);
    w_out(r) = m.w_out(alive[r]);
    xs(r) = m.post_train_state(alive[r]);
  }
  const double w_out_u = m.w_out(n);
  const double gain = p.leak_a * p.eta;
  const bool has_fb = !w_fb.isZero(0.0);

  Vector pre(k);
  double u = m.last_teacher;
  double y_prev = m.last_teacher;
  for (std::size_t t = 0; t < horizon; ++t) {
    pre.noalias() = w * xs;
    pre += w_in * u;
    if (has_fb) pre += w_fb * y_prev;
    xs = (1.0 - gain) * xs + gain * pre.array().tanh().matrix();
    const double y = w_out.dot(xs) + w_out_u * u;
    visit(t, alive, xs, y);
    y_prev = y;
    u = std::clamp(y, -u_clamp, u_clamp);
  }
}

}  // namespace detail

inline ReservoirTrajectory free_run(const EsnModel& m, const LesionMask& mask, std::size_t horizon,
                                    double u_clamp = 1e6) {
  if (horizon < 1) throw std::invalid_argument("free_run: horizon must be >= 1");
  if (!(u_clamp > 0.0)) throw std::invalid_argument("free_run: u_clamp must be positive");
  ReservoirTrajectory traj;
  traj.states = Matrix::Zero(static_cast<Eigen::Index>(horizon), m.n_nodes());
  traj.outputs.reserve(horizon);
  detail::closed_loop(m, mask, horizon, u_clamp,
                      [&](std::size_t t, const std::vector<int>& alive, const Vector& xs, double y) {
                        for (std::size_t r = 0; r < alive.size(); ++r)
                          traj.states(static_cast<Eigen::Index>(t), alive[r]) = xs(static_cast<Eigen::Index>(r));
                        traj.outputs.push_back(y);
                      });
  return traj;
}

// Energies of one rollout without materialising the trajectory.
struct RolloutEnergies {
  double output = 0.0;
  std::vector<double> nodes;
};

inline RolloutEnergies free_run_energies(const EsnModel& m, const LesionMask& mask, std::size_t horizon,
                                         double u_clamp = 1e6) {
  if (horizon < 1) throw std::invalid_argument("free_run: horizon must be >= 1");
  const int n = m.n_nodes();
  std::vector<double> sq(static_cast<std::size_t>(n), 0.0);
  Vector acc;
  double out_sq = 0.0;
  detail::closed_loop(m, mask, horizon, u_clamp,
                      [&](std::size_t t, const std::vector<int>& alive, const Vector& xs, double y) {
                        if (t == 0) acc = Vector::Zero(xs.size());
                        acc += xs.cwiseAbs2();
                        out_sq += y * y;
                        if (t + 1 == horizon)
                          for (std::size_t r = 0; r < alive.size(); ++r)
                            sq[static_cast<std::size_t>(alive[r])] = acc(static_cast<Eigen::Index>(r));
                      });
  RolloutEnergies e;
  e.output = std::sqrt(out_sq);
  e.nodes.resize(sq.size());
  for (std::size_t i = 0; i < sq.size(); ++i) e.nodes[i] = std::sqrt(sq[i]);
  return e;
}

// --- persistence --------------------------------------------------------

namespace detail {

inline void write_matrix_csv(const Matrix& m, const std::filesystem::path& path) {
  auto out = io::open_out(path);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << io::fmt(m(r, c));
    }
    out << '\n';
  }
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  const auto rows = io::read_csv(path);
  if (rows.empty()) return {};
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw std::runtime_error("matrix CSV: ragged row in " + path.string());
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = io::parse_double(rows[r][c]);
  }
  return m;
}

}  // namespace detail

// `<dir>/<name>.json` plus one CSV per matrix, all named `<name>_*.csv`.
inline void save_model(const EsnModel& m, const std::filesystem::path& dir, const std::string& name) {
  detail::write_matrix_csv(m.params.w, dir / (name + "_w.csv"));
  detail::write_matrix_csv(m.params.w_in, dir / (name + "_w_in.csv"));
  detail::write_matrix_csv(m.params.w_fb, dir / (name + "_w_fb.csv"));
  detail::write_matrix_csv(m.w_out.transpose(), dir / (name + "_w_out.csv"));
  detail::write_matrix_csv(m.post_train_state, dir / (name + "_state.csv"));
  const nlohmann::json j = {{"n_nodes", m.n_nodes()},
                            {"leak_a", m.params.leak_a},
                            {"eta", m.params.eta},
                            {"rho_target", m.params.rho_target},
                            {"seed", m.params.seed},
                            {"last_teacher", m.last_teacher},
                            {"train_mse", m.train_mse},
                            {"test_mse", std::isfinite(m.test_mse) ? nlohmann::json(m.test_mse) : nlohmann::json()},
                            {"activation", "tanh"},
                            {"output_activation", "identity"}};
  auto out = io::open_out(dir / (name + ".json"));
  out << j.dump(2) << '\n';
}

inline EsnModel load_model(const std::filesystem::path& dir, const std::string& name) {
  auto in = io::open_in(dir / (name + ".json"));
  const auto j = nlohmann::json::parse(in);
  EsnModel m;
  m.params.leak_a = j.at("leak_a").get<double>();
  m.params.eta = j.at("eta").get<double>();
  m.params.rho_target = j.at("rho_target").get<double>();
  m.params.seed = j.at("seed").get<std::uint64_t>();
  m.params.w = detail::read_matrix_csv(dir / (name + "_w.csv"));
  m.params.w_in = detail::read_matrix_csv(dir / (name + "_w_in.csv")).col(0);
  m.params.w_fb = detail::read_matrix_csv(dir / (name + "_w_fb.csv")).col(0);
  m.w_out = detail::read_matrix_csv(dir / (name + "_w_out.csv")).row(0).transpose();
  m.post_train_state = detail::read_matrix_csv(dir / (name + "_state.csv")).col(0);
  m.last_teacher = j.at("last_teacher").get<double>();
  m.train_mse = j.at("train_mse").get<double>();
  m.test_mse = j.at("test_mse").is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at("test_mse").get<double>();
  const int n = j.at("n_nodes").get<int>();
  if (m.params.w.rows() != n || m.params.w.cols() != n || m.w_out.size() != n + 1)
    throw std::runtime_error("load_model: matrix dimensions disagree with manifest");
  return m;
}

}  // namespace esncid
