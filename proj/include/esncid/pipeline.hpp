#pragma once

// End-to-end experiment: configuration, stage functions that communicate
// only through files in the run directory, the run manifest, and the
// hyperparameter sweep.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "esncid/analysis.hpp"
#include "esncid/connectome.hpp"
#include "esncid/influence.hpp"
#include "esncid/io.hpp"
#include "esncid/lesioning.hpp"
#include "esncid/mackey_glass.hpp"
#include "esncid/parallel.hpp"
#include "esncid/reservoir.hpp"
#include "esncid/rng.hpp"
#include "esncid/ser_model.hpp"
#include "esncid/shapley.hpp"

namespace esncid {

inline constexpr const char* kVersion = "esncid 1.0.0";

struct ExperimentConfig {
  std::string scale = "desk";
  std::uint64_t seed = 1;
  int workers = 1;
  std::filesystem::path out = "run";

  // topology
  int n = 36;
  int k = 6;
  double p_long = 0.4;
  double esn_weight_low = -0.5, esn_weight_high = 0.5;
  double ser_weight_low = 0.1, ser_weight_high = 1.0;

  // Mackey-Glass data
  double mg_tau = 17.0;
  double mg_dt = 0.1;
  std::size_t mg_sample_every = 1;
  std::size_t mg_discard = 1000;
  double mg_history = 1.2;
  double mg_jitter = 1e-3;

  // echo state networks
  double rho = 0.66;
  double leak_a = 0.1;
  double leak_a_control = 0.001;
  double eta = 1.0;
  double input_scale = 0.75;
  double feedback_scale = 0.0;
  std::size_t washout = 500;
  double ridge = 1e-8;
  std::size_t train_len = 2500;
  std::size_t test_len = 500;
  double u_clamp = 1.0;

  // SER
  SerParams ser;
  int ser_runs = 5;

  // lesion analyses
  std::size_t behavior_permutations = 1000;
  std::size_t cid_permutations = 500;
  std::size_t ser_cid_permutations = 500;
  std::size_t n_shuffles = 10000;
  std::size_t histogram_bins = 60;
  std::size_t cache_budget = std::size_t{1} << 20;
  // CID at more than this many rollouts per model needs allow_large_cid.
  double cid_rollout_gate = 2e6;
  bool allow_large_cid = false;

  std::size_t series_len() const { return mg_discard + train_len + test_len; }
};

// Presets: `smoke` is a minutes-scale functional run, `desk` the acceptance
// scale, `paper` the full permutation budget.
inline ExperimentConfig preset(const std::string& scale) {
  ExperimentConfig c;
  c.scale = scale;
  if (scale == "desk") return c;
  if (scale == "smoke") {
    c.n = 12;
    c.behavior_permutations = 200;
    c.cid_permutations = 200;
    c.ser_cid_permutations = 200;
    c.ser_runs = 3;
    c.n_shuffles = 1000;
    return c;
  }
  if (scale == "paper") {
    c.behavior_permutations = 10000;
    c.cid_permutations = 5000;
    c.ser_cid_permutations = 5000;
    c.ser_runs = 10;
    return c;
  }
  throw std::invalid_argument("unknown scale '" + scale + "' (expected smoke, desk or paper)");
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {
      {"scale", c.scale},
      {"seed", c.seed},
      {"topology",
       {{"n", c.n},
        {"k", c.k},
        {"p_long", c.p_long},
        {"esn_weights", {c.esn_weight_low, c.esn_weight_high}},
        {"ser_weights", {c.ser_weight_low, c.ser_weight_high}}}},
      {"mackey_glass",
       {{"tau", c.mg_tau},
        {"dt", c.mg_dt},
        {"sample_every", c.mg_sample_every},
        {"discard", c.mg_discard},
        {"history", c.mg_history},
        {"jitter", c.mg_jitter}}},
      {"esn",
       {{"rho", c.rho},
        {"leak_a", c.leak_a},
        {"leak_a_control", c.leak_a_control},
        {"eta", c.eta},
        {"input_scale", c.input_scale},
        {"feedback_scale", c.feedback_scale},
        {"washout", c.washout},
        {"ridge", c.ridge},
        {"train_len", c.train_len},
        {"test_len", c.test_len},
        {"u_clamp", c.u_clamp}}},
      {"ser",
       {{"p_spont", c.ser.p_spont},
        {"theta", c.ser.theta},
        {"p_recover", c.ser.p_recover},
        {"sigma_smooth", c.ser.sigma_smooth},
        {"n_steps", c.ser.n_steps},
        {"runs", c.ser_runs}}},
      {"msa",
       {{"behavior_permutations", c.behavior_permutations},
        {"cid_permutations", c.cid_permutations},
        {"ser_cid_permutations", c.ser_cid_permutations},
        {"n_shuffles", c.n_shuffles},
        {"histogram_bins", c.histogram_bins},
        {"cache_budget", c.cache_budget},
        {"cid_rollout_gate", c.cid_rollout_gate},
        {"allow_large_cid", c.allow_large_cid}}},
      {"io", {{"out", c.out.generic_string()}}},
  };
}

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline void read_pair(const nlohmann::json& j, const char* key, double& lo, double& hi) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw std::invalid_argument(std::string("config: ") + key + " must be [low, high]");
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

}  // namespace detail

// Missing keys keep the preset named by "scale" (default desk). "seed" is
// mandatory: runs are never seeded from the clock.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c = preset(j.value("scale", std::string("desk")));
  if (!j.contains("seed")) throw std::invalid_argument("config: 'seed' is required");
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("topology")) {
    const auto& t = j.at("topology");
    detail::read_opt(t, "n", c.n);
    detail::read_opt(t, "k", c.k);
    detail::read_opt(t, "p_long", c.p_long);
    detail::read_pair(t, "esn_weights", c.esn_weight_low, c.esn_weight_high);
    detail::read_pair(t, "ser_weights", c.ser_weight_low, c.ser_weight_high);
  }
  if (j.contains("mackey_glass")) {
    const auto& m = j.at("mackey_glass");
    detail::read_opt(m, "tau", c.mg_tau);
    detail::read_opt(m, "dt", c.mg_dt);
    detail::read_opt(m, "sample_every", c.mg_sample_every);
    detail::read_opt(m, "discard", c.mg_discard);
    detail::read_opt(m, "history", c.mg_history);
    detail::read_opt(m, "jitter", c.mg_jitter);
  }
  if (j.contains("esn")) {
    const auto& e = j.at("esn");
    detail::read_opt(e, "rho", c.rho);
    detail::read_opt(e, "leak_a", c.leak_a);
    detail::read_opt(e, "leak_a_control", c.leak_a_control);
    detail::read_opt(e, "eta", c.eta);
    detail::read_opt(e, "input_scale", c.input_scale);
    detail::read_opt(e, "feedback_scale", c.feedback_scale);
    detail::read_opt(e, "washout", c.washout);
    detail::read_opt(e, "ridge", c.ridge);
    detail::read_opt(e, "train_len", c.train_len);
    detail::read_opt(e, "test_len", c.test_len);
    detail::read_opt(e, "u_clamp", c.u_clamp);
  }
  if (j.contains("ser")) {
    const auto& s = j.at("ser");
    detail::read_opt(s, "p_spont", c.ser.p_spont);
    detail::read_opt(s, "theta", c.ser.theta);
    detail::read_opt(s, "p_recover", c.ser.p_recover);
    detail::read_opt(s, "sigma_smooth", c.ser.sigma_smooth);
    detail::read_opt(s, "n_steps", c.ser.n_steps);
    detail::read_opt(s, "runs", c.ser_runs);
  }
  if (j.contains("msa")) {
    const auto& m = j.at("msa");
    detail::read_opt(m, "behavior_permutations", c.behavior_permutations);
    detail::read_opt(m, "cid_permutations", c.cid_permutations);
    detail::read_opt(m, "ser_cid_permutations", c.ser_cid_permutations);
    detail::read_opt(m, "n_shuffles", c.n_shuffles);
    detail::read_opt(m, "histogram_bins", c.histogram_bins);
    detail::read_opt(m, "cache_budget", c.cache_budget);
    detail::read_opt(m, "cid_rollout_gate", c.cid_rollout_gate);
    detail::read_opt(m, "allow_large_cid", c.allow_large_cid);
  }
  if (j.contains("io") && j.at("io").contains("out")) c.out = j.at("io").at("out").get<std::string>();
  return c;
}

inline void validate(const ExperimentConfig& c) {
  if (c.n < 3 || c.n > LesionMask::kMaxNodes) throw std::invalid_argument("config: n must lie in [3, 64]");
  if (c.train_len <= c.washout + 1) throw std::invalid_argument("config: train_len must exceed washout + 1");
  if (c.test_len < 1) throw std::invalid_argument("config: test_len must be >= 1");
  if (!(c.u_clamp > 0.0)) throw std::invalid_argument("config: u_clamp must be positive");
  if (c.ser_runs < 1) throw std::invalid_argument("config: ser.runs must be >= 1");
  if (c.behavior_permutations < 1 || c.cid_permutations < 1 || c.ser_cid_permutations < 1)
    throw std::invalid_argument("config: permutation counts must be >= 1");
  if (c.n_shuffles < 100) throw std::invalid_argument("config: n_shuffles must be >= 100");
  if (c.workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  validate(c.ser);
}

// Stage seeds: one label per stage, so stages never share a stream.
inline std::uint64_t stage_seed(const ExperimentConfig& c, std::string_view stage, std::uint64_t index = 0) {
  return derive_seed(c.seed, stage, index);
}

// --- building blocks shared by the pipeline and the sweep -----------------

struct TaskData {
  TimeSeries train;
  TimeSeries test;
};

inline TaskData make_task_data(const ExperimentConfig& c, std::uint64_t seed) {
  MackeyGlassParams mg;
  mg.tau = c.mg_tau;
  mg.dt_int = c.mg_dt;
  mg.sample_every = c.mg_sample_every;
  mg.n_samples = c.series_len();
  mg.history_value = c.mg_history;
  mg.jitter = c.mg_jitter;
  mg.seed = seed;
  const TimeSeries s = squash(integrate_mackey_glass(mg));
  return {s.slice(c.mg_discard, c.train_len), s.slice(c.mg_discard + c.train_len, c.test_len)};
}

inline SmallWorldSpec topology_spec(const ExperimentConfig& c, std::uint64_t seed) {
  SmallWorldSpec sw;
  sw.n = c.n;
  sw.k = c.k;
  sw.p_long = c.p_long;
  sw.weight_low = c.esn_weight_low;
  sw.weight_high = c.esn_weight_high;
  sw.seed = seed;
  return sw;
}

inline EsnModel train_esn(const ExperimentConfig& c, const Connectome& conn, const TaskData& data, double rho,
                          double leak_a, std::uint64_t seed) {
  EsnConfig ec;
  ec.leak_a = leak_a;
  ec.eta = c.eta;
  ec.rho_target = rho;
  ec.input_scale = c.input_scale;
  ec.feedback_scale = c.feedback_scale;
  ec.seed = seed;
  EsnModel m = train_readout(make_esn_params(conn, ec), data.train, {c.washout, c.ridge});
  const auto traj = free_run(m, LesionMask::none(conn.n_nodes), c.test_len, c.u_clamp);
  m.test_mse = evaluate_mse(traj.outputs, data.test.values);
  return m;
}

// --- stages ---------------------------------------------------------------

struct StageResult {
  explicit StageResult(std::string stage = {}) : name(std::move(stage)) {}

  std::string name;
  double seconds = 0.0;
  std::vector<std::filesystem::path> artifacts;  // relative to the run dir
  nlohmann::json info = nlohmann::json::object();
};

namespace stages {

namespace fs = std::filesystem;

inline StageResult generate(const ExperimentConfig& c, const fs::path& dir) {
  StageResult r{"generate"};
  const Connectome conn = generate_small_world(topology_spec(c, stage_seed(c, "topology")));
  save_connectome(conn, dir / "connectome_esn");
  const Connectome ser = resample_weights(conn, c.ser_weight_low, c.ser_weight_high, stage_seed(c, "ser.weights"));
  save_connectome(ser, dir / "connectome_ser");
  const TaskData data = make_task_data(c, stage_seed(c, "mackey_glass"));
  save_series(data.train, dir / "mg_train.csv");
  save_series(data.test, dir / "mg_test.csv");
  r.artifacts = {"connectome_esn.csv", "connectome_esn.json", "connectome_ser.csv", "connectome_ser.json",
                 "mg_train.csv", "mg_test.csv"};
  r.info = {{"edges", conn.edge_count()}, {"spectral_radius_raw", spectral_radius(conn.weights)}};
  return r;
}

inline TaskData load_task_data(const fs::path& dir) {
  return {load_series(dir / "mg_train.csv"), load_series(dir / "mg_test.csv")};
}

inline StageResult train(const ExperimentConfig& c, const fs::path& dir) {
  StageResult r{"train"};
  const Connectome conn = load_connectome(dir / "connectome_esn");
  const TaskData data = load_task_data(dir);
  const std::uint64_t seed = stage_seed(c, "esn");
  const EsnModel intact = train_esn(c, conn, data, c.rho, c.leak_a, seed);
  const EsnModel control = train_esn(c, conn, data, c.rho, c.leak_a_control, seed);
  save_model(intact, dir, "esn_intact");
  save_model(control, dir, "esn_control");
  for (const char* name : {"esn_intact", "esn_control"})
    for (const char* suffix : {".json", "_w.csv", "_w_in.csv", "_w_fb.csv", "_w_out.csv", "_state.csv"})
      r.artifacts.emplace_back(std::string(name) + suffix);
  r.info = {{"intact_test_mse", intact.test_mse},
            {"control_test_mse", control.test_mse},
            {"mse_ratio", control.test_mse / intact.test_mse}};
  return r;
}

inline nlohmann::json stats_json(const EvaluatorStats& s) {
  return {{"requests", s.requests}, {"cache_hits", s.hits}, {"unique_evaluations", s.rollouts}};
}

inline StageResult msa_behavior(const ExperimentConfig& c, const fs::path& dir) {
  StageResult r{"msa-behavior"};
  for (const char* variant : {"intact", "control"}) {
    const std::string name = variant;
    auto model = std::make_shared<const EsnModel>(load_model(dir, "esn_" + name));
    auto ev = make_esn_evaluator(model, c.test_len, c.u_clamp, c.cache_budget);
    const fs::path log_path = dir / ("perturbations_" + name + ".csv");
    PerturbationLog log(log_path);
    ev->set_log(&log);
    const auto rep = behavior_contributions(*ev, c.behavior_permutations, stage_seed(c, "msa." + name), c.workers);
    log.finalize(model->n_nodes());
    save_report(rep, dir / ("behavior_" + name));
    r.artifacts.insert(r.artifacts.end(), {"behavior_" + name + ".csv", "behavior_" + name + ".json",
                                           "perturbations_" + name + ".csv"});
    r.info[name] = {{"grand_value", rep.grand_value},
                    {"null_value", rep.null_value},
                    {"sum_gamma", rep.sum()},
                    {"evaluations", stats_json(ev->stats())}};
  }
  return r;
}

inline double cid_rollouts(int n, std::size_t perms) {
  return static_cast<double>(n) * static_cast<double>(perms) * static_cast<double>(n);
}

inline void check_cid_budget(const ExperimentConfig& c, int n, std::size_t perms) {
  const double rollouts = cid_rollouts(n, perms);
  if (rollouts > c.cid_rollout_gate && !c.allow_large_cid)
    throw std::runtime_error("CID would need up to " + std::to_string(static_cast<long long>(rollouts)) +
                             " rollouts per model; pass --allow-large-cid to run it");
}

inline StageResult cid(const ExperimentConfig& c, const fs::path& dir) {
  StageResult r{"cid"};
  const Connectome conn = load_connectome(dir / "connectome_esn");
  check_cid_budget(c, conn.n_nodes, c.cid_permutations);
  for (const char* variant : {"intact", "control"}) {
    const std::string name = variant;
    auto model = std::make_shared<const EsnModel>(load_model(dir, "esn_" + name));
    auto ev = make_esn_evaluator(model, c.test_len, c.u_clamp, c.cache_budget);
    const auto m = causal_influence_matrix(*ev, conn.adjacency, c.cid_permutations, stage_seed(c, "cid." + name),
                                           c.workers);
    save_influence(m, dir / ("influence_" + name));
    r.artifacts.insert(r.artifacts.end(), {"influence_" + name + ".csv", "influence_" + name + "_ci95.csv"});
    r.info[name] = {{"evaluations", stats_json(ev->stats())}};
  }
  return r;
}

inline StageResult ser_cid(const ExperimentConfig& c, const fs::path& dir) {
  StageResult r{"ser-cid"};
  auto ens = std::make_shared<SerEnsemble>();
  ens->connectome = load_connectome(dir / "connectome_ser");
  ens->params = c.ser;
  ens->params.seed = stage_seed(c, "ser.runs");
  ens->runs = c.ser_runs;
  check_cid_budget(c, ens->connectome.n_nodes, c.ser_cid_permutations);
  auto ev = make_ser_evaluator(ens, c.cache_budget);
  const auto m = causal_influence_matrix(*ev, ens->connectome.adjacency, c.ser_cid_permutations,
                                         stage_seed(c, "cid.ser"), c.workers);
  save_influence(m, dir / "influence_ser");
  r.artifacts = {"influence_ser.csv", "influence_ser_ci95.csv"};
  r.info = {{"evaluations", stats_json(ev->stats())}};
  return r;
}

inline ShapleyReport load_report(const fs::path& stem) {
  ShapleyReport rep;
  const auto rows = io::read_csv(stem.string() + ".csv");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    rep.players.push_back(std::stoi(rows[i].at(0)));
    rep.values.push_back(io::parse_double(rows[i].at(1)));
    rep.ci95.push_back(rows[i].at(2) == "NA" ? kMissing : io::parse_double(rows[i].at(2)));
  }
  auto in = io::open_in(stem.string() + ".json");
  const auto j = nlohmann::json::parse(in);
  rep.n_permutations = j.at("n_permutations").get<std::size_t>();
  rep.seed = j.at("seed").get<std::uint64_t>();
  rep.grand_value = j.at("grand_value").get<double>();
  rep.null_value = j.at("null_value").get<double>();
  rep.method = j.at("method").get<std::string>();
  rep.evaluations = j.at("evaluations").get<std::uint64_t>();
  return rep;
}

inline std::vector<EvaluationRecord> load_log(const fs::path& path) {
  const auto rows = io::read_csv(path);
  std::vector<EvaluationRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const int n = static_cast<int>(row.size()) - 3;
    EvaluationRecord rec;
    rec.eval_id = std::stoull(row.at(0));
    rec.mask = LesionMask(n, std::stoull(row.at(1), nullptr, 16));
    rec.behavior_energy = row.at(2) == "NA" ? kMissing : io::parse_double(row.at(2));
    for (int k = 0; k < n; ++k) rec.node_energies.push_back(io::parse_double(row.at(static_cast<std::size_t>(3 + k))));
    out.push_back(std::move(rec));
  }
  return out;
}

inline void save_ranking(const ShapleyReport& rep, const fs::path& path) {
  auto out = io::open_out(path);
  out << "rank,player,gamma\n";
  const auto order = rank_by_value(rep);
  for (std::size_t r = 0; r < order.size(); ++r)
    out << r + 1 << ',' << order[r] << ',' << io::fmt(rep.values[static_cast<std::size_t>(rep.index_of(order[r]))])
        << '\n';
}

inline StageResult analyze(const ExperimentConfig& c, const fs::path& dir) {
  StageResult r{"analyze"};
  const Connectome esn_conn = load_connectome(dir / "connectome_esn");
  const Connectome ser_conn = load_connectome(dir / "connectome_ser");
  const std::uint64_t seed = stage_seed(c, "analysis");

  nlohmann::json structure = nlohmann::json::object();
  for (const char* variant : {"intact", "control", "ser"}) {
    const std::string name = variant;
    const Connectome& conn = name == "ser" ? ser_conn : esn_conn;
    const auto m = load_influence(dir / ("influence_" + name), conn.adjacency);
    save_summary(decompose_direct_indirect(m), dir / ("influence_summary_" + name + ".csv"));
    const auto pairs = structure_pairs(m, conn);
    {
      auto out = io::open_out(dir / ("structure_pairs_" + name + ".csv"));
      out << "abs_weight,influence\n";
      for (std::size_t i = 0; i < pairs.abs_weight.size(); ++i)
        out << io::fmt(pairs.abs_weight[i]) << ',' << io::fmt(pairs.influence[i]) << '\n';
    }
    const auto corr = correlate(pairs.abs_weight, pairs.influence, c.n_shuffles, derive_seed(seed, "structure." + name));
    save_correlation(corr, dir / ("structure_correlation_" + name + ".json"));
    structure[name] = to_json(corr);
    r.artifacts.insert(r.artifacts.end(), {"influence_summary_" + name + ".csv", "structure_pairs_" + name + ".csv",
                                           "structure_correlation_" + name + ".json"});
  }

  for (const char* variant : {"intact", "control"}) {
    const std::string name = variant;
    save_ranking(load_report(dir / ("behavior_" + name)), dir / ("ranking_" + name + ".csv"));
    save_histogram(log_energy_histogram(load_log(dir / ("perturbations_" + name + ".csv")), c.histogram_bins),
                   dir / ("histogram_" + name + ".csv"));
    r.artifacts.insert(r.artifacts.end(), {"ranking_" + name + ".csv", "histogram_" + name + ".csv"});
  }

  // Behavior contribution vs share of positive outgoing influences (intact).
  const auto rep = load_report(dir / "behavior_intact");
  const auto ratio = positive_influence_ratio(load_influence(dir / "influence_intact", esn_conn.adjacency));
  {
    auto out = io::open_out(dir / "behavior_influence_pairs.csv");
    out << "node,positive_ratio,gamma\n";
    for (std::size_t i = 0; i < ratio.size(); ++i)
      out << i << ',' << io::fmt(ratio[i]) << ',' << io::fmt(rep.values[i]) << '\n';
  }
  const auto corr = correlate(ratio, rep.values, c.n_shuffles, derive_seed(seed, "behavior"));
  save_correlation(corr, dir / "behavior_influence_correlation.json");
  r.artifacts.insert(r.artifacts.end(), {"behavior_influence_pairs.csv", "behavior_influence_correlation.json"});
  r.info = {{"structure", structure}, {"behavior_influence", to_json(corr)}};
  return r;
}

}  // namespace stages

struct RunManifest {
  nlohmann::json config;
  nlohmann::json seeds;
  std::vector<StageResult> stages;
  std::vector<std::pair<std::string, std::string>> digests;  // (relative path, BLAKE2b-256)
  std::string version = kVersion;
  bool complete = false;
  std::string error;

  nlohmann::json to_json() const {
    nlohmann::json st = nlohmann::json::array();
    for (const auto& s : stages) st.push_back({{"name", s.name}, {"seconds", s.seconds}, {"info", s.info}});
    nlohmann::json art = nlohmann::json::array();
    for (const auto& [path, digest] : digests) art.push_back({{"path", path}, {"blake2b_256", digest}});
    nlohmann::json j = {{"version", version}, {"config", config}, {"seeds", seeds},
                        {"stages", st},       {"artifacts", art}, {"complete", complete}};
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

inline nlohmann::json stage_seeds(const ExperimentConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const char* s : {"topology", "ser.weights", "mackey_glass", "esn", "msa.intact", "msa.control", "cid.intact",
                        "cid.control", "cid.ser", "ser.runs", "analysis"})
    j[s] = stage_seed(c, s);
  return j;
}

using StageFn = StageResult (*)(const ExperimentConfig&, const std::filesystem::path&);

inline const std::vector<std::pair<std::string, StageFn>>& stage_table() {
  static const std::vector<std::pair<std::string, StageFn>> table = {
      {"generate", &stages::generate}, {"train", &stages::train},     {"msa-behavior", &stages::msa_behavior},
      {"cid", &stages::cid},           {"ser-cid", &stages::ser_cid}, {"analyze", &stages::analyze}};
  return table;
}

inline StageResult run_stage(const std::string& name, const ExperimentConfig& c) {
  for (const auto& [n, fn] : stage_table())
    if (n == name) {
      const auto t0 = std::chrono::steady_clock::now();
      StageResult r = fn(c, c.out);
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      return r;
    }
  throw std::invalid_argument("unknown stage '" + name + "'");
}

inline void write_manifest(RunManifest& m, const std::filesystem::path& dir) {
  m.digests.clear();
  for (const auto& s : m.stages)
    for (const auto& a : s.artifacts) m.digests.emplace_back(a.generic_string(), io::file_digest(dir / a));
  auto out = io::open_out(dir / "manifest.json");
  out << m.to_json().dump(2) << '\n';
}

// Runs every stage in order. On failure the manifest records the completed
// prefix and the error, then the exception propagates.
inline RunManifest run_pipeline(const ExperimentConfig& c,
                                const std::function<void(const StageResult&)>& on_stage = {}) {
  validate(c);
  RunManifest m;
  m.config = to_json(c);
  m.seeds = stage_seeds(c);
  std::filesystem::create_directories(c.out);
  try {
    for (const auto& [name, fn] : stage_table()) {
      m.stages.push_back(run_stage(name, c));
      if (on_stage) on_stage(m.stages.back());
    }
    m.complete = true;
  } catch (const std::exception& e) {
    m.error = e.what();
    write_manifest(m, c.out);
    throw;
  }
  write_manifest(m, c.out);
  return m;
}

// --- sweep ----------------------------------------------------------------

struct SweepCell {
  double rho = 0.0;
  double leak_a = 0.0;
  std::vector<double> mse;  // per instance; NaN where training failed
  std::vector<std::string> errors;
  double median = kMissing;
  double q25 = kMissing;
  double q75 = kMissing;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::size_t n_instances = 0;
  int argmin = -1;  // index into cells
};

// Linear-interpolation quantile of a sorted sample.
inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return kMissing;
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

// Instance k gets the same topology, data and input weights in every cell.
inline SweepResult sweep(const ExperimentConfig& c, const std::vector<double>& rho_grid,
                         const std::vector<double>& a_grid, std::size_t n_instances) {
  if (rho_grid.empty() || a_grid.empty()) throw std::invalid_argument("sweep: grids must be nonempty");
  if (n_instances < 1) throw std::invalid_argument("sweep: need at least one instance");
  SweepResult res;
  res.n_instances = n_instances;
  for (double rho : rho_grid)
    for (double a : a_grid) {
      SweepCell cell;
      cell.rho = rho;
      cell.leak_a = a;
      cell.mse.assign(n_instances, kMissing);
      cell.errors.assign(n_instances, "");
      res.cells.push_back(std::move(cell));
    }
  const std::size_t n_cells = res.cells.size();
  parallel_for(n_instances, c.workers, [&](std::size_t k) {
    Connectome conn;
    TaskData data;
    std::string setup_error;
    try {
      conn = generate_small_world(topology_spec(c, derive_seed(c.seed, "sweep.topology", k)));
      data = make_task_data(c, derive_seed(c.seed, "sweep.mackey_glass", k));
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    for (std::size_t ci = 0; ci < n_cells; ++ci) {
      auto& cell = res.cells[ci];
      if (!setup_error.empty()) {
        cell.errors[k] = setup_error;
        continue;
      }
      try {
        cell.mse[k] = train_esn(c, conn, data, cell.rho, cell.leak_a, derive_seed(c.seed, "sweep.esn", k)).test_mse;
      } catch (const std::exception& e) {
        cell.errors[k] = e.what();
      }
    }
  });
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t ci = 0; ci < n_cells; ++ci) {
    auto& cell = res.cells[ci];
    std::vector<double> ok;
    for (double v : cell.mse)
      if (std::isfinite(v)) ok.push_back(v);
    std::sort(ok.begin(), ok.end());
    cell.median = quantile_sorted(ok, 0.5);
    cell.q25 = quantile_sorted(ok, 0.25);
    cell.q75 = quantile_sorted(ok, 0.75);
    if (std::isfinite(cell.median) && cell.median < best) {
      best = cell.median;
      res.argmin = static_cast<int>(ci);
    }
  }
  return res;
}

namespace detail {

inline std::string csv_safe(std::string s) {
  std::replace_if(s.begin(), s.end(), [](char ch) { return ch == ',' || ch == '\n' || ch == '\r'; }, ';');
  return s;
}

}  // namespace detail

inline void save_sweep(const SweepResult& s, const std::filesystem::path& dir) {
  {
    auto out = io::open_out(dir / "sweep_summary.csv");
    out << "rho,leak_a,n_ok,median_mse,q25_mse,q75_mse\n";
    for (const auto& c : s.cells) {
      const auto ok = std::count_if(c.mse.begin(), c.mse.end(), [](double v) { return std::isfinite(v); });
      out << io::fmt(c.rho) << ',' << io::fmt(c.leak_a) << ',' << ok << ',' << detail::cell(c.median) << ','
          << detail::cell(c.q25) << ',' << detail::cell(c.q75) << '\n';
    }
  }
  auto out = io::open_out(dir / "sweep_instances.csv");
  out << "rho,leak_a,instance,test_mse,error\n";
  for (const auto& c : s.cells)
    for (std::size_t k = 0; k < c.mse.size(); ++k)
      out << io::fmt(c.rho) << ',' << io::fmt(c.leak_a) << ',' << k << ',' << detail::cell(c.mse[k]) << ','
          << detail::csv_safe(c.errors[k]) << '\n';
  nlohmann::json j = {{"n_instances", s.n_instances}};
  if (s.argmin >= 0) {
    const auto& b = s.cells[static_cast<std::size_t>(s.argmin)];
    j["argmin"] = {{"rho", b.rho}, {"leak_a", b.leak_a}, {"median_mse", b.median}};
  } else {
    j["argmin"] = nullptr;
  }
  auto jo = io::open_out(dir / "sweep.json");
  jo << j.dump(2) << '\n';
}

}  // namespace esncid
