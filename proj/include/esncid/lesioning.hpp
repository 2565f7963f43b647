#pragma once

// Energy functional, lesion-keyed evaluation cache, perturbation log, and the
// value functions consumed by the Shapley engine.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "esncid/io.hpp"
#include "esncid/lesion_mask.hpp"
#include "esncid/reservoir.hpp"
#include "esncid/ser_model.hpp"
#include "esncid/time_series.hpp"

namespace esncid {

// (sum_t |x(t)|^p * dt)^(1/p)
inline double l2_energy(const std::vector<double>& values, double p = 2.0, double dt = 1.0) {
  if (values.empty()) throw std::invalid_argument("l2_energy: empty series");
  if (!(p >= 1.0)) throw std::invalid_argument("l2_energy: norm order must be >= 1");
  double acc = 0.0;
  if (p == 2.0) {
    for (double v : values) acc += v * v;
    return std::sqrt(acc * dt);
  }
  for (double v : values) acc += std::pow(std::abs(v), p);
  return std::pow(acc * dt, 1.0 / p);
}

inline double l2_energy(const TimeSeries& s, double p = 2.0) { return l2_energy(s.values, p, s.dt); }

// Result of one lesioned rollout (or one averaged SER ensemble).
struct Evaluation {
  double behavior = std::numeric_limits<double>::quiet_NaN();  // NaN when the model has no output
  std::vector<double> nodes;
};

struct EvaluationRecord {
  std::uint64_t eval_id = 0;
  LesionMask mask;
  double behavior_energy = 0.0;
  std::vector<double> node_energies;
};

// Thread-safe LRU map from lesion mask to evaluation, split into shards.
class EvaluationCache {
 public:
  using Value = std::shared_ptr<const Evaluation>;

  explicit EvaluationCache(std::size_t budget = std::size_t{1} << 20) : budget_(std::max<std::size_t>(budget, 1)) {
    for (auto& s : shards_) s.budget = std::max<std::size_t>(1, budget_ / kShards);
  }

  std::optional<Value> find(const LesionMask& m) {
    Shard& s = shard(m);
    std::lock_guard lock(s.mutex);
    auto it = s.index.find(m);
    if (it == s.index.end()) return std::nullopt;
    s.order.splice(s.order.begin(), s.order, it->second);
    return it->second->second;
  }

  // Inserts unless present; returns the cached value and whether it was new.
  std::pair<Value, bool> insert(const LesionMask& m, Value v) {
    Shard& s = shard(m);
    std::lock_guard lock(s.mutex);
    if (auto it = s.index.find(m); it != s.index.end()) {
      s.order.splice(s.order.begin(), s.order, it->second);
      return {it->second->second, false};
    }
    s.order.emplace_front(m, std::move(v));
    s.index.emplace(m, s.order.begin());
    if (s.index.size() > s.budget) {
      s.index.erase(s.order.back().first);
      s.order.pop_back();
      ++s.evictions;
    }
    return {s.order.front().second, true};
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (auto& s : shards_) {
      std::lock_guard lock(s.mutex);
      n += s.index.size();
    }
    return n;
  }

  std::size_t evictions() const {
    std::size_t n = 0;
    for (auto& s : shards_) {
      std::lock_guard lock(s.mutex);
      n += s.evictions;
    }
    return n;
  }

  std::size_t budget() const { return budget_; }

 private:
  static constexpr std::size_t kShards = 16;
  struct Shard {
    mutable std::mutex mutex;
    std::list<std::pair<LesionMask, Value>> order;
    std::unordered_map<LesionMask, std::list<std::pair<LesionMask, Value>>::iterator> index;
    std::size_t budget = 1;
    std::size_t evictions = 0;
  };
  Shard& shard(const LesionMask& m) { return shards_[std::hash<LesionMask>{}(m) % kShards]; }

  std::size_t budget_;
  std::array<Shard, kShards> shards_;
};

// Append-only record stream. Lines go to the sink as they arrive; canonical()
// orders by mask so the final artifact does not depend on scheduling.
class PerturbationLog {
 public:
  PerturbationLog() = default;
  explicit PerturbationLog(const std::filesystem::path& sink) { attach(sink); }

  void attach(const std::filesystem::path& sink) {
    std::lock_guard lock(mutex_);
    sink_path_ = sink;
    sink_ = std::make_unique<std::ofstream>(io::open_out(sink));
  }

  std::uint64_t append(const LesionMask& mask, const Evaluation& e) {
    std::lock_guard lock(mutex_);
    EvaluationRecord rec{next_id_++, mask, e.behavior, e.nodes};
    if (sink_) {
      write_line(*sink_, rec);
      if (rec.eval_id % 4096 == 0) sink_->flush();
    }
    records_.push_back(std::move(rec));
    return records_.back().eval_id;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
  }

  // Records sorted by mask bits (one per mask), ids renumbered from 0.
  std::vector<EvaluationRecord> canonical() const {
    std::vector<EvaluationRecord> out;
    {
      std::lock_guard lock(mutex_);
      out = records_;
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.mask.bits() < b.mask.bits(); });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const auto& a, const auto& b) { return a.mask.bits() == b.mask.bits(); }),
              out.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i].eval_id = i;
    return out;
  }

  static void write_header(std::ostream& out, int n_nodes) {
    out << "eval_id,mask_bits_hex,behavior_energy";
    for (int i = 0; i < n_nodes; ++i) out << ",node_energy_" << i;
    out << '\n';
  }

  static void write_line(std::ostream& out, const EvaluationRecord& r) {
    out << r.eval_id << ',' << r.mask.hex() << ',';
    if (std::isnan(r.behavior_energy))
      out << "NA";
    else
      out << io::fmt(r.behavior_energy);
    for (double v : r.node_energies) out << ',' << io::fmt(v);
    out << '\n';
  }

  static void save(const std::vector<EvaluationRecord>& records, int n_nodes, const std::filesystem::path& path) {
    auto out = io::open_out(path);
    write_header(out, n_nodes);
    for (const auto& r : records) write_line(out, r);
  }

  // Closes the incremental sink and rewrites it in canonical order.
  void finalize(int n_nodes) {
    std::filesystem::path path;
    {
      std::lock_guard lock(mutex_);
      if (!sink_) return;
      sink_->close();
      sink_.reset();
      path = sink_path_;
    }
    save(canonical(), n_nodes, path);
  }

 private:
  mutable std::mutex mutex_;
  std::vector<EvaluationRecord> records_;
  std::uint64_t next_id_ = 0;
  std::unique_ptr<std::ofstream> sink_;
  std::filesystem::path sink_path_;
};

struct EvaluatorStats {
  std::uint64_t requests = 0;  // value lookups before the cache
  std::uint64_t hits = 0;
  std::uint64_t rollouts = 0;  // cache misses that ran the model
};

// Memoised, logged lesion evaluation. `compute` must be a pure function of
// the mask and safe to call concurrently.
class LesionEvaluator {
 public:
  using Compute = std::function<Evaluation(const LesionMask&)>;

  LesionEvaluator(int n_nodes, Compute compute, std::size_t cache_budget = std::size_t{1} << 20)
      : n_nodes_(n_nodes), compute_(std::move(compute)), cache_(cache_budget) {}

  int n_nodes() const { return n_nodes_; }

  std::shared_ptr<const Evaluation> evaluate(const LesionMask& mask) {
    if (mask.n_nodes() != n_nodes_) throw std::invalid_argument("LesionEvaluator: mask size mismatch");
    requests_.fetch_add(1, std::memory_order_relaxed);
    if (auto hit = cache_.find(mask)) {
      hits_.fetch_add(1, std::memory_order_relaxed);
      return *hit;
    }
    rollouts_.fetch_add(1, std::memory_order_relaxed);
    auto value = std::make_shared<const Evaluation>(compute_(mask));
    auto [stored, inserted] = cache_.insert(mask, value);
    if (inserted && log_) log_->append(mask, *stored);
    return stored;
  }

  double behavior_value(const LesionMask& mask) { return evaluate(mask)->behavior; }
  const std::vector<double>& node_energy_value(const LesionMask& mask, std::shared_ptr<const Evaluation>& keep) {
    keep = evaluate(mask);
    return keep->nodes;
  }
  std::vector<double> node_energy_value(const LesionMask& mask) { return evaluate(mask)->nodes; }

  void set_log(PerturbationLog* log) { log_ = log; }

  EvaluatorStats stats() const {
    return {requests_.load(), hits_.load(), rollouts_.load()};
  }
  void reset_stats() {
    requests_ = 0;
    hits_ = 0;
    rollouts_ = 0;
  }
  const EvaluationCache& cache() const { return cache_; }

 private:
  int n_nodes_;
  Compute compute_;
  EvaluationCache cache_;
  PerturbationLog* log_ = nullptr;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> rollouts_{0};
};

// ESN: one closed-loop rollout over the test horizon per mask.
inline Evaluation esn_evaluation(const EsnModel& m, const LesionMask& mask, std::size_t horizon, double u_clamp) {
  auto e = free_run_energies(m, mask, horizon, u_clamp);
  return {e.output, std::move(e.nodes)};
}

inline std::unique_ptr<LesionEvaluator> make_esn_evaluator(std::shared_ptr<const EsnModel> model, std::size_t horizon = 500,
                                          double u_clamp = 1e6, std::size_t cache_budget = std::size_t{1} << 20) {
  const int n = model->n_nodes();
  return std::make_unique<LesionEvaluator>(
      n, [model, horizon, u_clamp](const LesionMask& mask) { return esn_evaluation(*model, mask, horizon, u_clamp); },
      cache_budget);
}

// SER: per-node energy of the smoothed excitation train, averaged over the
// ensemble's runs. Run r always uses substreams (seed, r), whatever the mask.
inline Evaluation ser_evaluation(const SerEnsemble& ens, const SerGraph& graph, const LesionMask& mask) {
  const int n = graph.n_nodes;
  const auto& p = ens.params;
  const auto kernel = gaussian_kernel(p.sigma_smooth);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto len = static_cast<std::ptrdiff_t>(p.n_steps);
  Evaluation out;
  out.nodes.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<double> smooth(p.n_steps);
  for (int r = 0; r < ens.runs; ++r) {
    const SerStream stream(p.seed, static_cast<std::uint64_t>(r));
    const auto trains = ser_run(graph, p, random_init(n, stream), mask, stream);
    for (int i = 0; i < n; ++i) {
      if (mask.contains(i)) continue;
      std::fill(smooth.begin(), smooth.end(), 0.0);
      bool any = false;
      for (std::ptrdiff_t s = 0; s < len; ++s) {
        if (!trains.at(i, static_cast<std::size_t>(s))) continue;
        any = true;
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, s - radius);
        const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(len - 1, s + radius);
        for (std::ptrdiff_t t = lo; t <= hi; ++t)
          smooth[static_cast<std::size_t>(t)] += kernel[static_cast<std::size_t>(t - s + radius)];
      }
      if (any) out.nodes[static_cast<std::size_t>(i)] += l2_energy(smooth);
    }
  }
  for (double& v : out.nodes) v /= static_cast<double>(ens.runs);
  return out;
}

inline std::unique_ptr<LesionEvaluator> make_ser_evaluator(std::shared_ptr<const SerEnsemble> ens,
                                          std::size_t cache_budget = std::size_t{1} << 20) {
  if (ens->runs < 1) throw std::invalid_argument("SerEnsemble: need at least one run per evaluation");
  validate(ens->params);
  auto graph = std::make_shared<const SerGraph>(ens->connectome);
  return std::make_unique<LesionEvaluator>(
      ens->connectome.n_nodes,
      [ens, graph](const LesionMask& mask) { return ser_evaluation(*ens, *graph, mask); }, cache_budget);
}

}  // namespace esncid
