// Command-line driver: one subcommand per pipeline stage, plus sweep and
// run-all. Errors are reported as a JSON object on stderr with exit code 1.

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "esncid/pipeline.hpp"

namespace {

using esncid::ExperimentConfig;

struct Overrides {
  std::string config_path;
  std::string scale;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  std::string out;
  bool allow_large_cid = false;
};

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw std::runtime_error("cannot open config '" + o.config_path + "'");
    auto j = nlohmann::json::parse(in);
    if (!o.scale.empty()) j["scale"] = o.scale;
    if (o.seed_set) j["seed"] = o.seed;
    c = esncid::config_from_json(j);
  } else {
    if (!o.seed_set) throw std::invalid_argument("a seed is required: pass --seed or a --config with 'seed'");
    c = esncid::preset(o.scale.empty() ? "desk" : o.scale);
    c.seed = o.seed;
  }
  if (o.workers > 0) c.workers = o.workers;
  if (!o.out.empty()) c.out = o.out;
  if (o.allow_large_cid) c.allow_large_cid = true;
  esncid::validate(c);
  return c;
}

void print_cid_estimate(const ExperimentConfig& c, bool esn, bool ser) {
  nlohmann::json j = {{"cid_rollout_upper_bound", nlohmann::json::object()}, {"gate", c.cid_rollout_gate}};
  if (esn) j["cid_rollout_upper_bound"]["esn_per_model"] = esncid::stages::cid_rollouts(c.n, c.cid_permutations);
  if (ser) j["cid_rollout_upper_bound"]["ser"] = esncid::stages::cid_rollouts(c.n, c.ser_cid_permutations);
  std::cerr << j.dump() << '\n';
}

void report(const esncid::StageResult& r) {
  std::cout << nlohmann::json{{"stage", r.name}, {"seconds", r.seconds}, {"info", r.info}}.dump() << std::endl;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  for (const auto& tok : esncid::io::split(s, ',')) out.push_back(esncid::io::parse_double(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reservoir lesioning and Shapley influence toolkit"};
  app.set_version_flag("--version", std::string(esncid::kVersion));
  app.require_subcommand(1);

  Overrides o;
  const auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON configuration file");
    sub->add_option("--scale", o.scale, "Preset: smoke, desk or paper")->check(CLI::IsMember({"smoke", "desk", "paper"}));
    sub->add_option_function<std::uint64_t>(
        "--seed", [&o](const std::uint64_t& v) { o.seed = v, o.seed_set = true; }, "Master seed");
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--out", o.out, "Run directory");
    sub->add_flag("--allow-large-cid", o.allow_large_cid, "Run CID beyond the rollout gate");
  };

  std::vector<CLI::App*> stage_cmds;
  for (const auto& [name, fn] : esncid::stage_table()) {
    auto* sub = app.add_subcommand(name, "Run the '" + name + "' stage on the run directory");
    add_common(sub);
    stage_cmds.push_back(sub);
  }
  auto* run_all = app.add_subcommand("run-all", "Run every stage and write manifest.json");
  add_common(run_all);

  std::string rho_grid = "0.66", a_grid = "0.1,0.001";
  std::size_t instances = 50;
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid search over spectral radius and leak rate");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--rho", rho_grid, "Comma-separated spectral radii");
  sweep_cmd->add_option("--leak", a_grid, "Comma-separated leak rates");
  sweep_cmd->add_option("--instances", instances, "Independent networks per cell")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig c = resolve(o);
    std::filesystem::create_directories(c.out);
    if (run_all->parsed()) {
      print_cid_estimate(c, true, true);
      const auto m = esncid::run_pipeline(c, report);
      std::cout << nlohmann::json{{"complete", m.complete}, {"manifest", (c.out / "manifest.json").string()}}.dump()
                << std::endl;
    } else if (sweep_cmd->parsed()) {
      const auto r = esncid::sweep(c, parse_grid(rho_grid), parse_grid(a_grid), instances);
      esncid::save_sweep(r, c.out);
      std::ifstream in(c.out / "sweep.json");
      std::cout << nlohmann::json::parse(in).dump() << std::endl;
    } else {
      for (auto* sub : stage_cmds)
        if (sub->parsed()) {
          if (sub->get_name() == "cid") print_cid_estimate(c, true, false);
          if (sub->get_name() == "ser-cid") print_cid_estimate(c, false, true);
          report(esncid::run_stage(sub->get_name(), c));
        }
    }
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"version", esncid::kVersion}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
