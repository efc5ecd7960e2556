#include "fedsim/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

namespace fs = std::filesystem;

namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

}  // namespace

ExperimentResult run_and_write_outputs(const RunConfig& cfg) {
  fs::path out(cfg.out_dir);
  fs::create_directories(out / "checkpoints");
  write_text(out / "run_config.txt", cfg.serialize());

  FederationConfig fed = cfg.to_federation_config();
  DataSpec data = cfg.to_data_spec();
  RoundHook hook;
  fs::path ckpt_dir = out / "checkpoints";
  hook.on_round = [&ckpt_dir](const GlobalModel& global, const RoundReport&) {
    checkpoint(global, global.round, ckpt_dir);
  };
  ExperimentResult result = run_experiment(fed, data, hook);

  emit_csv(result.reports, out / "rounds.csv");
  std::string summary;
  summary += "rounds = " + std::to_string(cfg.rounds) + "\n";
  summary += "best_round = " + std::to_string(result.best_round) + "\n";
  summary += "best_mean_accuracy = " + fmt6(result.best_mean_accuracy) + "\n";
  write_text(out / "summary.txt", summary);
  return result;
}

int cmd_simulate(const std::string& config_path) {
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    if (cfg.transport == TransportKind::kNet)
      throw ConfigError(
          "simulate supports transport sim|dir; use serve/join for net");
    ExperimentResult result = run_and_write_outputs(cfg);
    std::cout << "completed " << cfg.rounds << " rounds; best round "
              << result.best_round << " with mean local-test accuracy "
              << fmt6(result.best_mean_accuracy) << "\n"
              << "outputs in " << cfg.out_dir << "\n";
    return 0;
  });
}

int cmd_serve(const std::string& config_path) {
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    if (cfg.transport != TransportKind::kNet)
      throw ConfigError("serve requires transport = net");
    std::cout << "serving " << cfg.clients << " clients on "
              << cfg.net_address << "\n";
    ExperimentResult result = run_and_write_outputs(cfg);
    std::cout << "completed " << cfg.rounds << " rounds; best round "
              << result.best_round << " with mean local-test accuracy "
              << fmt6(result.best_mean_accuracy) << "\n"
              << "outputs in " << cfg.out_dir << "\n";
    return 0;
  });
}

int cmd_join(const std::string& config_path, uint32_t client_id) {
  return guarded([&] {
    RunConfig cfg = RunConfig::load(config_path);
    if (cfg.transport != TransportKind::kNet)
      throw ConfigError("join requires transport = net");
    if (client_id < 1 || client_id > cfg.clients)
      throw ConfigError("client_id must be in 1.." +
                        std::to_string(cfg.clients));
    DataSpec data = cfg.to_data_spec();
    Shard shard =
        generate_client_shard(data.clients[client_id - 1], data.split_ratio);
    join_run(cfg.net_address, client_id, shard, cfg.to_federation_config());
    std::cout << "client " << client_id << " finished\n";
    return 0;
  });
}

namespace {

// Read-side invariant checks over an archived run.
void validate_parsed_run(const RunConfig& cfg, const ParsedRun& run) {
  for (const CsvRow& row : run.rows) {
    if (row.accuracy < 0.0 || row.accuracy > 1.0)
      throw IoError("accuracy out of [0,1] in rounds.csv");
    if (row.loss < 0.0) throw IoError("negative loss in rounds.csv");
    if (row.round < 1 || row.round > cfg.rounds)
      throw IoError("row for unexpected round in rounds.csv");
  }

  // Confusion counts must conserve each client's test-set size across rounds
  // and reproduce the reported test accuracy.
  std::map<uint32_t, uint64_t> client_total;
  for (const auto& [round, client, confusion] : run.confusions) {
    uint64_t total = 0;
    for (const auto& row : confusion)
      for (uint64_t v : row) total += v;
    auto [it, inserted] = client_total.emplace(client, total);
    if (!inserted && it->second != total)
      throw IoError("confusion counts for client " + std::to_string(client) +
                    " change between rounds (count conservation violated)");
    double acc = accuracy_from_confusion(confusion);
    for (const CsvRow& row : run.rows)
      if (row.round == round && row.client_id == client && row.split == "test" &&
          std::fabs(row.accuracy - acc) > 1e-6)
        throw IoError("confusion matrix disagrees with test accuracy for "
                      "round " + std::to_string(round) + ", client " +
                      std::to_string(client));
  }

  for (uint32_t r = 1; r <= cfg.rounds; ++r) {
    uint32_t seen = 0;
    bool external = false;
    for (const GlobalRow& row : run.global_rows) {
      if (row.round != r) continue;
      if (row.target == "external") external = true;
      else ++seen;
      if (row.accuracy < 0.0 || row.accuracy > 1.0)
        throw IoError("accuracy out of [0,1] in global.csv");
    }
    if (!external || seen == 0)
      throw IoError("global.csv is missing rows for round " +
                    std::to_string(r));
  }
}

}  // namespace

int cmd_report(const std::string& out_dir) {
  return guarded([&] {
    fs::path out(out_dir);
    // A broken or missing archive is a runtime failure, not a config error.
    RunConfig cfg;
    try {
      cfg = RunConfig::load(out / "run_config.txt");
    } catch (const ConfigError& e) {
      throw IoError(e.what());
    }
    ParsedRun run = parse_run_csvs(out);
    validate_parsed_run(cfg, run);

    std::cout << "round | mean global acc | external acc\n";
    uint32_t best_round = 1;
    double best_mean = -1.0;
    for (uint32_t r = 1; r <= cfg.rounds; ++r) {
      double sum = 0.0, external = 0.0;
      uint32_t n = 0;
      for (const GlobalRow& row : run.global_rows) {
        if (row.round != r) continue;
        if (row.target == "external") external = row.accuracy;
        else {
          sum += row.accuracy;
          ++n;
        }
      }
      double mean = n ? sum / n : 0.0;
      if (mean > best_mean) {
        best_mean = mean;
        best_round = r;
      }
      std::printf("%5u | %15s | %12s\n", r, fmt6(mean).c_str(),
                  fmt6(external).c_str());
    }
    std::cout << "best round: " << best_round << " (mean accuracy "
              << fmt6(best_mean) << ")\n";

    if (cfg.mask == MaskMode::kClassifierOnly) {
      const Architecture& arch = Architecture::fixed();
      uint64_t init_seed = cfg.init == InitPolicy::kCommonSeed
                               ? cfg.seed
                               : independent_init_seed(cfg.seed, 0);
      ParamSet init = init_params(arch, init_seed);
      bool held = true;
      for (uint32_t r = 1; r <= cfg.rounds && held; ++r) {
        GlobalModel g = restore(out / "checkpoints", r, cfg.mask);
        for (const std::string& name : arch.group_names(ParamGroup::kFeature)) {
          const Tensor* a = g.params.find(name);
          const Tensor* b = init.find(name);
          if (!a || !b || !(*a == *b)) {
            held = false;
            break;
          }
        }
      }
      std::cout << "frozen feature entries: " << (held ? "HELD" : "VIOLATED")
                << "\n";
      if (!held) return 1;
    }
    return 0;
  });
}

int run_cli(int argc, char** argv) {
  CLI::App app{"federated learning runtime and simulator for quality-inspection classification"};
  app.require_subcommand(1);

  std::string sim_config, serve_config, join_config, report_dir;
  uint32_t join_client_id = 0;

  CLI::App* sim = app.add_subcommand(
      "simulate", "run a full experiment in one process (transport sim or dir)");
  sim->add_option("config", sim_config, "run config file")->required();

  CLI::App* serve = app.add_subcommand(
      "serve", "run the aggregation server of a networked experiment");
  serve->add_option("config", serve_config, "run config file")->required();

  CLI::App* join = app.add_subcommand(
      "join", "join a networked experiment as one client");
  join->add_option("config", join_config, "run config file")->required();
  join->add_option("client_id", join_client_id, "client id (1..clients)")
      ->required();

  CLI::App* report = app.add_subcommand(
      "report", "summarize and validate an archived run directory");
  report->add_option("out_dir", report_dir, "run output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (sim->parsed()) return cmd_simulate(sim_config);
  if (serve->parsed()) return cmd_serve(serve_config);
  if (join->parsed()) return cmd_join(join_config, join_client_id);
  if (report->parsed()) return cmd_report(report_dir);
  return 2;
}

}  // namespace fedsim
