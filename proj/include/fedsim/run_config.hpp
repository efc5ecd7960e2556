#pragma once

#include <filesystem>
#include <string>

#include "fedsim/experiment.hpp"
#include "fedsim/federation.hpp"

namespace fedsim {

// Flat `key = value` run configuration. '#' starts a comment; blank lines are
// ignored; unknown or duplicate keys are config errors. Defaults:
//   clients = 3            rounds = 10           local_epochs = 1
//   batch_size = 32        lr = 0.05             algorithm = fedavg
//   aggregation = weighted mask = all            init = common
//   seed = 42              client_fraction = 1.0 transport = sim
//   dir_path =             net_address = 127.0.0.1:7177
//   round_timeout_s = 30   split_ratio = 0.8     out_dir = out
// `algorithm = fedsgd` forces local_epochs = 1 (full local batch).
struct RunConfig {
  uint32_t clients = 3;
  uint32_t rounds = 10;
  uint32_t local_epochs = 1;
  uint32_t batch_size = 32;
  double lr = 0.05;
  Algorithm algorithm = Algorithm::kFedAvg;
  Aggregation aggregation = Aggregation::kSampleWeighted;
  MaskMode mask = MaskMode::kAll;
  InitPolicy init = InitPolicy::kCommonSeed;
  uint64_t seed = 42;
  double client_fraction = 1.0;
  TransportKind transport = TransportKind::kSim;
  std::string dir_path;
  std::string net_address = "127.0.0.1:7177";
  double round_timeout_s = 30.0;
  double split_ratio = 0.8;
  std::string out_dir = "out";

  static RunConfig load(const std::filesystem::path& file);
  static RunConfig parse(const std::string& text);

  void validate() const;  // throws ConfigError

  FederationConfig to_federation_config() const;
  DataSpec to_data_spec() const;

  // Canonical key order, suitable for re-parsing; written to the run's
  // out_dir as run_config.txt.
  std::string serialize() const;
};

}  // namespace fedsim
