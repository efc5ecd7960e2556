#pragma once

#include <functional>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

struct DataSpec {
  std::vector<ClientDataSpec> clients;
  double split_ratio = 0.8;
  uint64_t external_seed = 0;

  void validate() const;
};

DataSpec default_data_spec(uint32_t n_clients, uint64_t seed,
                           double split_ratio);

struct RoundHook {
  std::function<void(const GlobalModel&, const RoundReport&)> on_round;
};

struct ExperimentResult {
  std::vector<RoundReport> reports;
  uint32_t best_round = 0;          // argmax of mean global-on-client accuracy
  double best_mean_accuracy = 0.0;  // earliest round wins ties
  GlobalModel global;               // final state
};

std::vector<Shard> build_shards(const DataSpec& data);

// The clients participating in a round: all K when client_fraction is 1,
// otherwise the first ceil(C*K) of a seeded shuffle, returned ascending.
std::vector<uint32_t> round_participants(const FederationConfig& cfg,
                                         uint32_t round);

// One communication round: broadcast, collect ceil(C*K) updates, aggregate,
// write federated entries back, evaluate. Leaves `global` untouched and
// rethrows on a round timeout.
RoundReport run_round(GlobalModel& global, const std::vector<Shard>& shards,
                      const Dataset& external, const FederationConfig& cfg,
                      ServerTransport& transport, uint32_t round);

// Full run over cfg.rounds rounds with a caller-provided transport (the
// injected transport must match cfg; used by tests that need a pre-bound
// port).
ExperimentResult run_experiment_core(const FederationConfig& cfg,
                                     const std::vector<Shard>& shards,
                                     const Dataset& external,
                                     ServerTransport& transport,
                                     const RoundHook& hook = {});

// Builds shards, the external hold-out and the transport from cfg.transport
// (SIM inline, DIR with in-process client threads, NET waiting for external
// joins), then runs the experiment.
ExperimentResult run_experiment(const FederationConfig& cfg,
                                const DataSpec& data,
                                const RoundHook& hook = {});

}  // namespace fedsim
