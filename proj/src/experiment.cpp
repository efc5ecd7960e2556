#include "fedsim/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedsim/codec.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

namespace {

constexpr uint64_t kExternalSeedDomain = 0xE87E12A1ULL;
constexpr uint64_t kSelectionSeedDomain = 0x5E1EC7ULL;

ParamSet overlay(const ParamSet& base, const ParamSet& update) {
  ParamSet out = base;
  for (const auto& e : update.entries) {
    Tensor* dst = out.find(e.name);
    if (!dst || !dst->same_shape(e.tensor))
      throw ArchMismatchError("update entry does not fit model: " + e.name);
    *dst = e.tensor;
  }
  return out;
}

double mean_accuracy(const std::vector<double>& accs) {
  if (accs.empty()) return 0.0;
  return std::accumulate(accs.begin(), accs.end(), 0.0) /
         static_cast<double>(accs.size());
}

}  // namespace

void DataSpec::validate() const {
  if (clients.empty()) throw ConfigError("data spec needs >= 1 client");
  for (size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].client_id != i + 1)
      throw ConfigError("client specs must carry ids 1..K in order");
    for (size_t j = 0; j < i; ++j)
      if (clients[j].defect_signature_id == clients[i].defect_signature_id)
        throw ConfigError("defect signatures must be pairwise distinct");
  }
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw ConfigError("split_ratio must be in (0,1)");
}

DataSpec default_data_spec(uint32_t n_clients, uint64_t seed,
                           double split_ratio) {
  DataSpec data;
  data.clients = default_client_specs(n_clients, seed);
  data.split_ratio = split_ratio;
  data.external_seed = mix64(seed ^ kExternalSeedDomain);
  return data;
}

std::vector<Shard> build_shards(const DataSpec& data) {
  data.validate();
  std::vector<Shard> shards;
  shards.reserve(data.clients.size());
  for (const auto& spec : data.clients)
    shards.push_back(generate_client_shard(spec, data.split_ratio));
  return shards;
}

std::vector<uint32_t> round_participants(const FederationConfig& cfg,
                                         uint32_t round) {
  std::vector<uint32_t> ids(cfg.clients);
  std::iota(ids.begin(), ids.end(), 1u);
  uint32_t take = static_cast<uint32_t>(
      std::ceil(cfg.client_fraction * static_cast<double>(cfg.clients)));
  take = std::max(1u, std::min(take, cfg.clients));
  if (take == cfg.clients) return ids;
  SplitMix64 rng(mix64(cfg.seed ^ (kSelectionSeedDomain + round)));
  rng.shuffle(ids);
  ids.resize(take);
  std::sort(ids.begin(), ids.end());
  return ids;
}

RoundReport run_round(GlobalModel& global, const std::vector<Shard>& shards,
                      const Dataset& external, const FederationConfig& cfg,
                      ServerTransport& transport, uint32_t round) {
  auto started = std::chrono::steady_clock::now();
  if (global.round + 1 != round)
    throw ProtocolError("run_round out of sequence");

  std::vector<uint32_t> participants = round_participants(cfg, round);
  std::vector<uint8_t> blob = encode_params(global.params, cfg.wire_dtype);
  transport.publish_global(global.round, blob, participants);
  std::vector<ClientUpdate> updates =
      transport.collect_updates(round, participants, cfg.round_timeout_s);

  // Everything the clients actually saw went through the wire encoding, so
  // client models are reconstructed against the decoded broadcast.
  ParamSet broadcast = decode_params(blob);

  RoundReport report;
  report.round = round;
  for (const ClientUpdate& u : updates) {
    const Shard& shard = shards[u.client_id - 1];
    ParamSet base = client_round_base(broadcast, cfg, u.client_id, round);
    ParamSet client_model = overlay(base, u.params);
    EvalMetrics train = evaluate(client_model, shard.train);
    EvalMetrics test = evaluate(client_model, shard.test);
    ClientRoundStats stats;
    stats.client_id = u.client_id;
    stats.train_loss = train.mean_loss;
    stats.train_accuracy = train.accuracy;
    stats.test_loss = test.mean_loss;
    stats.test_accuracy = test.accuracy;
    stats.test_confusion = test.confusion;
    report.clients.push_back(stats);
  }

  ParamSet aggregated = aggregate(updates, cfg.aggregation);
  apply_aggregate(global, aggregated, round);

  if (cfg.eval_each_round) {
    for (const Shard& shard : shards)
      report.global_client_accuracy.push_back(
          evaluate(global.params, shard.test).accuracy);
    report.global_external_accuracy =
        evaluate(global.params, external).accuracy;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

ExperimentResult run_experiment_core(const FederationConfig& cfg,
                                     const std::vector<Shard>& shards,
                                     const Dataset& external,
                                     ServerTransport& transport,
                                     const RoundHook& hook) {
  cfg.validate();
  if (shards.size() != cfg.clients)
    throw ConfigError("shard count does not match cfg.clients");

  ExperimentResult result;
  result.global = make_initial_global(cfg);
  for (uint32_t round = 1; round <= cfg.rounds; ++round) {
    RoundReport report =
        run_round(result.global, shards, external, cfg, transport, round);
    if (hook.on_round) hook.on_round(result.global, report);
    result.reports.push_back(std::move(report));
  }
  transport.publish_global(cfg.rounds,
                           encode_params(result.global.params, cfg.wire_dtype),
                           {});
  transport.finish();

  result.best_round = cfg.rounds;
  result.best_mean_accuracy = 0.0;
  if (cfg.eval_each_round) {
    for (const RoundReport& report : result.reports) {
      double mean = mean_accuracy(report.global_client_accuracy);
      if (report.round == 1 || mean > result.best_mean_accuracy) {
        result.best_mean_accuracy = mean;
        result.best_round = report.round;
      }
    }
  }
  return result;
}

ExperimentResult run_experiment(const FederationConfig& cfg,
                                const DataSpec& data, const RoundHook& hook) {
  cfg.validate();
  if (data.clients.size() != cfg.clients)
    throw ConfigError("data spec has " + std::to_string(data.clients.size()) +
                      " clients, config expects " +
                      std::to_string(cfg.clients));
  std::vector<Shard> shards = build_shards(data);
  Dataset external = generate_external_testset(data.external_seed);

  switch (cfg.transport.kind) {
    case TransportKind::kSim: {
      SimTransport transport(&shards, &cfg);
      return run_experiment_core(cfg, shards, external, transport, hook);
    }
    case TransportKind::kDir: {
      std::vector<uint64_t> sizes;
      for (const Shard& s : shards) sizes.push_back(s.train.size());
      DirTransport transport(cfg.transport.dir_path, &cfg, sizes);

      std::vector<std::thread> workers;
      std::vector<std::exception_ptr> worker_errors(shards.size());
      for (uint32_t id = 1; id <= cfg.clients; ++id)
        workers.emplace_back([&, id] {
          try {
            dir_client_loop(cfg.transport.dir_path, shards[id - 1], cfg, id);
          } catch (...) {
            worker_errors[id - 1] = std::current_exception();
          }
        });

      ExperimentResult result;
      std::exception_ptr server_error;
      try {
        result = run_experiment_core(cfg, shards, external, transport, hook);
      } catch (...) {
        server_error = std::current_exception();
      }
      for (auto& w : workers) w.join();
      if (server_error) std::rethrow_exception(server_error);
      for (auto& err : worker_errors)
        if (err) std::rethrow_exception(err);
      return result;
    }
    case TransportKind::kNet: {
      NetServerTransport transport(cfg.transport.net_address, &cfg,
                                   cfg.round_timeout_s);
      return run_experiment_core(cfg, shards, external, transport, hook);
    }
  }
  throw ConfigError("unknown transport");
}

}  // namespace fedsim
