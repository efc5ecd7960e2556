#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/architecture.hpp"
#include "fedsim/codec.hpp"
#include "fedsim/image.hpp"

namespace fedsim {

enum class MaskMode { kAll, kClassifierOnly };
enum class Aggregation { kPlainMean, kSampleWeighted };
enum class Algorithm { kFedSgd, kFedAvg };
enum class InitPolicy { kCommonSeed, kIndependent };
enum class TransportKind { kSim, kDir, kNet };

// The subset of named parameter entries exchanged and aggregated per round.
struct FederationMask {
  MaskMode mode = MaskMode::kAll;
  std::vector<std::string> names;  // canonical architecture order

  static FederationMask make(MaskMode mode, const Architecture& arch);

  bool selects(std::string_view name) const;
  ParamSet apply(const ParamSet& full) const;  // masked subset
};

struct TransportSpec {
  TransportKind kind = TransportKind::kSim;
  std::string dir_path;     // kDir
  std::string net_address;  // kNet, "host:port"
};

struct FederationConfig {
  uint32_t clients = 3;       // K
  uint32_t rounds = 10;       // R
  uint32_t local_epochs = 1;  // E
  uint32_t batch_size = 32;   // B; ignored under FEDSGD (full local batch)
  double lr = 0.05;
  double client_fraction = 1.0;  // C in (0, 1]
  Aggregation aggregation = Aggregation::kSampleWeighted;
  MaskMode mask = MaskMode::kAll;
  InitPolicy init = InitPolicy::kCommonSeed;
  Algorithm algorithm = Algorithm::kFedAvg;
  TransportSpec transport;
  double round_timeout_s = 30.0;
  bool eval_each_round = true;
  uint64_t seed = 42;
  WireDtype wire_dtype = WireDtype::kF32;

  void validate() const;  // throws ConfigError
};

// The FedAvg input: masked parameters plus the local sample count.
struct ClientUpdate {
  uint32_t client_id = 0;
  uint32_t round = 0;  // >= 1
  ParamSet params;     // exactly the masked entries, canonical order
  uint64_t n_k = 0;    // >= 1
  uint32_t local_epochs_run = 0;
};

struct GlobalModel {
  uint32_t round = 0;  // rounds completed; 0 = initial
  ParamSet params;     // full, unmasked
  ParamSet frozen;     // non-federated entries snapshot at round 0
};

// Elementwise mean (PLAIN_MEAN) or sample-weighted mean (SAMPLE_WEIGHTED,
// sum of (n_k/n) * w_k). Accumulation runs in ascending client_id order, so
// the result is bit-deterministic under any input permutation.
ParamSet aggregate(std::span<const ClientUpdate> updates, Aggregation mode);

// E epochs of minibatch SGD from init_params, shuffled by the per-(client,
// round) seed. Feature-group gradients are discarded under CLASSIFIER_ONLY.
// Returns the masked update with n_k = client_data size.
ClientUpdate local_train(std::span<const LabeledImage> client_data,
                         const ParamSet& init_params,
                         const FederationConfig& cfg, uint32_t client_id,
                         uint32_t round);

// Initial global model per cfg.init (and its frozen non-federated snapshot).
GlobalModel make_initial_global(const FederationConfig& cfg);

// Initial full parameters a client uses in round `round` given the decoded
// broadcast: its own seed-derived weights in round 1 under INDEPENDENT,
// otherwise the broadcast itself.
ParamSet client_round_base(const ParamSet& broadcast,
                           const FederationConfig& cfg, uint32_t client_id,
                           uint32_t round);

// Writes aggregated entries into global.params (non-federated entries stay
// untouched) and advances the round counter.
void apply_aggregate(GlobalModel& global, const ParamSet& aggregated,
                     uint32_t round);

// True when every non-federated entry of params is bit-identical to frozen.
bool frozen_entries_intact(const GlobalModel& global);

}  // namespace fedsim
