#include "fedsim/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/network.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

FederationMask FederationMask::make(MaskMode mode, const Architecture& arch) {
  FederationMask mask;
  mask.mode = mode;
  if (mode == MaskMode::kAll) {
    for (const auto& spec : arch.entries()) mask.names.push_back(spec.name);
  } else {
    mask.names = arch.group_names(ParamGroup::kClassifier);
  }
  return mask;
}

bool FederationMask::selects(std::string_view name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

ParamSet FederationMask::apply(const ParamSet& full) const {
  ParamSet out;
  out.architecture_id = full.architecture_id;
  for (const auto& e : full.entries)
    if (selects(e.name)) out.entries.push_back(e);
  if (out.entries.size() != names.size())
    throw ArchMismatchError("ParamSet is missing federated entries");
  return out;
}

void FederationConfig::validate() const {
  if (clients < 1) throw ConfigError("clients must be >= 1");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0))
    throw ConfigError("client_fraction must be in (0,1]");
  if (algorithm == Algorithm::kFedSgd && local_epochs != 1)
    throw ConfigError("fedsgd requires local_epochs = 1");
  if (!(round_timeout_s > 0.0)) throw ConfigError("round_timeout_s must be > 0");
  if (client_fraction < 1.0 && transport.kind == TransportKind::kDir)
    throw ConfigError(
        "client_fraction < 1 is not possible with the dir transport "
        "(the directory barrier waits for all clients)");
}

ParamSet aggregate(std::span<const ClientUpdate> updates, Aggregation mode) {
  if (updates.empty()) throw ProtocolError("aggregate needs >= 1 update");

  std::vector<size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  const ClientUpdate& first = updates[order[0]];
  for (size_t i = 1; i < order.size(); ++i) {
    const ClientUpdate& u = updates[order[i]];
    if (u.client_id == updates[order[i - 1]].client_id)
      throw ProtocolError("duplicate client_id in aggregation");
    if (u.round != first.round)
      throw ProtocolError("mixed rounds in aggregation");
    if (u.params.architecture_id != first.params.architecture_id ||
        u.params.entries.size() != first.params.entries.size())
      throw ProtocolError("mixed architectures in aggregation");
    for (size_t e = 0; e < u.params.entries.size(); ++e)
      if (u.params.entries[e].name != first.params.entries[e].name ||
          !u.params.entries[e].tensor.same_shape(
              first.params.entries[e].tensor))
        throw ProtocolError("mixed masks in aggregation");
    if (u.n_k < 1) throw ProtocolError("update with n_k < 1");
  }

  // Bit-identical updates average to themselves exactly; the float loop
  // below would not ((x+x+x)/3 != x in general).
  bool all_equal = true;
  for (size_t i = 1; i < order.size() && all_equal; ++i)
    all_equal = updates[order[i]].params == first.params;
  if (all_equal) return first.params;

  ParamSet out = first.params;
  for (auto& e : out.entries)
    std::fill(e.tensor.data.begin(), e.tensor.data.end(), 0.0);

  if (mode == Aggregation::kSampleWeighted) {
    uint64_t n = 0;
    for (const auto& u : updates) n += u.n_k;
    double coeff_sum = 0.0;
    for (size_t idx : order)
      coeff_sum += static_cast<double>(updates[idx].n_k) / static_cast<double>(n);
    if (std::fabs(coeff_sum - 1.0) >= 1e-12)
      throw ProtocolError("sample weights do not sum to 1");
    for (size_t idx : order) {
      const ClientUpdate& u = updates[idx];
      double c = static_cast<double>(u.n_k) / static_cast<double>(n);
      for (size_t e = 0; e < out.entries.size(); ++e) {
        const auto& src = u.params.entries[e].tensor.data;
        auto& dst = out.entries[e].tensor.data;
        for (size_t k = 0; k < dst.size(); ++k) dst[k] += c * src[k];
      }
    }
  } else {
    for (size_t idx : order) {
      const ClientUpdate& u = updates[idx];
      for (size_t e = 0; e < out.entries.size(); ++e) {
        const auto& src = u.params.entries[e].tensor.data;
        auto& dst = out.entries[e].tensor.data;
        for (size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    double inv = 1.0 / static_cast<double>(updates.size());
    for (auto& e : out.entries)
      for (double& v : e.tensor.data) v *= inv;
  }
  return out;
}

ClientUpdate local_train(std::span<const LabeledImage> client_data,
                         const ParamSet& init_params,
                         const FederationConfig& cfg, uint32_t client_id,
                         uint32_t round) {
  if (client_data.empty())
    throw EmptyInputError("local_train needs non-empty client data");
  Architecture::fixed().require_full(init_params);

  const size_t n = client_data.size();
  const size_t batch =
      cfg.algorithm == Algorithm::kFedSgd
          ? n
          : std::min<size_t>(cfg.batch_size, n);
  FederationMask mask = FederationMask::make(cfg.mask, Architecture::fixed());

  ParamSet working = init_params;
  SplitMix64 rng(round_shuffle_seed(cfg.seed, client_id, round));

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<LabeledImage> scratch;
  scratch.reserve(batch);

  for (uint32_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    // A full-size batch is order-insensitive; skipping the shuffle keeps the
    // FedSGD step bit-identical to one sgd_apply of the full-batch gradient.
    if (batch < n) rng.shuffle(order);
    for (size_t off = 0; off < n; off += batch) {
      size_t take = std::min(batch, n - off);
      scratch.clear();
      for (size_t i = 0; i < take; ++i)
        scratch.push_back(client_data[order[off + i]]);
      LossGrad lg = loss_and_grad(working, make_batch(scratch));
      for (size_t e = 0; e < working.entries.size(); ++e) {
        if (!mask.selects(working.entries[e].name)) continue;
        auto& dst = working.entries[e].tensor.data;
        const auto& src = lg.grads.entries[e].tensor.data;
        for (size_t k = 0; k < dst.size(); ++k) dst[k] -= cfg.lr * src[k];
      }
    }
  }

  ClientUpdate update;
  update.client_id = client_id;
  update.round = round;
  update.params = mask.apply(working);
  update.n_k = n;
  update.local_epochs_run = cfg.local_epochs;
  return update;
}

GlobalModel make_initial_global(const FederationConfig& cfg) {
  const Architecture& arch = Architecture::fixed();
  uint64_t seed = cfg.init == InitPolicy::kCommonSeed
                      ? cfg.seed
                      : independent_init_seed(cfg.seed, 0);
  GlobalModel global;
  global.round = 0;
  global.params = init_params(arch, seed);
  FederationMask mask = FederationMask::make(cfg.mask, arch);
  global.frozen.architecture_id = arch.id();
  for (const auto& e : global.params.entries)
    if (!mask.selects(e.name)) global.frozen.entries.push_back(e);
  return global;
}

ParamSet client_round_base(const ParamSet& broadcast,
                           const FederationConfig& cfg, uint32_t client_id,
                           uint32_t round) {
  if (round == 1 && cfg.init == InitPolicy::kIndependent)
    return init_params(Architecture::fixed(),
                       independent_init_seed(cfg.seed, client_id));
  return broadcast;
}

void apply_aggregate(GlobalModel& global, const ParamSet& aggregated,
                     uint32_t round) {
  for (const auto& e : aggregated.entries) {
    Tensor* dst = global.params.find(e.name);
    if (!dst || !dst->same_shape(e.tensor))
      throw ArchMismatchError("aggregated entry does not fit global model: " +
                              e.name);
    *dst = e.tensor;
  }
  global.round = round;
}

bool frozen_entries_intact(const GlobalModel& global) {
  for (const auto& e : global.frozen.entries) {
    const Tensor* cur = global.params.find(e.name);
    if (!cur || !(*cur == e.tensor)) return false;
  }
  return true;
}

}  // namespace fedsim
