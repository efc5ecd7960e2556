#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/image.hpp"

namespace fedsim {

// Per-client generator spec. The three clients share one base pattern but
// each carries a unique defect signature on its NOT_OKAY class.
struct ClientDataSpec {
  uint32_t client_id = 1;
  uint32_t base_pattern_id = 0;
  uint32_t defect_signature_id = 1;  // 1 corner patch, 2 center hole, 3 stripe
  std::array<uint32_t, 4> class_counts{160, 120, 80, 40};  // OKAY..EMPTY
  double noise_sigma = 0.05;
  uint64_t seed = 1;
};

struct Shard {
  uint32_t client_id = 0;
  Dataset train;
  Dataset test;
};

// Clean 16x16 object pattern; id 0 is the clients' shared shape, other ids
// are slight geometric variants (the external hold-out uses one of those).
std::array<double, kImagePixels> base_pattern(uint32_t id);

// Additive defect template, zero outside the defect region.
std::array<double, kImagePixels> defect_template(uint32_t signature_id);

// Deterministic in spec.seed. OKAY = base + jitter + noise, NOT_OKAY adds the
// client's defect signature, HIDDEN zeroes a random 8x8 block, EMPTY is pure
// noise. Split is a seeded shuffle, first floor(ratio*n) images to train.
Shard generate_client_shard(const ClientDataSpec& spec, double split_ratio);

// Hold-out distribution never seen by a client: a base-pattern variant with
// 275 OKAY and 25 HIDDEN images.
Dataset generate_external_testset(uint64_t seed);

// The default three-client setup: unequal totals 400/300/300, class
// proportions 40/30/20/10%, pairwise distinct defect signatures.
std::vector<ClientDataSpec> default_client_specs(uint32_t n_clients,
                                                 uint64_t seed);

// Shard container (magic "FDAT") wrapping the wire blob format, for moving
// identical data across separate client processes.
void save_shard(const Shard& shard, const std::string& path);
Shard load_shard(const std::string& path);

}  // namespace fedsim
