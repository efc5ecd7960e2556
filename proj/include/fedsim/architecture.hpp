#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim {

enum class ParamGroup { kFeature, kClassifier };

struct EntrySpec {
  std::string name;
  std::vector<uint32_t> dims;
  ParamGroup group;
  bool is_bias = false;
  uint32_t fan_in = 0;   // 0 for biases
  uint32_t fan_out = 0;
};

struct ParamEntry {
  std::string name;
  Tensor tensor;

  bool operator==(const ParamEntry&) const = default;
};

// Ordered, named collection of parameter tensors; the unit exchanged between
// client and server. Entry order is the canonical order of the architecture.
struct ParamSet {
  std::string architecture_id;
  std::vector<ParamEntry> entries;

  const Tensor* find(std::string_view name) const;
  Tensor* find(std::string_view name);

  bool operator==(const ParamSet&) const = default;
};

// The fixed network:
//   conv(4 filters, 3x3, stride 1, pad 1) - relu - 2x2 maxpool
//   conv(8 filters, 3x3, stride 1, pad 1) - relu - 2x2 maxpool
//   flatten - dense(64) - relu - dense(4)
// on a 16x16x1 input. The conv entries form the feature group, the dense
// entries the classifier group.
class Architecture {
 public:
  static const Architecture& fixed();

  const std::string& id() const { return id_; }
  const std::vector<EntrySpec>& entries() const { return entries_; }
  const EntrySpec* entry(std::string_view name) const;

  std::vector<std::string> group_names(ParamGroup group) const;

  // Full-set check: identical names, order and dims.
  bool matches_full(const ParamSet& params) const;
  void require_full(const ParamSet& params) const;  // throws ArchMismatchError

 private:
  Architecture(std::string id, std::vector<EntrySpec> entries);

  std::string id_;
  std::vector<EntrySpec> entries_;
};

// Glorot-uniform weights, zero biases; a pure function of (architecture, seed).
ParamSet init_params(const Architecture& arch, uint64_t seed);

ParamSet zero_params(const Architecture& arch);

// Architecture id for a decoded entry list: the fixed id when the entries are
// a canonical-order subset of the fixed architecture (with matching dims),
// empty otherwise.
std::string infer_architecture_id(const std::vector<ParamEntry>& entries);

}  // namespace fedsim
