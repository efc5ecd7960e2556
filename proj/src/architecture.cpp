#include "fedsim/architecture.hpp"

#include <cmath>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

const Tensor* ParamSet::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

Tensor* ParamSet::find(std::string_view name) {
  for (auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

Architecture::Architecture(std::string id, std::vector<EntrySpec> entries)
    : id_(std::move(id)), entries_(std::move(entries)) {}

const Architecture& Architecture::fixed() {
  static const Architecture arch("cnn16-v1", {
      {"conv1.weight", {4, 1, 3, 3}, ParamGroup::kFeature, false, 9, 36},
      {"conv1.bias", {4}, ParamGroup::kFeature, true, 0, 0},
      {"conv2.weight", {8, 4, 3, 3}, ParamGroup::kFeature, false, 36, 72},
      {"conv2.bias", {8}, ParamGroup::kFeature, true, 0, 0},
      {"fc1.weight", {64, 128}, ParamGroup::kClassifier, false, 128, 64},
      {"fc1.bias", {64}, ParamGroup::kClassifier, true, 0, 0},
      {"fc2.weight", {4, 64}, ParamGroup::kClassifier, false, 64, 4},
      {"fc2.bias", {4}, ParamGroup::kClassifier, true, 0, 0},
  });
  return arch;
}

const EntrySpec* Architecture::entry(std::string_view name) const {
  for (const auto& spec : entries_)
    if (spec.name == name) return &spec;
  return nullptr;
}

std::vector<std::string> Architecture::group_names(ParamGroup group) const {
  std::vector<std::string> names;
  for (const auto& spec : entries_)
    if (spec.group == group) names.push_back(spec.name);
  return names;
}

bool Architecture::matches_full(const ParamSet& params) const {
  if (params.entries.size() != entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (params.entries[i].name != entries_[i].name) return false;
    if (params.entries[i].tensor.dims != entries_[i].dims) return false;
  }
  return true;
}

void Architecture::require_full(const ParamSet& params) const {
  if (!matches_full(params))
    throw ArchMismatchError("ParamSet does not match architecture " + id_);
}

ParamSet init_params(const Architecture& arch, uint64_t seed) {
  SplitMix64 rng(seed);
  ParamSet out;
  out.architecture_id = arch.id();
  for (const auto& spec : arch.entries()) {
    Tensor t = Tensor::zeros(spec.dims);
    if (!spec.is_bias) {
      double bound = std::sqrt(6.0 / (spec.fan_in + spec.fan_out));
      for (double& v : t.data) v = rng.uniform(-bound, bound);
    }
    out.entries.push_back({spec.name, std::move(t)});
  }
  return out;
}

ParamSet zero_params(const Architecture& arch) {
  ParamSet out;
  out.architecture_id = arch.id();
  for (const auto& spec : arch.entries())
    out.entries.push_back({spec.name, Tensor::zeros(spec.dims)});
  return out;
}

std::string infer_architecture_id(const std::vector<ParamEntry>& entries) {
  if (entries.empty()) return "";
  const Architecture& arch = Architecture::fixed();
  size_t pos = 0;  // entries must be a canonical-order subsequence
  for (const auto& e : entries) {
    while (pos < arch.entries().size() &&
           arch.entries()[pos].name != e.name)
      ++pos;
    if (pos == arch.entries().size()) return "";
    if (arch.entries()[pos].dims != e.tensor.dims) return "";
    ++pos;
  }
  return arch.id();
}

}  // namespace fedsim
