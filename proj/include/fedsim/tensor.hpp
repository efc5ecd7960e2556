#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

size_t shape_volume(const std::vector<uint32_t>& dims);

// Dense row-major tensor of 64-bit floats.
struct Tensor {
  std::vector<uint32_t> dims;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<uint32_t> d, std::vector<double> values);

  static Tensor zeros(std::vector<uint32_t> d);

  size_t size() const { return data.size(); }
  bool same_shape(const Tensor& other) const { return dims == other.dims; }

  bool operator==(const Tensor&) const = default;
};

inline size_t shape_volume(const std::vector<uint32_t>& dims) {
  size_t n = 1;
  for (uint32_t d : dims) {
    if (d == 0) throw InvalidArgumentError("tensor dims must be positive");
    n *= d;
  }
  return n;
}

inline Tensor::Tensor(std::vector<uint32_t> d, std::vector<double> values)
    : dims(std::move(d)), data(std::move(values)) {
  if (data.size() != shape_volume(dims))
    throw InvalidArgumentError("tensor data length does not match dims");
}

inline Tensor Tensor::zeros(std::vector<uint32_t> d) {
  size_t n = shape_volume(d);
  return Tensor(std::move(d), std::vector<double>(n, 0.0));
}

}  // namespace fedsim
