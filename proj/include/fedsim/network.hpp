#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "fedsim/architecture.hpp"
#include "fedsim/image.hpp"

namespace fedsim {

struct Batch {
  Tensor images;                // [b, 16, 16]
  std::vector<uint8_t> labels;  // values 0..3, length b
};

Batch make_batch(std::span<const LabeledImage> samples);

// confusion[true][predicted]
using Confusion = std::array<std::array<uint64_t, kNumClasses>, kNumClasses>;

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  Confusion confusion{};
};

// Logits, dims [b, 4]. Pure; throws ArchMismatchError on shape mismatch.
Tensor forward(const ParamSet& params, const Batch& batch);

struct LossGrad {
  double loss = 0.0;
  ParamSet grads;  // same names/dims as the input params
};

// Mean softmax cross-entropy over the batch plus its gradient.
LossGrad loss_and_grad(const ParamSet& params, const Batch& batch);

// out[i] = params[i] - lr * grads[i]; lr must be > 0.
ParamSet sgd_apply(const ParamSet& params, const ParamSet& grads, double lr);

// Accuracy, 4x4 confusion matrix and mean loss over a non-empty dataset.
// Argmax ties break toward the lowest class index.
EvalMetrics evaluate(const ParamSet& params, std::span<const LabeledImage> data);

}  // namespace fedsim
