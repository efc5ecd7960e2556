#include "fedsim/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

constexpr int kC1 = 4;   // conv1 filters
constexpr int kC2 = 8;   // conv2 filters
constexpr int kFc1 = 64;
constexpr int kH1 = 16;  // conv1 plane
constexpr int kH2 = 8;   // after pool1
constexpr int kH3 = 4;   // after pool2
constexpr int kFlat = kC2 * kH3 * kH3;  // 128

// 3x3 conv, stride 1, zero pad 1, same-size output.
void conv_forward(const double* in, int batch, int in_c, int hw,
                  const double* weight, const double* bias, int out_c,
                  double* out) {
  const int plane = hw * hw;
  for (int i = 0; i < batch; ++i) {
    const double* in_i = in + static_cast<size_t>(i) * in_c * plane;
    double* out_i = out + static_cast<size_t>(i) * out_c * plane;
    for (int oc = 0; oc < out_c; ++oc) {
      const double* w_oc = weight + static_cast<size_t>(oc) * in_c * 9;
      double* out_p = out_i + static_cast<size_t>(oc) * plane;
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          double acc = bias[oc];
          for (int ic = 0; ic < in_c; ++ic) {
            const double* in_p = in_i + static_cast<size_t>(ic) * plane;
            const double* w = w_oc + ic * 9;
            for (int ky = 0; ky < 3; ++ky) {
              int sy = y + ky - 1;
              if (sy < 0 || sy >= hw) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int sx = x + kx - 1;
                if (sx < 0 || sx >= hw) continue;
                acc += w[ky * 3 + kx] * in_p[sy * hw + sx];
              }
            }
          }
          out_p[y * hw + x] = acc;
        }
      }
    }
  }
}

// Gradients of the 3x3 same conv w.r.t. weights, bias and input.
void conv_backward(const double* in, const double* dout, int batch, int in_c,
                   int hw, const double* weight, int out_c, double* dweight,
                   double* dbias, double* din) {
  const int plane = hw * hw;
  for (int i = 0; i < batch; ++i) {
    const double* in_i = in + static_cast<size_t>(i) * in_c * plane;
    const double* dout_i = dout + static_cast<size_t>(i) * out_c * plane;
    double* din_i = din ? din + static_cast<size_t>(i) * in_c * plane : nullptr;
    for (int oc = 0; oc < out_c; ++oc) {
      const double* dout_p = dout_i + static_cast<size_t>(oc) * plane;
      const double* w_oc = weight + static_cast<size_t>(oc) * in_c * 9;
      double* dw_oc = dweight + static_cast<size_t>(oc) * in_c * 9;
      for (int y = 0; y < hw; ++y) {
        for (int x = 0; x < hw; ++x) {
          double g = dout_p[y * hw + x];
          if (g == 0.0) continue;
          dbias[oc] += g;
          for (int ic = 0; ic < in_c; ++ic) {
            const double* in_p = in_i + static_cast<size_t>(ic) * plane;
            double* dw = dw_oc + ic * 9;
            double* din_p =
                din_i ? din_i + static_cast<size_t>(ic) * plane : nullptr;
            for (int ky = 0; ky < 3; ++ky) {
              int sy = y + ky - 1;
              if (sy < 0 || sy >= hw) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int sx = x + kx - 1;
                if (sx < 0 || sx >= hw) continue;
                dw[ky * 3 + kx] += g * in_p[sy * hw + sx];
                if (din_p)
                  din_p[sy * hw + sx] += g * w_oc[ic * 9 + ky * 3 + kx];
              }
            }
          }
        }
      }
    }
  }
}

// 2x2 max pool, stride 2; records the flat source index of each maximum
// (first maximum in row-major scan wins).
void pool_forward(const double* in, int batch, int chans, int hw, double* out,
                  int* idx) {
  const int out_hw = hw / 2;
  const int plane = hw * hw;
  const int out_plane = out_hw * out_hw;
  for (int i = 0; i < batch; ++i) {
    for (int c = 0; c < chans; ++c) {
      const double* in_p =
          in + (static_cast<size_t>(i) * chans + c) * plane;
      double* out_p = out + (static_cast<size_t>(i) * chans + c) * out_plane;
      int* idx_p = idx + (static_cast<size_t>(i) * chans + c) * out_plane;
      for (int y = 0; y < out_hw; ++y) {
        for (int x = 0; x < out_hw; ++x) {
          int base = (2 * y) * hw + 2 * x;
          int best = base;
          double best_v = in_p[base];
          const int cand[3] = {base + 1, base + hw, base + hw + 1};
          for (int k = 0; k < 3; ++k) {
            if (in_p[cand[k]] > best_v) {
              best_v = in_p[cand[k]];
              best = cand[k];
            }
          }
          out_p[y * out_hw + x] = best_v;
          idx_p[y * out_hw + x] = best;
        }
      }
    }
  }
}

void pool_backward(const double* dout, const int* idx, int batch, int chans,
                   int hw, double* din) {
  const int out_hw = hw / 2;
  const int plane = hw * hw;
  const int out_plane = out_hw * out_hw;
  for (int i = 0; i < batch; ++i) {
    for (int c = 0; c < chans; ++c) {
      const double* dout_p =
          dout + (static_cast<size_t>(i) * chans + c) * out_plane;
      const int* idx_p = idx + (static_cast<size_t>(i) * chans + c) * out_plane;
      double* din_p = din + (static_cast<size_t>(i) * chans + c) * plane;
      for (int j = 0; j < out_plane; ++j) din_p[idx_p[j]] += dout_p[j];
    }
  }
}

void relu_inplace(double* v, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (v[i] < 0.0) v[i] = 0.0;
}

// d *= (activated > 0)
void relu_backward(const double* activated, double* d, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (activated[i] <= 0.0) d[i] = 0.0;
}

void fc_forward(const double* in, int batch, int in_n, const double* weight,
                const double* bias, int out_n, double* out) {
  for (int i = 0; i < batch; ++i) {
    const double* in_i = in + static_cast<size_t>(i) * in_n;
    double* out_i = out + static_cast<size_t>(i) * out_n;
    for (int j = 0; j < out_n; ++j) {
      const double* w = weight + static_cast<size_t>(j) * in_n;
      double acc = bias[j];
      for (int k = 0; k < in_n; ++k) acc += w[k] * in_i[k];
      out_i[j] = acc;
    }
  }
}

void fc_backward(const double* in, const double* dout, int batch, int in_n,
                 const double* weight, int out_n, double* dweight,
                 double* dbias, double* din) {
  for (int i = 0; i < batch; ++i) {
    const double* in_i = in + static_cast<size_t>(i) * in_n;
    const double* dout_i = dout + static_cast<size_t>(i) * out_n;
    double* din_i = din ? din + static_cast<size_t>(i) * in_n : nullptr;
    for (int j = 0; j < out_n; ++j) {
      double g = dout_i[j];
      dbias[j] += g;
      double* dw = dweight + static_cast<size_t>(j) * in_n;
      for (int k = 0; k < in_n; ++k) dw[k] += g * in_i[k];
      if (din_i) {
        const double* w = weight + static_cast<size_t>(j) * in_n;
        for (int k = 0; k < in_n; ++k) din_i[k] += g * w[k];
      }
    }
  }
}

struct Activations {
  int batch = 0;
  std::vector<double> a1;  // relu(conv1), [b,4,16,16]
  std::vector<double> p1;  // [b,4,8,8]
  std::vector<int> idx1;
  std::vector<double> a2;  // relu(conv2), [b,8,8,8]
  std::vector<double> p2;  // [b,8,4,4] == flattened input of fc1
  std::vector<int> idx2;
  std::vector<double> a3;  // relu(fc1), [b,64]
  std::vector<double> z4;  // logits, [b,4]
};

void validate_batch(const Batch& batch) {
  const std::vector<uint32_t> want = {
      static_cast<uint32_t>(batch.labels.size()), kImageSize, kImageSize};
  if (batch.labels.empty()) throw EmptyInputError("batch must be non-empty");
  if (batch.images.dims != want)
    throw ArchMismatchError("batch images must have dims [b,16,16]");
  for (uint8_t l : batch.labels)
    if (l >= kNumClasses)
      throw InvalidArgumentError("batch label out of range");
}

Activations run_forward(const ParamSet& params, const Batch& batch) {
  Architecture::fixed().require_full(params);
  validate_batch(batch);

  const int b = static_cast<int>(batch.labels.size());
  Activations act;
  act.batch = b;
  act.a1.assign(static_cast<size_t>(b) * kC1 * kH1 * kH1, 0.0);
  act.p1.assign(static_cast<size_t>(b) * kC1 * kH2 * kH2, 0.0);
  act.idx1.assign(act.p1.size(), 0);
  act.a2.assign(static_cast<size_t>(b) * kC2 * kH2 * kH2, 0.0);
  act.p2.assign(static_cast<size_t>(b) * kC2 * kH3 * kH3, 0.0);
  act.idx2.assign(act.p2.size(), 0);
  act.a3.assign(static_cast<size_t>(b) * kFc1, 0.0);
  act.z4.assign(static_cast<size_t>(b) * kNumClasses, 0.0);

  const double* x = batch.images.data.data();
  conv_forward(x, b, 1, kH1, params.entries[0].tensor.data.data(),
               params.entries[1].tensor.data.data(), kC1, act.a1.data());
  relu_inplace(act.a1.data(), act.a1.size());
  pool_forward(act.a1.data(), b, kC1, kH1, act.p1.data(), act.idx1.data());

  conv_forward(act.p1.data(), b, kC1, kH2, params.entries[2].tensor.data.data(),
               params.entries[3].tensor.data.data(), kC2, act.a2.data());
  relu_inplace(act.a2.data(), act.a2.size());
  pool_forward(act.a2.data(), b, kC2, kH2, act.p2.data(), act.idx2.data());

  fc_forward(act.p2.data(), b, kFlat, params.entries[4].tensor.data.data(),
             params.entries[5].tensor.data.data(), kFc1, act.a3.data());
  relu_inplace(act.a3.data(), act.a3.size());

  fc_forward(act.a3.data(), b, kFc1, params.entries[6].tensor.data.data(),
             params.entries[7].tensor.data.data(), kNumClasses,
             act.z4.data());
  return act;
}

// Per-row log-sum-exp of the logits.
double row_lse(const double* z) {
  double m = z[0];
  for (int c = 1; c < kNumClasses; ++c) m = std::max(m, z[c]);
  double s = 0.0;
  for (int c = 0; c < kNumClasses; ++c) s += std::exp(z[c] - m);
  return m + std::log(s);
}

int row_argmax(const double* z) {
  int best = 0;  // ties break toward the lowest class index
  for (int c = 1; c < kNumClasses; ++c)
    if (z[c] > z[best]) best = c;
  return best;
}

}  // namespace

Batch make_batch(std::span<const LabeledImage> samples) {
  if (samples.empty()) throw EmptyInputError("batch must be non-empty");
  Batch batch;
  batch.images = Tensor::zeros(
      {static_cast<uint32_t>(samples.size()), kImageSize, kImageSize});
  batch.labels.resize(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    std::copy(samples[i].pixels.begin(), samples[i].pixels.end(),
              batch.images.data.begin() + i * kImagePixels);
    batch.labels[i] = static_cast<uint8_t>(samples[i].label);
  }
  return batch;
}

Tensor forward(const ParamSet& params, const Batch& batch) {
  Activations act = run_forward(params, batch);
  return Tensor({static_cast<uint32_t>(act.batch), kNumClasses},
                std::move(act.z4));
}

LossGrad loss_and_grad(const ParamSet& params, const Batch& batch) {
  Activations act = run_forward(params, batch);
  const int b = act.batch;
  const double inv_b = 1.0 / b;

  double loss = 0.0;
  std::vector<double> dz4(act.z4.size());
  for (int i = 0; i < b; ++i) {
    const double* z = act.z4.data() + static_cast<size_t>(i) * kNumClasses;
    double* d = dz4.data() + static_cast<size_t>(i) * kNumClasses;
    double lse = row_lse(z);
    loss += lse - z[batch.labels[i]];
    for (int c = 0; c < kNumClasses; ++c) {
      d[c] = std::exp(z[c] - lse) * inv_b;
      if (c == batch.labels[i]) d[c] -= inv_b;
    }
  }
  loss *= inv_b;

  LossGrad result;
  result.loss = loss;
  result.grads = zero_params(Architecture::fixed());
  auto& g = result.grads.entries;

  std::vector<double> da3(act.a3.size(), 0.0);
  fc_backward(act.a3.data(), dz4.data(), b, kFc1,
              params.entries[6].tensor.data.data(), kNumClasses,
              g[6].tensor.data.data(), g[7].tensor.data.data(), da3.data());
  relu_backward(act.a3.data(), da3.data(), da3.size());

  std::vector<double> dp2(act.p2.size(), 0.0);
  fc_backward(act.p2.data(), da3.data(), b, kFlat,
              params.entries[4].tensor.data.data(), kFc1,
              g[4].tensor.data.data(), g[5].tensor.data.data(), dp2.data());

  std::vector<double> da2(act.a2.size(), 0.0);
  pool_backward(dp2.data(), act.idx2.data(), b, kC2, kH2, da2.data());
  relu_backward(act.a2.data(), da2.data(), da2.size());

  std::vector<double> dp1(act.p1.size(), 0.0);
  conv_backward(act.p1.data(), da2.data(), b, kC1, kH2,
                params.entries[2].tensor.data.data(), kC2,
                g[2].tensor.data.data(), g[3].tensor.data.data(), dp1.data());

  std::vector<double> da1(act.a1.size(), 0.0);
  pool_backward(dp1.data(), act.idx1.data(), b, kC1, kH1, da1.data());
  relu_backward(act.a1.data(), da1.data(), da1.size());

  conv_backward(batch.images.data.data(), da1.data(), b, 1, kH1,
                params.entries[0].tensor.data.data(), kC1,
                g[0].tensor.data.data(), g[1].tensor.data.data(), nullptr);
  return result;
}

ParamSet sgd_apply(const ParamSet& params, const ParamSet& grads, double lr) {
  if (!(lr > 0.0)) throw InvalidArgumentError("learning rate must be > 0");
  if (params.entries.size() != grads.entries.size())
    throw ArchMismatchError("params/grads entry count mismatch");
  ParamSet out = params;
  for (size_t i = 0; i < out.entries.size(); ++i) {
    const auto& ge = grads.entries[i];
    auto& oe = out.entries[i];
    if (oe.name != ge.name || !oe.tensor.same_shape(ge.tensor))
      throw ArchMismatchError("params/grads entry mismatch at " + oe.name);
    for (size_t k = 0; k < oe.tensor.data.size(); ++k)
      oe.tensor.data[k] -= lr * ge.tensor.data[k];
  }
  return out;
}

EvalMetrics evaluate(const ParamSet& params,
                     std::span<const LabeledImage> data) {
  if (data.empty()) throw EmptyInputError("evaluate needs a non-empty dataset");
  EvalMetrics m;
  std::vector<double> losses;
  losses.reserve(data.size());
  uint64_t correct = 0;
  constexpr size_t kChunk = 256;
  for (size_t off = 0; off < data.size(); off += kChunk) {
    size_t n = std::min(kChunk, data.size() - off);
    Batch batch = make_batch(data.subspan(off, n));
    Tensor logits = forward(params, batch);
    for (size_t i = 0; i < n; ++i) {
      const double* z = logits.data.data() + i * kNumClasses;
      int truth = batch.labels[i];
      int pred = row_argmax(z);
      m.confusion[truth][pred] += 1;
      if (pred == truth) ++correct;
      losses.push_back(row_lse(z) - z[truth]);
    }
  }
  // Summing in sorted order makes the mean loss bit-invariant under any
  // permutation of the dataset.
  std::sort(losses.begin(), losses.end());
  double loss_sum = 0.0;
  for (double l : losses) loss_sum += l;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  m.mean_loss = loss_sum / static_cast<double>(data.size());
  return m;
}

}  // namespace fedsim
