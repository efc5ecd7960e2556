#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace fedsim {

inline constexpr int kImageSize = 16;
inline constexpr int kImagePixels = kImageSize * kImageSize;
inline constexpr int kNumClasses = 4;

enum class Label : uint8_t { kOkay = 0, kNotOkay = 1, kHidden = 2, kEmpty = 3 };

const char* label_name(Label label);

struct LabeledImage {
  std::array<double, kImagePixels> pixels{};  // row-major, values in [0,1]
  Label label = Label::kOkay;
};

using Dataset = std::vector<LabeledImage>;

}  // namespace fedsim
