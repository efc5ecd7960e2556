#include "fedsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fedsim/codec.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/transport.hpp"

namespace fedsim {

namespace {

constexpr uint64_t kShardSeedDomain = 0xDA7A5EEDULL;

void fill_rect(std::array<double, kImagePixels>& img, int y0, int y1, int x0,
               int x1, double value) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) img[y * kImageSize + x] += value;
}

std::array<double, kImagePixels> translate(
    const std::array<double, kImagePixels>& src, int dx, int dy) {
  std::array<double, kImagePixels> out{};
  for (int y = 0; y < kImageSize; ++y) {
    int sy = y - dy;
    if (sy < 0 || sy >= kImageSize) continue;
    for (int x = 0; x < kImageSize; ++x) {
      int sx = x - dx;
      if (sx < 0 || sx >= kImageSize) continue;
      out[y * kImageSize + x] = src[sy * kImageSize + sx];
    }
  }
  return out;
}

// Draw order per image is fixed: jitter dx, dy, brightness, the HIDDEN
// occlusion corner, then one noise value per pixel.
LabeledImage render(SplitMix64& rng,
                    const std::array<double, kImagePixels>& pattern,
                    Label label, double noise_sigma) {
  LabeledImage img;
  img.label = label;
  if (label == Label::kEmpty) {
    for (double& p : img.pixels) p = rng.next_unit();
    return img;
  }
  int dx = static_cast<int>(rng.next_below(5)) - 2;
  int dy = static_cast<int>(rng.next_below(5)) - 2;
  double brightness = rng.uniform(-0.15, 0.15);
  int ox = 0, oy = 0;
  if (label == Label::kHidden) {
    ox = static_cast<int>(rng.next_below(9));
    oy = static_cast<int>(rng.next_below(9));
  }
  img.pixels = translate(pattern, dx, dy);
  for (double& p : img.pixels) {
    p += brightness + noise_sigma * rng.gaussian();
    p = std::clamp(p, 0.0, 1.0);
  }
  if (label == Label::kHidden) {
    for (int y = oy; y < oy + 8; ++y)
      for (int x = ox; x < ox + 8; ++x) img.pixels[y * kImageSize + x] = 0.0;
  }
  return img;
}

}  // namespace

const char* label_name(Label label) {
  switch (label) {
    case Label::kOkay: return "OKAY";
    case Label::kNotOkay: return "NOT_OKAY";
    case Label::kHidden: return "HIDDEN";
    case Label::kEmpty: return "EMPTY";
  }
  return "?";
}

std::array<double, kImagePixels> base_pattern(uint32_t id) {
  std::array<double, kImagePixels> img{};
  if (id == 0) {
    fill_rect(img, 5, 10, 2, 11, 0.75);   // body
    fill_rect(img, 6, 9, 12, 14, 0.45);   // plug
  } else {
    fill_rect(img, 5, 10, 3, 12, 0.70);
    fill_rect(img, 6, 9, 13, 15, 0.50);
  }
  return img;
}

std::array<double, kImagePixels> defect_template(uint32_t signature_id) {
  std::array<double, kImagePixels> img{};
  switch (signature_id) {
    case 1:  // bright patch at the plug corner
      fill_rect(img, 3, 5, 11, 13, 0.5);
      break;
    case 2:  // dark hole in the body center
      fill_rect(img, 6, 9, 5, 8, -0.6);
      break;
    case 3:  // vertical stripe across the body
      fill_rect(img, 3, 12, 4, 5, 0.4);
      break;
    default:
      throw InvalidArgumentError("defect_signature_id must be 1, 2 or 3");
  }
  return img;
}

Shard generate_client_shard(const ClientDataSpec& spec, double split_ratio) {
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw InvalidArgumentError("split_ratio must be in (0,1)");
  for (uint32_t c : spec.class_counts)
    if (c == 0) throw InvalidArgumentError("class counts must be positive");

  const auto base = base_pattern(spec.base_pattern_id);
  auto defective = base;
  const auto defect = defect_template(spec.defect_signature_id);
  for (int i = 0; i < kImagePixels; ++i) defective[i] += defect[i];

  SplitMix64 rng(spec.seed);
  Dataset all;
  all.reserve(spec.class_counts[0] + spec.class_counts[1] +
              spec.class_counts[2] + spec.class_counts[3]);
  for (int cls = 0; cls < kNumClasses; ++cls) {
    Label label = static_cast<Label>(cls);
    const auto& pattern = (label == Label::kNotOkay) ? defective : base;
    for (uint32_t i = 0; i < spec.class_counts[cls]; ++i)
      all.push_back(render(rng, pattern, label, spec.noise_sigma));
  }

  std::vector<size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  Shard shard;
  shard.client_id = spec.client_id;
  size_t n_train = static_cast<size_t>(split_ratio * all.size());
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_train ? shard.train : shard.test).push_back(all[order[i]]);
  return shard;
}

Dataset generate_external_testset(uint64_t seed) {
  const auto base = base_pattern(1);
  SplitMix64 rng(seed);
  Dataset out;
  out.reserve(300);
  for (int i = 0; i < 275; ++i)
    out.push_back(render(rng, base, Label::kOkay, 0.05));
  for (int i = 0; i < 25; ++i)
    out.push_back(render(rng, base, Label::kHidden, 0.05));
  return out;
}

std::vector<ClientDataSpec> default_client_specs(uint32_t n_clients,
                                                 uint64_t seed) {
  if (n_clients < 1 || n_clients > 3)
    throw ConfigError("the synthetic dataset supports 1 to 3 clients");
  // Unequal totals, 40/30/20/10% class proportions.
  static constexpr std::array<uint32_t, 4> kCounts[3] = {
      {160, 120, 80, 40}, {120, 90, 60, 30}, {120, 90, 60, 30}};
  std::vector<ClientDataSpec> specs;
  for (uint32_t k = 1; k <= n_clients; ++k) {
    ClientDataSpec spec;
    spec.client_id = k;
    spec.base_pattern_id = 0;
    spec.defect_signature_id = k;
    spec.class_counts = kCounts[k - 1];
    spec.noise_sigma = 0.05;
    spec.seed = mix64(seed ^ (kShardSeedDomain + k));
    specs.push_back(spec);
  }
  return specs;
}

void save_shard(const Shard& shard, const std::string& path) {
  size_t total = shard.train.size() + shard.test.size();
  if (total == 0) throw EmptyInputError("cannot save an empty shard");

  std::vector<uint8_t> head;
  auto put_u16 = [&](uint16_t v) {
    head.push_back(v & 0xFF);
    head.push_back(v >> 8);
  };
  auto put_u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) head.push_back((v >> (8 * i)) & 0xFF);
  };
  head.insert(head.end(), {'F', 'D', 'A', 'T'});
  put_u16(1);
  put_u32(shard.client_id);
  put_u32(static_cast<uint32_t>(shard.train.size()));
  put_u32(static_cast<uint32_t>(shard.test.size()));
  for (const auto& img : shard.train)
    head.push_back(static_cast<uint8_t>(img.label));
  for (const auto& img : shard.test)
    head.push_back(static_cast<uint8_t>(img.label));
  uint32_t crc = crc32(head);
  put_u32(crc);

  Tensor pixels = Tensor::zeros(
      {static_cast<uint32_t>(total), kImageSize, kImageSize});
  size_t off = 0;
  for (const Dataset* part : {&shard.train, &shard.test})
    for (const auto& img : *part) {
      std::copy(img.pixels.begin(), img.pixels.end(),
                pixels.data.begin() + off);
      off += kImagePixels;
    }
  ParamSet ps;
  ps.entries.push_back({"pixels", std::move(pixels)});
  std::vector<uint8_t> blob = encode_params(ps, WireDtype::kF64);
  head.insert(head.end(), blob.begin(), blob.end());
  write_file_atomic(path, head);
}

Shard load_shard(const std::string& path) {
  std::vector<uint8_t> bytes = read_file(path);
  size_t pos = 0;
  auto need = [&](size_t n) {
    if (bytes.size() - pos < n)
      throw DecodeError(DecodeError::Kind::kTruncated, "truncated FDAT file");
  };
  auto get_u16 = [&]() {
    need(2);
    uint16_t v = bytes[pos] | (uint16_t(bytes[pos + 1]) << 8);
    pos += 2;
    return v;
  };
  auto get_u32 = [&]() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  };
  need(4);
  if (std::memcmp(bytes.data(), "FDAT", 4) != 0)
    throw DecodeError(DecodeError::Kind::kBadMagic, "not an FDAT file");
  pos = 4;
  if (get_u16() != 1)
    throw DecodeError(DecodeError::Kind::kBadVersion, "unsupported FDAT version");
  uint32_t client_id = get_u32();
  uint32_t n_train = get_u32();
  uint32_t n_test = get_u32();
  uint64_t total = uint64_t(n_train) + n_test;
  need(total);
  std::vector<uint8_t> labels(bytes.begin() + pos, bytes.begin() + pos + total);
  pos += total;
  size_t crc_end = pos;
  uint32_t stored = get_u32();
  if (crc32({bytes.data(), crc_end}) != stored)
    throw DecodeError(DecodeError::Kind::kBadCrc, "FDAT header CRC mismatch");

  ParamSet ps = decode_params({bytes.data() + pos, bytes.size() - pos});
  if (ps.entries.size() != 1 || ps.entries[0].name != "pixels" ||
      ps.entries[0].tensor.dims !=
          std::vector<uint32_t>{static_cast<uint32_t>(total), kImageSize,
                                kImageSize})
    throw DecodeError(DecodeError::Kind::kBadShape, "FDAT pixel blob mismatch");

  Shard shard;
  shard.client_id = client_id;
  const auto& data = ps.entries[0].tensor.data;
  for (uint64_t i = 0; i < total; ++i) {
    if (labels[i] >= kNumClasses)
      throw DecodeError(DecodeError::Kind::kBadShape, "FDAT label out of range");
    LabeledImage img;
    img.label = static_cast<Label>(labels[i]);
    std::copy(data.begin() + i * kImagePixels,
              data.begin() + (i + 1) * kImagePixels, img.pixels.begin());
    (i < n_train ? shard.train : shard.test).push_back(std::move(img));
  }
  return shard;
}

}  // namespace fedsim
