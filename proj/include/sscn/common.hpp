#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

namespace sscn {

// Network-boundary normalization constants: L in [0,100] maps to [-1,1],
// ab in [-110,110] maps to [-1,1].
inline constexpr double kChromaRange = 110.0;
inline constexpr double kLuminanceRange = 100.0;

inline torch::Tensor normalize_luminance(const torch::Tensor& L) {
  return L / (kLuminanceRange / 2.0) - 1.0;
}

inline torch::Tensor denormalize_luminance(const torch::Tensor& Ln) {
  return (Ln + 1.0) * (kLuminanceRange / 2.0);
}

inline torch::Tensor normalize_chroma(const torch::Tensor& ab) {
  return ab / kChromaRange;
}

inline torch::Tensor denormalize_chroma(const torch::Tensor& abn) {
  return abn * kChromaRange;
}

// FNV-1a, used to fingerprint manifests and materialized triplets.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t tensor_digest(const torch::Tensor& t, uint64_t seed = 0xcbf29ce484222325ULL) {
  auto c = t.contiguous();
  uint64_t h = seed;
  for (auto d : c.sizes()) {
    h = fnv1a64(&d, sizeof(d), h);
  }
  return fnv1a64(c.data_ptr(), c.numel() * c.element_size(), h);
}

// splitmix64; used to derive independent RNG streams from (seed, tag, index).
inline uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0x94d049bb133111ebULL * (c + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t tag = 0, uint64_t index = 0) {
  return std::mt19937_64(mix_seed(seed, tag, index));
}

}  // namespace sscn
