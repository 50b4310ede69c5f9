#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sscn/image_io.hpp"

namespace sscn::testing {

// Deterministic colorful test image: two-color gradient plus a few solid
// shapes. Class id shifts the palette so labels are learnable.
inline torch::Tensor make_synth_image(uint64_t seed, int64_t size, int64_t class_id = 0) {
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + class_id + 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  auto pick_color = [&](double hue_shift) {
    // crude hue wheel, saturated enough to carry chroma
    double h = std::fmod(u01(rng) * 0.25 + hue_shift, 1.0) * 6.0;
    double v = 150.0 + 90.0 * u01(rng);
    double lo = 25.0 + 40.0 * u01(rng);
    int i = static_cast<int>(h) % 6;
    double f = h - std::floor(h);
    double q = v - (v - lo) * f;
    double t = lo + (v - lo) * f;
    switch (i) {
      case 0: return std::array<double, 3>{v, t, lo};
      case 1: return std::array<double, 3>{q, v, lo};
      case 2: return std::array<double, 3>{lo, v, t};
      case 3: return std::array<double, 3>{lo, q, v};
      case 4: return std::array<double, 3>{t, lo, v};
      default: return std::array<double, 3>{v, lo, q};
    }
  };

  const double hue0 = class_id / 10.0;
  auto c0 = pick_color(hue0);
  auto c1 = pick_color(hue0 + 0.35);
  auto ramp = torch::linspace(0, 1, size, torch::kFloat64);
  auto xx = ramp.view({1, -1}).expand({size, size});
  auto yy = ramp.view({-1, 1}).expand({size, size});
  auto mix = 0.6 * xx + 0.4 * yy;
  auto img = torch::empty({3, size, size}, torch::kFloat64);
  for (int c = 0; c < 3; ++c) {
    img[c] = c0[c] * (1.0 - mix) + c1[c] * mix;
  }

  for (int s = 0; s < 3; ++s) {
    auto col = pick_color(hue0 + 0.15 * (s + 1));
    double cx = u01(rng) * size, cy = u01(rng) * size;
    double rad = (0.08 + 0.15 * u01(rng)) * size;
    auto gx = ramp.view({1, -1}).expand({size, size}) * (size - 1);
    auto gy = ramp.view({-1, 1}).expand({size, size}) * (size - 1);
    auto mask = ((gx - cx).square() + (gy - cy).square()) < rad * rad;
    for (int c = 0; c < 3; ++c) {
      img[c] = torch::where(mask, torch::full_like(img[c], col[c]), img[c]);
    }
  }
  return img.clamp(0, 255);
}

// Writes n_images PNGs spread over n_classes class directories; returns root.
inline std::string write_synth_dataset(const std::string& root, int64_t n_images,
                                       int64_t n_classes, int64_t size, uint64_t seed = 7) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (int64_t i = 0; i < n_images; ++i) {
    int64_t cls = i % n_classes;
    fs::path dir = fs::path(root) / ("class_" + std::to_string(cls));
    fs::create_directories(dir);
    auto img = make_synth_image(seed + i, size, cls);
    sscn::save_image_rgb((dir / ("img_" + std::to_string(i) + ".png")).string(), img);
  }
  return root;
}

inline std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("sscn_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace sscn::testing
