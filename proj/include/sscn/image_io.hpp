#pragma once

#include <string>

#include <torch/torch.h>

namespace sscn {

// Decodes a PNG/JPEG file into a (3,H,W) float64 RGB tensor in [0,255].
// Throws std::runtime_error if the file is missing or not decodable.
torch::Tensor load_image_rgb(const std::string& path);

// Encodes a (3,H,W) RGB tensor in [0,255] (values are clamped and rounded)
// as PNG or JPEG depending on the file extension.
void save_image_rgb(const std::string& path, const torch::Tensor& rgb);

// ab planes as a single 16-bit grayscale PNG, the two planes stacked
// vertically (a on top, b below). stored = round((ab + 128) * 256),
// i.e. ab = stored / 256 - 128, covering [-128, 128) at 1/256 resolution.
void save_ab_png16(const std::string& path, const torch::Tensor& ab);
torch::Tensor load_ab_png16(const std::string& path);

}  // namespace sscn
