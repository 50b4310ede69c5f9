#pragma once

#include <array>
#include <string>

#include <torch/torch.h>

namespace sscn {

// CIE Lab planes, D65 white point. L in [0,100], a/b in [-110,110].
struct LabImage {
  torch::Tensor L;
  torch::Tensor a;
  torch::Tensor b;

  int64_t height() const { return L.size(0); }
  int64_t width() const { return L.size(1); }
  torch::Tensor ab() const { return torch::stack({a, b}, 0); }
  void validate() const;
};

// (3,H,W) sRGB in [0,255] -> LabImage. Rejects non-3-channel input.
LabImage rgb_to_lab(const torch::Tensor& rgb);

// LabImage -> (3,H,W) sRGB in [0,255], clamped to the displayable range.
torch::Tensor lab_to_rgb(const LabImage& lab);

// Quantized ab plane: the 313 grid-10 bins reachable by the 5-nearest-bin
// soft encoding of displayable sRGB colors. A lattice center is kept when it
// lies within one diagonal grid step (14 ab units) of the sRGB chroma gamut;
// the construction is deterministic and must produce exactly 313 bins.
class AbGamut {
 public:
  static constexpr int64_t kBins = 313;
  static constexpr int kGridStep = 10;
  static constexpr int kLatticeExtent = 110;  // centers span [-110,110]
  static constexpr double kGamutReach = 14.0;

  AbGamut();
  static const AbGamut& instance();

  int64_t size() const { return centers_.size(0); }
  // (Q,2) float64 bin centers, ordered by (a, b).
  const torch::Tensor& centers() const { return centers_; }
  // Nearest bin by Euclidean distance in the ab plane.
  int64_t nearest_bin(double a, double b) const;
  // Reverse lookup: bin id of the lattice cell containing (a,b), -1 when the
  // cell is out of gamut.
  int64_t bin_of_cell(double a, double b) const;
  void write_csv(const std::string& path) const;

 private:
  torch::Tensor centers_;
  std::array<int16_t, 23 * 23> cell_to_bin_;
};

// Per-pixel categorical distribution over the gamut bins, probs (H,W,Q).
struct ColorDistribution {
  torch::Tensor probs;

  int64_t height() const { return probs.size(0); }
  int64_t width() const { return probs.size(1); }
  void validate() const;
};

// Soft-encodes raw ab planes (2,H,W) over the 5 nearest bin centers with a
// Gaussian kernel (sigma = 5); each pixel's weights sum to 1.
ColorDistribution encode_ab(const torch::Tensor& ab, const AbGamut& gamut);
inline constexpr int kEncodeNeighbors = 5;
inline constexpr double kEncodeSigma = 5.0;

// Annealed-mean decode; temperature 0 is exact argmax.
torch::Tensor decode_distribution(const ColorDistribution& dist, const AbGamut& gamut,
                                  double temperature = 0.38);

}  // namespace sscn
