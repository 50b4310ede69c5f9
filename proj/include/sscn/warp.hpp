#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace sscn {

// Thin-plate-spline warp parameters. Control points live on a G x G grid in
// normalized [0,1]^2 coordinates; displacements are normalized offsets of
// each control point. Zero displacements define the identity warp.
struct TpsWarpSpec {
  torch::Tensor control_points;  // (G*G, 2) float64, (x, y) normalized
  torch::Tensor displacements;   // (G*G, 2) float64
  bool violent = false;

  static constexpr int kGridSize = 4;
  static constexpr double kNormalMaxDisp = 0.08;
  static constexpr double kViolentMinDisp = 0.2;
  static constexpr double kViolentMaxDisp = 0.4;

  static TpsWarpSpec identity(int grid = kGridSize);
};

// Exact-interpolation thin plate spline f: R^2 -> R^m fitted to
// f(points[i]) = values[i]; solved in double precision.
class TpsSolver {
 public:
  TpsSolver(const torch::Tensor& points, const torch::Tensor& values);
  // (M,2) queries -> (M,m) interpolated values
  torch::Tensor evaluate(const torch::Tensor& queries) const;
  // max |f(points) - values|, the fit residual
  double residual() const;

 private:
  torch::Tensor points_;
  torch::Tensor values_;
  torch::Tensor coeffs_;  // (N+3, m)
};

// Backward-mapped TPS warp with bilinear sampling and edge replication.
// The warped image at (control point + displacement) shows the source at the
// control point. Rejects degenerate (collinear) control grids.
torch::Tensor tps_warp(const torch::Tensor& image, const TpsWarpSpec& spec);

// Random displacement field: normal regime norms <= 0.08, violent regime
// norms in [0.2, 0.4].
TpsWarpSpec random_spec(std::mt19937_64& rng, bool violent);

// Rotation about the image center by `degrees`, edge-replicated.
torch::Tensor rotate(const torch::Tensor& image, double degrees);
// Crop window resized back to the input resolution.
torch::Tensor crop_resize(const torch::Tensor& image, int64_t y0, int64_t x0, int64_t h,
                          int64_t w);

// Random augmentations used for evaluation references: angle uniform in
// [-45,45] degrees; crop retains at least half of each dimension.
torch::Tensor random_rotation(const torch::Tensor& image, std::mt19937_64& rng);
torch::Tensor random_crop(const torch::Tensor& image, std::mt19937_64& rng);

// A self-supervised pair: gray target plus TPS-warped color reference, both
// derived from one source image.
struct TrainingPair {
  torch::Tensor target_L;       // (H,W) luminance of the source
  torch::Tensor reference_rgb;  // (3,H,W) warped source
  torch::Tensor gt_ab;          // (2,H,W) chroma of the unwarped source
  std::optional<int64_t> class_label;
  bool violent = false;
};

TrainingPair make_training_pair(const torch::Tensor& color_rgb, std::mt19937_64& rng,
                                double violent_prob,
                                std::optional<int64_t> class_label = std::nullopt);
TrainingPair make_training_pair_with_spec(const torch::Tensor& color_rgb,
                                          const TpsWarpSpec& spec,
                                          std::optional<int64_t> class_label = std::nullopt);

enum class AugType { kTps, kRotation, kCrop };
std::string aug_type_name(AugType t);
AugType aug_type_from_name(const std::string& name);

// Evaluation triplet: ground truth is the full original RGB image.
struct EvalTriplet {
  torch::Tensor target_L;
  torch::Tensor reference_rgb;
  torch::Tensor gt_rgb;
};

EvalTriplet make_eval_triplet(const torch::Tensor& color_rgb, AugType aug,
                              std::mt19937_64& rng);

// JSONL manifest describing regenerable evaluation triplets.
struct ManifestEntry {
  std::string source_path;
  AugType aug = AugType::kTps;
  uint64_t seed = 0;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Fingerprint of a materialized triplet (used to pin regenerability).
uint64_t triplet_digest(const EvalTriplet& t);

}  // namespace sscn
