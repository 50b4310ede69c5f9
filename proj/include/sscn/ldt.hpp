#pragma once

#include <optional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "sscn/gct.hpp"

namespace sscn {

// Levels 1-4 of a pyramid resized to 1/4 input resolution, channel-
// concatenated and flattened row-major into R = (H/4)*(W/4) region columns.
struct FlattenedFeatures {
  torch::Tensor mat;  // (B,d,R)
  int64_t h4 = 0, w4 = 0;
  FeaturePyramid::Source origin = FeaturePyramid::Source::kReference;

  int64_t d() const { return mat.size(1); }
  int64_t regions() const { return mat.size(2); }
};

FlattenedFeatures flatten_pyramid(const FeaturePyramid& pyramid);
torch::Tensor unflatten(const FlattenedFeatures& f);  // (B,d,h4,w4)

// Region subset driving sparse attention: the k highest-CAM regions plus r
// uniformly sampled background regions, always disjoint.
struct SparseSelection {
  torch::Tensor cam;             // (R) scores that produced the selection
  std::vector<int64_t> topk;     // T_k, ordered by descending score
  std::vector<int64_t> random;   // T_r, from the complement of T_k
  std::vector<int64_t> all() const;
  int64_t k() const { return static_cast<int64_t>(topk.size()); }
  int64_t r() const { return static_cast<int64_t>(random.size()); }
};

// Ties in the top-k break toward the lowest index, making the selection
// deterministic; T_r is drawn without replacement from the complement.
SparseSelection select_regions(const torch::Tensor& cam_scores, int64_t k, int64_t r,
                               std::mt19937_64& rng);

// Classifier head over pyramid level 5; the class-weighted activation map is
// the region score for selection.
struct CamClassifierImpl : torch::nn::Module {
  CamClassifierImpl(int64_t in_channels, int64_t class_count);

  struct Output {
    torch::Tensor logits;  // (B, class_count)
    torch::Tensor cam;     // (B, out_h*out_w), flattened row-major
  };
  // class_ids: (B) int64 labels, or nullopt to use the argmax class.
  Output forward(const FeaturePyramid& pyramid, const std::optional<torch::Tensor>& class_ids,
                 int64_t out_h, int64_t out_w);
  int64_t class_count() const { return fc->options.out_features(); }

  torch::nn::Linear fc{nullptr};
};
TORCH_MODULE(CamClassifier);

struct AttendStats {
  int64_t mac_similarity = 0;
  int64_t mac_weighted_sum = 0;
  int64_t total() const { return mac_similarity + mac_weighted_sum; }
};

struct AttentionResult {
  torch::Tensor attended;  // (B,d,R)
  torch::Tensor weights;   // (B,R,K), rows sum to 1
  AttendStats stats;
};

// Scaled-dot-product correspondence between coarse and reference regions,
// optionally restricted to selected reference keys.
struct AttentionImpl : torch::nn::Module {
  explicit AttentionImpl(int64_t d);

  AttentionResult forward(const FlattenedFeatures& coarse, const FlattenedFeatures& reference,
                          const std::optional<torch::Tensor>& key_indices = std::nullopt);

  torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr};
};
TORCH_MODULE(Attention);

// U-Net-style decoder fusing attended reference features with the coarse
// pyramid at multiple scales; emits final ab planes and the per-pixel color
// distribution at 1/4 resolution.
struct FusionDecoderImpl : torch::nn::Module {
  FusionDecoderImpl(std::vector<int64_t> level_channels, int64_t d, int64_t q_bins);

  struct Output {
    torch::Tensor ab;            // (B,2,H,W) in [-1,1]
    torch::Tensor distribution;  // (B,Q,H/4,W/4), softmax over Q
  };
  Output forward(const torch::Tensor& attended, const FeaturePyramid& coarse);

  torch::nn::Conv2d proj4{nullptr}, proj2{nullptr}, proj1{nullptr};
  torch::nn::Sequential block0{nullptr}, block1{nullptr}, block2{nullptr}, block3{nullptr};
  torch::nn::Conv2d ab_head{nullptr}, dist_head{nullptr};
  std::vector<int64_t> level_channels_;
};
TORCH_MODULE(FusionDecoder);

}  // namespace sscn
