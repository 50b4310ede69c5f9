#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "sscn/color_space.hpp"
#include "sscn/gct.hpp"
#include "sscn/ldt.hpp"

namespace sscn {

struct ModelConfig {
  int64_t resolution = 256;
  double scale_factor = 1.0;
  int64_t class_count = 1000;
  bool two_stage = true;
  int64_t q_bins = AbGamut::kBins;

  int64_t regions() const { return (resolution / 4) * (resolution / 4); }
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// "field: expected X, got Y" lines; empty when compatible.
std::vector<std::string> config_diff(const ModelConfig& expected, const ModelConfig& actual);

enum class AttendMode { kDense, kSparse };

struct TrainForward {
  torch::Tensor coarse_ab;     // (B,2,H,W), undefined when two_stage = false
  torch::Tensor final_ab;      // (B,2,H,W)
  torch::Tensor distribution;  // (B,Q,H/4,W/4)
  torch::Tensor logits;        // (B,class_count)
  AttendStats attend_stats;
};

struct ColorizeDiagnostics {
  AttentionResult attention;
  std::optional<SparseSelection> selection;
  torch::Tensor coarse_ab;  // raw units, resized to the output
};

// The two-stage exemplar colorizer: reference encoding, AdaIN-driven global
// transfer, then CAM-guided sparse attention and multi-scale fusion.
struct SscnModelImpl : torch::nn::Module {
  explicit SscnModelImpl(const ModelConfig& cfg);

  ModelConfig config;
  RefEncoder ref_encoder{nullptr};
  GrayEncoder gray_encoder{nullptr};
  StyleMlp style_mlp{nullptr};
  GctDecoder gct_decoder{nullptr};
  RefEncoder gray_corr_encoder{nullptr};  // correspondence encoder when GCT is ablated
  CamClassifier classifier{nullptr};
  Attention attention{nullptr};
  FusionDecoder fusion{nullptr};

  int64_t correspondence_dim() const { return d_; }
  bool weights_ready() const { return weights_ready_; }
  void mark_trained() { weights_ready_ = true; }

  // normalized-Lab encoder shared by the reference and coarse branches
  FeaturePyramid encode_reference(const torch::Tensor& lab_norm,
                                  FeaturePyramid::Source tag = FeaturePyramid::Source::kReference);
  StyleVector style_from_features(const FeaturePyramid& pyramid);
  torch::Tensor coarse_from_style(const torch::Tensor& L_norm, const StyleVector& style);
  // -> normalized ab planes (B,2,H,W)
  torch::Tensor coarse_colorize(const torch::Tensor& L_norm, const torch::Tensor& ref_lab_norm);

  // One differentiable pass over a prepared batch. Sparse selection is drawn
  // per sample from `rng`; labels (when given) drive the CAM class.
  TrainForward forward_train(const torch::Tensor& L_norm, const torch::Tensor& ref_lab_norm,
                             const std::optional<torch::Tensor>& labels, int64_t k, int64_t r,
                             std::mt19937_64& rng, AttendMode mode = AttendMode::kSparse);

  // Full inference pipeline; raw units. The output L plane is the input
  // target_L untouched. Requires loaded (or trained) weights.
  LabImage colorize(const torch::Tensor& target_L, const torch::Tensor& reference_rgb,
                    AttendMode mode, int64_t k, int64_t r, uint64_t selection_seed,
                    ColorizeDiagnostics* diagnostics = nullptr);

 private:
  int64_t d_ = 0;
  bool weights_ready_ = false;
};
TORCH_MODULE(SscnModel);

// (3,H,W) RGB [0,255] -> (3,H,W) float32 normalized Lab
torch::Tensor lab_norm_from_rgb(const torch::Tensor& rgb);
torch::Tensor resize_image(const torch::Tensor& img, int64_t h, int64_t w);

// Checkpoint: JSON header (config + training position) followed by named
// tensors, one flat little-endian file.
struct CheckpointMeta {
  int64_t step = 0;
  int64_t epoch = 0;
  std::vector<std::string> class_names;
};

void save_checkpoint(const std::string& path, SscnModel& model, const CheckpointMeta& meta,
                     const std::string& optimizer_blob = {});

struct LoadedCheckpoint {
  SscnModel model{nullptr};
  CheckpointMeta meta;
  nlohmann::json header;
  std::string optimizer_blob;
};

// Rebuilds the model from the header. When `expected` is given, any config
// mismatch is rejected with a per-field diff report.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::optional<ModelConfig>& expected = std::nullopt);

// Attention/selection dump: {selection: {cam, topk, random}, rows: [...]}.
nlohmann::json diagnostics_json(const ColorizeDiagnostics& diag,
                                const std::vector<int64_t>& query_filter = {});

}  // namespace sscn
