#pragma once

#include <vector>

#include <torch/torch.h>

namespace sscn {

// Multi-level feature maps from an encoder, shallow to deep.
struct FeaturePyramid {
  enum class Source { kReference, kCoarse };
  std::vector<torch::Tensor> levels;  // each (B,C,H,W)
  Source source = Source::kReference;

  int64_t input_height() const { return levels.at(0).size(2); }
  int64_t input_width() const { return levels.at(0).size(3); }
};

// Adaptive instance normalization: per-channel spatial statistics replaced by
// the supplied scale/bias. x is (B,C,H,W); y_s/y_b are (B,C) or (C).
torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& y_s,
                    const torch::Tensor& y_b, double eps = 1e-5);

// Per-AdaIN-site affine parameters.
struct StyleVector {
  std::vector<torch::Tensor> scales;  // (B,C_site)
  std::vector<torch::Tensor> biases;

  int64_t total_channels() const;
  torch::Tensor flat() const;  // (B, 2*total): all scales then all biases
  static StyleVector from_flat(const torch::Tensor& flat,
                               const std::vector<int64_t>& site_channels);
};

int64_t scaled_width(int64_t base, double scale);

struct ResidualBlockImpl : torch::nn::Module {
  ResidualBlockImpl(int64_t in, int64_t out, int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d shortcut{nullptr};  // null when shapes already match
};
TORCH_MODULE(ResidualBlock);

// Six-residual-block encoder shared by the reference and coarse-result
// branches; strides {1,2,2,1,2,1} give level sizes {1,1/2,1/4,1/4,1/8,1/8}.
struct RefEncoderImpl : torch::nn::Module {
  RefEncoderImpl(int64_t in_channels, double scale);
  FeaturePyramid forward(const torch::Tensor& x, FeaturePyramid::Source tag);
  const std::vector<int64_t>& level_channels() const { return channels_; }

  std::vector<ResidualBlock> blocks;
  std::vector<int64_t> channels_;
  int64_t in_channels_ = 3;
};
TORCH_MODULE(RefEncoder);

// VGG19-style sublayers (the two lead convolutions of each of the five
// blocks) adapted to 1-channel input; taps after each block.
struct GrayEncoderImpl : torch::nn::Module {
  explicit GrayEncoderImpl(double scale);
  std::vector<torch::Tensor> forward(const torch::Tensor& x);  // 5 taps
  const std::vector<int64_t>& tap_channels() const { return channels_; }

  torch::nn::ModuleList convs;
  std::vector<int64_t> channels_;
};
TORCH_MODULE(GrayEncoder);

// Pooled deep reference features -> per-site AdaIN parameters.
struct StyleMlpImpl : torch::nn::Module {
  StyleMlpImpl(int64_t in_dim, std::vector<int64_t> site_channels, int64_t hidden = 256);
  StyleVector forward(const torch::Tensor& pooled);  // pooled (B,in_dim)
  int64_t output_dim() const;

  torch::nn::Linear fc1{nullptr}, fc2{nullptr}, fc3{nullptr};
  std::vector<int64_t> site_channels_;
};
TORCH_MODULE(StyleMlp);

// Decoder mirroring the gray encoder; AdaIN follows every convolution.
struct GctDecoderImpl : torch::nn::Module {
  explicit GctDecoderImpl(double scale);
  torch::Tensor forward(const torch::Tensor& deep, const StyleVector& style);  // -> ab in [-1,1]
  const std::vector<int64_t>& adain_channels() const { return adain_channels_; }

  torch::nn::ModuleList convs;
  torch::nn::Conv2d head{nullptr};
  std::vector<int64_t> adain_channels_;
};
TORCH_MODULE(GctDecoder);

}  // namespace sscn
