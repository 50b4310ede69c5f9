#include "sscn/gct.hpp"

namespace sscn {

namespace F = torch::nn::functional;

torch::Tensor adain(const torch::Tensor& x, const torch::Tensor& y_s,
                    const torch::Tensor& y_b, double eps) {
  TORCH_CHECK(x.dim() == 4, "adain expects (B,C,H,W)");
  auto ys = y_s.dim() == 1 ? y_s.unsqueeze(0) : y_s;
  auto yb = y_b.dim() == 1 ? y_b.unsqueeze(0) : y_b;
  TORCH_CHECK(ys.size(-1) == x.size(1) && yb.size(-1) == x.size(1),
              "style channel count must match the feature map");
  auto mu = x.mean({2, 3}, /*keepdim=*/true);
  auto var = x.var({2, 3}, /*unbiased=*/false, /*keepdim=*/true);
  auto sigma = torch::sqrt(var + eps);
  auto shape = std::vector<int64_t>{ys.size(0), x.size(1), 1, 1};
  return ys.reshape(shape) * (x - mu) / sigma + yb.reshape(shape);
}

int64_t StyleVector::total_channels() const {
  int64_t n = 0;
  for (const auto& s : scales) {
    n += s.size(-1);
  }
  return n;
}

torch::Tensor StyleVector::flat() const {
  std::vector<torch::Tensor> parts;
  for (const auto& s : scales) {
    parts.push_back(s);
  }
  for (const auto& b : biases) {
    parts.push_back(b);
  }
  return torch::cat(parts, -1);
}

StyleVector StyleVector::from_flat(const torch::Tensor& flat,
                                   const std::vector<int64_t>& site_channels) {
  int64_t total = 0;
  for (auto c : site_channels) {
    total += c;
  }
  TORCH_CHECK(flat.size(-1) == 2 * total, "style vector length mismatch");
  StyleVector sv;
  int64_t off = 0;
  for (auto c : site_channels) {
    sv.scales.push_back(flat.narrow(-1, off, c));
    off += c;
  }
  for (auto c : site_channels) {
    sv.biases.push_back(flat.narrow(-1, off, c));
    off += c;
  }
  return sv;
}

int64_t scaled_width(int64_t base, double scale) {
  return std::max<int64_t>(4, std::llround(base * scale));
}

ResidualBlockImpl::ResidualBlockImpl(int64_t in, int64_t out, int64_t stride) {
  conv1 = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
  norm1 = register_module(
      "norm1", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(out).affine(true)));
  conv2 = register_module("conv2",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
  norm2 = register_module(
      "norm2", torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(out).affine(true)));
  if (in != out || stride != 1) {
    shortcut = register_module(
        "shortcut", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride)));
  }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(norm1(conv1(x)));
  h = norm2(conv2(h));
  auto skip = shortcut ? shortcut(x) : x;
  return torch::relu(h + skip);
}

RefEncoderImpl::RefEncoderImpl(int64_t in_channels, double scale) : in_channels_(in_channels) {
  const int64_t bases[6] = {64, 128, 256, 256, 512, 512};
  const int64_t strides[6] = {1, 2, 2, 1, 2, 1};
  int64_t prev = in_channels;
  for (int i = 0; i < 6; ++i) {
    int64_t c = scaled_width(bases[i], scale);
    auto block = ResidualBlock(prev, c, strides[i]);
    blocks.push_back(block);
    register_module("block" + std::to_string(i + 1), block);
    channels_.push_back(c);
    prev = c;
  }
}

FeaturePyramid RefEncoderImpl::forward(const torch::Tensor& x, FeaturePyramid::Source tag) {
  TORCH_CHECK(x.dim() == 4 && x.size(1) == in_channels_, "encoder expects (B,", in_channels_,
              ",H,W), got ", x.sizes());
  FeaturePyramid pyr;
  pyr.source = tag;
  auto h = x;
  for (auto& block : blocks) {
    h = block->forward(h);
    pyr.levels.push_back(h);
  }
  return pyr;
}

GrayEncoderImpl::GrayEncoderImpl(double scale) {
  const int64_t bases[5] = {64, 128, 256, 512, 512};
  int64_t prev = 1;
  for (int i = 0; i < 5; ++i) {
    int64_t c = scaled_width(bases[i], scale);
    auto c1 = torch::nn::Conv2d(torch::nn::Conv2dOptions(prev, c, 3).padding(1));
    auto c2 = torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 3).padding(1));
    convs->push_back(c1);
    convs->push_back(c2);
    channels_.push_back(c);
    prev = c;
  }
  register_module("convs", convs);
}

std::vector<torch::Tensor> GrayEncoderImpl::forward(const torch::Tensor& x) {
  TORCH_CHECK(x.dim() == 4 && x.size(1) == 1, "gray encoder expects (B,1,H,W)");
  std::vector<torch::Tensor> taps;
  auto h = x;
  for (size_t i = 0; i < channels_.size(); ++i) {
    if (i > 0) {
      h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
    }
    h = torch::relu(convs[2 * i]->as<torch::nn::Conv2d>()->forward(h));
    h = torch::relu(convs[2 * i + 1]->as<torch::nn::Conv2d>()->forward(h));
    taps.push_back(h);
  }
  return taps;
}

StyleMlpImpl::StyleMlpImpl(int64_t in_dim, std::vector<int64_t> site_channels, int64_t hidden)
    : site_channels_(std::move(site_channels)) {
  fc1 = register_module("fc1", torch::nn::Linear(in_dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, hidden));
  fc3 = register_module("fc3", torch::nn::Linear(hidden, output_dim()));
  // start near the pure-normalization style: scales 1, biases 0
  torch::NoGradGuard ng;
  fc3->weight.normal_(0.0, 1e-4);
  int64_t total = output_dim() / 2;
  fc3->bias.narrow(0, 0, total).fill_(1.0);
  fc3->bias.narrow(0, total, total).fill_(0.0);
}

int64_t StyleMlpImpl::output_dim() const {
  int64_t total = 0;
  for (auto c : site_channels_) {
    total += c;
  }
  return 2 * total;
}

StyleVector StyleMlpImpl::forward(const torch::Tensor& pooled) {
  auto h = torch::relu(fc1(pooled));
  h = torch::relu(fc2(h));
  return StyleVector::from_flat(fc3(h), site_channels_);
}

GctDecoderImpl::GctDecoderImpl(double scale) {
  const int64_t bases[6] = {512, 512, 256, 128, 64, 64};
  for (int i = 0; i < 5; ++i) {
    int64_t in = scaled_width(bases[i], scale);
    int64_t out = scaled_width(bases[i + 1], scale);
    convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
    adain_channels_.push_back(out);
  }
  register_module("convs", convs);
  head = register_module(
      "head", torch::nn::Conv2d(torch::nn::Conv2dOptions(adain_channels_.back(), 2, 3).padding(1)));
}

torch::Tensor GctDecoderImpl::forward(const torch::Tensor& deep, const StyleVector& style) {
  TORCH_CHECK(style.scales.size() == adain_channels_.size(), "style vector has ",
              style.scales.size(), " sites, decoder has ", adain_channels_.size());
  auto h = deep;
  for (size_t i = 0; i < adain_channels_.size(); ++i) {
    h = convs[i]->as<torch::nn::Conv2d>()->forward(h);
    h = torch::relu(adain(h, style.scales[i], style.biases[i]));
    if (i + 1 < adain_channels_.size()) {
      h = F::interpolate(h, F::InterpolateFuncOptions()
                                .scale_factor(std::vector<double>{2.0, 2.0})
                                .mode(torch::kBilinear)
                                .align_corners(false));
    }
  }
  return torch::tanh(head(h));
}

}  // namespace sscn
