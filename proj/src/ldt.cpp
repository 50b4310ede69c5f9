#include "sscn/ldt.hpp"

#include <algorithm>
#include <numeric>

namespace sscn {

namespace F = torch::nn::functional;

namespace {

torch::Tensor resize_to(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) {
    return x;
  }
  return F::interpolate(
      x, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear)
             .align_corners(false));
}

torch::nn::Sequential fuse_block(int64_t in, int64_t out) {
  return torch::nn::Sequential(
      torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)),
      torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(out).affine(true)),
      torch::nn::ReLU());
}

}  // namespace

FlattenedFeatures flatten_pyramid(const FeaturePyramid& pyramid) {
  TORCH_CHECK(pyramid.levels.size() >= 4, "flatten_pyramid needs at least 4 levels");
  const int64_t h4 = pyramid.input_height() / 4;
  const int64_t w4 = pyramid.input_width() / 4;
  std::vector<torch::Tensor> parts;
  for (int i = 0; i < 4; ++i) {
    parts.push_back(resize_to(pyramid.levels[i], h4, w4));
  }
  auto stacked = torch::cat(parts, 1);  // (B, d, h4, w4)
  FlattenedFeatures out;
  out.mat = stacked.reshape({stacked.size(0), stacked.size(1), h4 * w4});
  out.h4 = h4;
  out.w4 = w4;
  out.origin = pyramid.source;
  return out;
}

torch::Tensor unflatten(const FlattenedFeatures& f) {
  return f.mat.reshape({f.mat.size(0), f.mat.size(1), f.h4, f.w4});
}

std::vector<int64_t> SparseSelection::all() const {
  std::vector<int64_t> out = topk;
  out.insert(out.end(), random.begin(), random.end());
  return out;
}

SparseSelection select_regions(const torch::Tensor& cam_scores, int64_t k, int64_t r,
                               std::mt19937_64& rng) {
  TORCH_CHECK(cam_scores.dim() == 1, "cam scores must be a flat vector");
  const int64_t n = cam_scores.size(0);
  TORCH_CHECK(k >= 0 && r >= 0 && k + r >= 1, "need at least one selected region");
  TORCH_CHECK(k + r <= n, "k+r exceeds region count");

  auto scores = cam_scores.detach().to(torch::kFloat64).contiguous();
  auto acc = scores.accessor<double, 1>();
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int64_t a, int64_t b) { return acc[a] > acc[b]; });

  SparseSelection sel;
  sel.cam = scores;
  sel.topk.assign(order.begin(), order.begin() + k);

  std::vector<char> taken(n, 0);
  for (auto i : sel.topk) {
    taken[i] = 1;
  }
  std::vector<int64_t> complement;
  complement.reserve(n - k);
  for (int64_t i = 0; i < n; ++i) {
    if (!taken[i]) {
      complement.push_back(i);
    }
  }
  sel.random.reserve(r);
  std::sample(complement.begin(), complement.end(), std::back_inserter(sel.random), r, rng);
  return sel;
}

CamClassifierImpl::CamClassifierImpl(int64_t in_channels, int64_t class_count) {
  fc = register_module("fc", torch::nn::Linear(in_channels, class_count));
}

CamClassifierImpl::Output CamClassifierImpl::forward(
    const FeaturePyramid& pyramid, const std::optional<torch::Tensor>& class_ids,
    int64_t out_h, int64_t out_w) {
  TORCH_CHECK(pyramid.levels.size() >= 5, "classifier needs pyramid level 5");
  auto feats = pyramid.levels[4];  // (B,C,h5,w5)
  auto pooled = feats.mean({2, 3});
  Output out;
  out.logits = fc(pooled);

  torch::Tensor cls;
  if (class_ids.has_value()) {
    cls = class_ids->to(torch::kInt64);
    TORCH_CHECK(cls.dim() == 1 && cls.size(0) == feats.size(0), "class ids must be (B)");
    TORCH_CHECK((cls >= 0).all().item<bool>() &&
                    (cls < fc->options.out_features()).all().item<bool>(),
                "class id out of range");
  } else {
    cls = out.logits.argmax(1);
  }
  // CAM: class-weight-weighted sum over the level-5 maps
  auto w = fc->weight.index_select(0, cls);                      // (B,C)
  auto cam = (feats * w.unsqueeze(-1).unsqueeze(-1)).sum(1, true);  // (B,1,h5,w5)
  cam = resize_to(cam, out_h, out_w);
  out.cam = cam.reshape({feats.size(0), out_h * out_w});
  return out;
}

AttentionImpl::AttentionImpl(int64_t d) {
  wq = register_module("wq", torch::nn::Linear(torch::nn::LinearOptions(d, d).bias(false)));
  wk = register_module("wk", torch::nn::Linear(torch::nn::LinearOptions(d, d).bias(false)));
  wv = register_module("wv", torch::nn::Linear(torch::nn::LinearOptions(d, d).bias(false)));
}

AttentionResult AttentionImpl::forward(const FlattenedFeatures& coarse,
                                       const FlattenedFeatures& reference,
                                       const std::optional<torch::Tensor>& key_indices) {
  TORCH_CHECK(coarse.d() == reference.d(), "query/key feature dimensions differ: ", coarse.d(),
              " vs ", reference.d());
  const auto b = coarse.mat.size(0);
  const auto d = coarse.d();

  auto queries = coarse.mat.transpose(1, 2);  // (B,R,d)
  auto keys_src = reference.mat.transpose(1, 2);
  if (key_indices.has_value()) {
    auto idx = key_indices->to(torch::kInt64);
    TORCH_CHECK(idx.dim() == 2 && idx.size(0) == b, "key indices must be (B,K)");
    TORCH_CHECK(idx.numel() == 0 || (idx.min().item<int64_t>() >= 0 &&
                                     idx.max().item<int64_t>() < reference.regions()),
                "selection index out of range");
    keys_src = keys_src.gather(1, idx.unsqueeze(-1).expand({b, idx.size(1), d}));
  }

  auto q = wq(queries);
  auto k = wk(keys_src);
  auto v = wv(keys_src);
  auto logits = torch::matmul(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(d));
  AttentionResult res;
  res.weights = torch::softmax(logits, -1);
  res.attended = torch::matmul(res.weights, v).transpose(1, 2);  // (B,d,R)
  res.stats.mac_similarity = b * q.size(1) * k.size(1) * d;
  res.stats.mac_weighted_sum = b * q.size(1) * k.size(1) * d;
  return res;
}

FusionDecoderImpl::FusionDecoderImpl(std::vector<int64_t> level_channels, int64_t d,
                                     int64_t q_bins)
    : level_channels_(std::move(level_channels)) {
  TORCH_CHECK(level_channels_.size() == 6, "expected a 6-level pyramid");
  const auto c1 = level_channels_[0], c2 = level_channels_[1], c3 = level_channels_[2],
             c4 = level_channels_[3], c5 = level_channels_[4], c6 = level_channels_[5];
  proj4 = register_module("proj4", torch::nn::Conv2d(torch::nn::Conv2dOptions(d, c4, 1)));
  proj2 = register_module("proj2", torch::nn::Conv2d(torch::nn::Conv2dOptions(d, c2, 1)));
  proj1 = register_module("proj1", torch::nn::Conv2d(torch::nn::Conv2dOptions(d, c1, 1)));
  block0 = register_module("block0", fuse_block(c5 + c6, c6));
  block1 = register_module("block1", fuse_block(c6 + c3 + c4 + c4, c4));
  block2 = register_module("block2", fuse_block(c4 + c2 + c2, c2));
  block3 = register_module("block3", fuse_block(c2 + c1 + c1, c1));
  ab_head = register_module("ab_head",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(c1, 2, 3).padding(1)));
  dist_head = register_module("dist_head",
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(c4, q_bins, 1)));
}

FusionDecoderImpl::Output FusionDecoderImpl::forward(const torch::Tensor& attended,
                                                     const FeaturePyramid& coarse) {
  TORCH_CHECK(coarse.levels.size() == 6, "fusion expects the 6-level pyramid");
  const auto h = coarse.input_height(), w = coarse.input_width();
  const auto h4 = h / 4, w4 = w / 4;
  TORCH_CHECK(attended.dim() == 4 && attended.size(2) == h4 && attended.size(3) == w4,
              "attended features must be (B,d,H/4,W/4)");

  auto l = coarse.levels;
  auto x = block0->forward(torch::cat({l[4], l[5]}, 1));  // stride 8
  x = resize_to(x, h4, w4);
  x = block1->forward(torch::cat({x, resize_to(l[2], h4, w4), l[3], proj4(attended)}, 1));
  auto dist = torch::softmax(dist_head(x), 1);

  auto h2 = h / 2, w2 = w / 2;
  x = resize_to(x, h2, w2);
  x = block2->forward(torch::cat({x, l[1], proj2(resize_to(attended, h2, w2))}, 1));
  x = resize_to(x, h, w);
  x = block3->forward(torch::cat({x, l[0], proj1(resize_to(attended, h, w))}, 1));
  Output out;
  out.ab = torch::tanh(ab_head(x));
  out.distribution = dist;
  return out;
}

}  // namespace sscn
