#pragma once

#include <torch/torch.h>

namespace sscn {

struct LossWeights {
  double stage1 = 100.0;
  double stage2 = 100.0;
  double tv = 10.0;
  double cls = 0.1;
  double his = 1.0;
  double delta = 1.0;  // smooth-L1 threshold, normalized ab units
};

// 0.5 e^2 inside |e| <= delta, delta |e| - 0.5 delta^2 outside; mean reduced.
torch::Tensor smooth_l1(const torch::Tensor& pred, const torch::Tensor& gt, double delta = 1.0);

// Softmax cross entropy, mean over the batch. labels (B) int64.
torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels);

// Per-pixel cross entropy between color distributions laid out (...,Q);
// summed over bins, averaged over pixels. log floored at 1e-8.
torch::Tensor histogram_loss(const torch::Tensor& pred_probs, const torch::Tensor& gt_probs);

// Mean of squared horizontal plus squared vertical neighbor differences over
// the trailing two (spatial) dimensions.
torch::Tensor tv_regularization(const torch::Tensor& ab);

// Raw loss terms; undefined tensors mean "not computed this step".
struct LossParts {
  torch::Tensor stage1;
  torch::Tensor stage2;
  torch::Tensor tv;
  torch::Tensor cls;
  torch::Tensor his;
};

// Weighted total. Zero-weight terms are excluded from the graph; a non-finite
// part aborts with a diagnostic naming the term.
torch::Tensor total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace sscn
