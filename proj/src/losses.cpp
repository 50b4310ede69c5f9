#include "sscn/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace sscn {

torch::Tensor smooth_l1(const torch::Tensor& pred, const torch::Tensor& gt, double delta) {
  TORCH_CHECK(pred.sizes() == gt.sizes(), "smooth_l1 shape mismatch: ", pred.sizes(), " vs ",
              gt.sizes());
  TORCH_CHECK(delta > 0.0, "delta must be positive");
  auto e = (pred - gt).abs();
  auto quad = 0.5 * e.square();
  auto lin = delta * e - 0.5 * delta * delta;
  return torch::where(e <= delta, quad, lin).mean();
}

torch::Tensor classification_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  TORCH_CHECK(logits.dim() == 2, "logits must be (B,N)");
  auto lab = labels.to(torch::kInt64);
  TORCH_CHECK(lab.dim() == 1 && lab.size(0) == logits.size(0), "labels must be (B)");
  TORCH_CHECK((lab >= 0).all().item<bool>() && (lab < logits.size(1)).all().item<bool>(),
              "label out of range");
  auto logp = torch::log_softmax(logits, 1);
  return -logp.gather(1, lab.unsqueeze(1)).mean();
}

torch::Tensor histogram_loss(const torch::Tensor& pred_probs, const torch::Tensor& gt_probs) {
  TORCH_CHECK(pred_probs.sizes() == gt_probs.sizes(), "distribution shape mismatch");
  TORCH_CHECK(pred_probs.dim() >= 1, "expected (...,Q) distributions");
  auto ce = -(gt_probs * torch::log(pred_probs.clamp_min(1e-8))).sum(-1);
  return ce.mean();
}

torch::Tensor tv_regularization(const torch::Tensor& ab) {
  TORCH_CHECK(ab.dim() >= 2 && ab.size(-1) >= 2 && ab.size(-2) >= 2,
              "tv needs at least 2x2 spatial extent");
  auto dv = ab.narrow(-2, 1, ab.size(-2) - 1) - ab.narrow(-2, 0, ab.size(-2) - 1);
  auto dh = ab.narrow(-1, 1, ab.size(-1) - 1) - ab.narrow(-1, 0, ab.size(-1) - 1);
  auto total = dv.square().sum() + dh.square().sum();
  return total / static_cast<double>(dv.numel() + dh.numel());
}

torch::Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
  struct Term {
    const char* name;
    const torch::Tensor& value;
    double weight;
  };
  const Term terms[] = {
      {"stage1", parts.stage1, weights.stage1}, {"stage2", parts.stage2, weights.stage2},
      {"tv", parts.tv, weights.tv},             {"cls", parts.cls, weights.cls},
      {"his", parts.his, weights.his},
  };
  torch::Tensor total;
  for (const auto& t : terms) {
    if (t.weight == 0.0 || !t.value.defined()) {
      continue;
    }
    if (!std::isfinite(t.value.item<double>())) {
      throw std::runtime_error(std::string("non-finite ") + t.name + " loss");
    }
    auto w = t.weight * t.value;
    total = total.defined() ? total + w : w;
  }
  if (!total.defined()) {
    return torch::zeros({}, torch::kFloat64);
  }
  return total;
}

}  // namespace sscn
