#pragma once

#include <map>
#include <string>
#include <vector>

#include "sscn/model.hpp"
#include "sscn/warp.hpp"

namespace sscn {

// 10 log10(255^2 / MSE) over all channels; identical images cap at 99 dB.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
inline constexpr double kPsnrCap = 99.0;

// Mean local SSIM on the luma plane, 11x11 Gaussian window (sigma 1.5),
// C1=(0.01*255)^2, C2=(0.03*255)^2. Rejects images smaller than the window.
double ssim(const torch::Tensor& a, const torch::Tensor& b);

// Histogram intersection similarity: per-channel 32-bin normalized
// histograms, summed bin minima, averaged over channels. Diagnostic only.
double his(const torch::Tensor& a, const torch::Tensor& b);

struct EvalOptions {
  AttendMode mode = AttendMode::kSparse;
  int64_t k = 256;
  int64_t r = 256;
  uint64_t selection_seed = 0;
  int64_t jobs = 1;
  bool with_his = false;
  std::string checkpoint_tag;
};

struct EvalRow {
  std::string source;
  AugType aug = AugType::kTps;
  uint64_t seed = 0;
  double psnr = 0;
  double ssim = 0;
  double his = 0;
  bool ok = false;
  std::string error;
};

struct EvalAggregate {
  double psnr = 0;
  double ssim = 0;
  double his = 0;
  int64_t count = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::map<AugType, EvalAggregate> per_aug;
  EvalAggregate overall;  // mean of the per-aug means
  uint64_t manifest_hash = 0;
  std::string checkpoint_tag;
  int64_t evaluated = 0;
  std::vector<std::string> missing;
  bool with_his = false;

  void validate() const;
  std::string to_csv() const;
  std::string to_table() const;  // Table-1-style text rendering
};

uint64_t manifest_digest(const std::vector<ManifestEntry>& entries);

// Colorizes every manifest triplet (target luminance + augmented reference)
// and scores the result against the original image. Missing sources are
// listed, not fatal. Deterministic for a fixed seed, model and manifest.
EvalReport evaluate(SscnModel& model, const std::vector<ManifestEntry>& entries,
                    const EvalOptions& opts = {});

}  // namespace sscn
