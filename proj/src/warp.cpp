#include "sscn/warp.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sscn/color_space.hpp"
#include "sscn/common.hpp"

namespace sscn {
namespace {

namespace F = torch::nn::functional;

// TPS radial kernel U(r) = r^2 log(r^2), zero at r = 0.
torch::Tensor tps_kernel(const torch::Tensor& d2) {
  return d2 * torch::log(d2.clamp_min(1e-300));
}

torch::Tensor pairwise_d2(const torch::Tensor& a, const torch::Tensor& b) {
  return torch::cdist(a, b).square();
}

void check_not_collinear(const torch::Tensor& points) {
  TORCH_CHECK(points.size(0) >= 3, "need at least 3 control points");
  auto centered = points - points.mean(0, /*keepdim=*/true);
  auto sv = torch::linalg_svdvals(centered);
  TORCH_CHECK(sv[-1].item<double>() > 1e-9 * std::max(1.0, sv[0].item<double>()),
              "degenerate control grid: points are collinear");
}

torch::Tensor sample_border(const torch::Tensor& image, const torch::Tensor& grid) {
  auto x = image.to(torch::kFloat64).unsqueeze(0);
  auto out = F::grid_sample(x, grid,
                            F::GridSampleFuncOptions()
                                .mode(torch::kBilinear)
                                .padding_mode(torch::kBorder)
                                .align_corners(true));
  return out.squeeze(0).to(image.dtype());
}

// normalized [0,1]^2 pixel-center coordinates of an HxW raster, align-corners
std::pair<torch::Tensor, torch::Tensor> pixel_coords(int64_t h, int64_t w) {
  auto xs = torch::linspace(0.0, 1.0, w, torch::kFloat64);
  auto ys = torch::linspace(0.0, 1.0, h, torch::kFloat64);
  auto grids = torch::meshgrid({ys, xs}, "ij");
  return {grids[1], grids[0]};  // (x, y), each (H,W)
}

}  // namespace

TpsWarpSpec TpsWarpSpec::identity(int grid) {
  TpsWarpSpec spec;
  auto line = torch::linspace(0.0, 1.0, grid, torch::kFloat64);
  auto g = torch::meshgrid({line, line}, "ij");
  spec.control_points = torch::stack({g[1].reshape(-1), g[0].reshape(-1)}, 1);
  spec.displacements = torch::zeros_like(spec.control_points);
  return spec;
}

TpsSolver::TpsSolver(const torch::Tensor& points, const torch::Tensor& values)
    : points_(points.to(torch::kFloat64)), values_(values.to(torch::kFloat64)) {
  check_not_collinear(points_);
  const auto n = points_.size(0);
  const auto m = values_.size(1);
  auto K = tps_kernel(pairwise_d2(points_, points_));
  auto P = torch::cat({torch::ones({n, 1}, torch::kFloat64), points_}, 1);  // (N,3)
  auto A = torch::zeros({n + 3, n + 3}, torch::kFloat64);
  A.narrow(0, 0, n).narrow(1, 0, n) = K;
  A.narrow(0, 0, n).narrow(1, n, 3) = P;
  A.narrow(0, n, 3).narrow(1, 0, n) = P.t();
  auto rhs = torch::cat({values_, torch::zeros({3, m}, torch::kFloat64)}, 0);
  coeffs_ = torch::linalg_solve(A, rhs);
}

torch::Tensor TpsSolver::evaluate(const torch::Tensor& queries) const {
  auto q = queries.to(torch::kFloat64);
  const auto n = points_.size(0);
  auto K = tps_kernel(pairwise_d2(q, points_));
  auto P = torch::cat({torch::ones({q.size(0), 1}, torch::kFloat64), q}, 1);
  return torch::matmul(K, coeffs_.narrow(0, 0, n)) +
         torch::matmul(P, coeffs_.narrow(0, n, 3));
}

double TpsSolver::residual() const {
  return (evaluate(points_) - values_).abs().max().item<double>();
}

torch::Tensor tps_warp(const torch::Tensor& image, const TpsWarpSpec& spec) {
  TORCH_CHECK(image.dim() == 3, "tps_warp expects (C,H,W)");
  const auto h = image.size(1), w = image.size(2);
  TORCH_CHECK(h >= 2 && w >= 2, "image too small to warp");

  // backward map: displaced control points look up the original locations
  auto displaced = spec.control_points + spec.displacements;
  TpsSolver solver(displaced, spec.control_points);

  auto [gx, gy] = pixel_coords(h, w);
  auto queries = torch::stack({gx.reshape(-1), gy.reshape(-1)}, 1);
  auto src = solver.evaluate(queries);  // normalized source coords
  auto grid = (src * 2.0 - 1.0).reshape({1, h, w, 2});
  return sample_border(image, grid);
}

TpsWarpSpec random_spec(std::mt19937_64& rng, bool violent) {
  auto spec = TpsWarpSpec::identity();
  spec.violent = violent;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> normal_mag(0.0, TpsWarpSpec::kNormalMaxDisp);
  std::uniform_real_distribution<double> violent_mag(TpsWarpSpec::kViolentMinDisp,
                                                     TpsWarpSpec::kViolentMaxDisp);
  auto acc = spec.displacements.accessor<double, 2>();
  for (int64_t i = 0; i < spec.displacements.size(0); ++i) {
    double th = angle(rng);
    double m = violent ? violent_mag(rng) : normal_mag(rng);
    acc[i][0] = m * std::cos(th);
    acc[i][1] = m * std::sin(th);
  }
  return spec;
}

torch::Tensor rotate(const torch::Tensor& image, double degrees) {
  TORCH_CHECK(image.dim() == 3, "rotate expects (C,H,W)");
  const auto h = image.size(1), w = image.size(2);
  const double rad = degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  auto [gx, gy] = pixel_coords(h, w);
  // pixel coordinates relative to the center, backward-rotated
  auto px = gx * static_cast<double>(w - 1) - (w - 1) / 2.0;
  auto py = gy * static_cast<double>(h - 1) - (h - 1) / 2.0;
  auto sx = c * px + s * py + (w - 1) / 2.0;
  auto sy = -s * px + c * py + (h - 1) / 2.0;
  auto grid = torch::stack({(sx / (w - 1)) * 2.0 - 1.0, (sy / (h - 1)) * 2.0 - 1.0}, -1)
                  .reshape({1, h, w, 2});
  return sample_border(image, grid);
}

torch::Tensor crop_resize(const torch::Tensor& image, int64_t y0, int64_t x0, int64_t h,
                          int64_t w) {
  TORCH_CHECK(image.dim() == 3, "crop_resize expects (C,H,W)");
  const auto H = image.size(1), W = image.size(2);
  TORCH_CHECK(y0 >= 0 && x0 >= 0 && h >= 2 && w >= 2 && y0 + h <= H && x0 + w <= W,
              "crop window out of bounds");
  auto window = image.narrow(1, y0, h).narrow(2, x0, w).to(torch::kFloat64).unsqueeze(0);
  auto out = F::interpolate(window, F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{H, W})
                                        .mode(torch::kBilinear)
                                        .align_corners(true));
  return out.squeeze(0).to(image.dtype());
}

torch::Tensor random_rotation(const torch::Tensor& image, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-45.0, 45.0);
  return rotate(image, angle(rng));
}

torch::Tensor random_crop(const torch::Tensor& image, std::mt19937_64& rng) {
  const auto H = image.size(1), W = image.size(2);
  std::uniform_real_distribution<double> scale(0.5, 1.0);
  auto h = static_cast<int64_t>(std::lround(scale(rng) * H));
  auto w = static_cast<int64_t>(std::lround(scale(rng) * W));
  h = std::min(h, H);
  w = std::min(w, W);
  std::uniform_int_distribution<int64_t> oy(0, H - h), ox(0, W - w);
  return crop_resize(image, oy(rng), ox(rng), h, w);
}

TrainingPair make_training_pair(const torch::Tensor& color_rgb, std::mt19937_64& rng,
                                double violent_prob, std::optional<int64_t> class_label) {
  std::bernoulli_distribution violent(violent_prob);
  auto spec = random_spec(rng, violent(rng));
  return make_training_pair_with_spec(color_rgb, spec, class_label);
}

TrainingPair make_training_pair_with_spec(const torch::Tensor& color_rgb,
                                          const TpsWarpSpec& spec,
                                          std::optional<int64_t> class_label) {
  auto lab = rgb_to_lab(color_rgb);
  double chroma = std::max(lab.a.abs().max().item<double>(), lab.b.abs().max().item<double>());
  TORCH_CHECK(chroma >= 0.5, "grayscale-only source rejected for training");
  TrainingPair pair;
  pair.target_L = lab.L;
  pair.gt_ab = lab.ab();
  pair.reference_rgb = tps_warp(color_rgb, spec);
  pair.class_label = class_label;
  pair.violent = spec.violent;
  return pair;
}

std::string aug_type_name(AugType t) {
  switch (t) {
    case AugType::kTps: return "TPS";
    case AugType::kRotation: return "RR";
    case AugType::kCrop: return "RC";
  }
  throw std::invalid_argument("unknown aug type");
}

AugType aug_type_from_name(const std::string& name) {
  if (name == "TPS") return AugType::kTps;
  if (name == "RR") return AugType::kRotation;
  if (name == "RC") return AugType::kCrop;
  throw std::invalid_argument("unknown aug type: " + name);
}

EvalTriplet make_eval_triplet(const torch::Tensor& color_rgb, AugType aug,
                              std::mt19937_64& rng) {
  EvalTriplet t;
  auto lab = rgb_to_lab(color_rgb);
  t.target_L = lab.L;
  t.gt_rgb = color_rgb.to(torch::kFloat64);
  switch (aug) {
    case AugType::kTps:
      t.reference_rgb = tps_warp(color_rgb, random_spec(rng, /*violent=*/false));
      break;
    case AugType::kRotation:
      t.reference_rgb = random_rotation(color_rgb, rng);
      break;
    case AugType::kCrop:
      t.reference_rgb = random_crop(color_rgb, rng);
      break;
  }
  return t;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write manifest: " + path);
  }
  for (const auto& e : entries) {
    nlohmann::json j;
    j["source_path"] = e.source_path;
    j["aug_type"] = aug_type_name(e.aug);
    j["seed"] = e.seed;
    out << j.dump() << "\n";
  }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot read manifest: " + path);
  }
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    auto j = nlohmann::json::parse(line);
    ManifestEntry e;
    e.source_path = j.at("source_path").get<std::string>();
    e.aug = aug_type_from_name(j.at("aug_type").get<std::string>());
    e.seed = j.at("seed").get<uint64_t>();
    entries.push_back(std::move(e));
  }
  return entries;
}

uint64_t triplet_digest(const EvalTriplet& t) {
  auto quantize = [](const torch::Tensor& x, double scale) {
    return (x * scale).round().clamp(0, 255).to(torch::kUInt8);
  };
  uint64_t h = tensor_digest(quantize(t.target_L, 2.55));
  h = tensor_digest(quantize(t.reference_rgb, 1.0), h);
  return tensor_digest(quantize(t.gt_rgb, 1.0), h);
}

}  // namespace sscn
