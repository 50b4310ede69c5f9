#include <cmath>
#include <random>

#include "sscn/color_space.hpp"
#include "sscn/common.hpp"
#include "sscn/warp.hpp"
#include "support.hpp"

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace sscn;

namespace {

// scalar bilinear lookup at normalized [0,1]^2 coords (align-corners)
double bilerp(const torch::Tensor& img, int64_t c, double xn, double yn) {
  const auto h = img.size(1), w = img.size(2);
  double x = xn * (w - 1), y = yn * (h - 1);
  auto x0 = static_cast<int64_t>(std::floor(x)), y0 = static_cast<int64_t>(std::floor(y));
  x0 = std::clamp<int64_t>(x0, 0, w - 2);
  y0 = std::clamp<int64_t>(y0, 0, h - 2);
  double fx = x - x0, fy = y - y0;
  auto a = img.accessor<double, 3>();
  return a[c][y0][x0] * (1 - fx) * (1 - fy) + a[c][y0][x0 + 1] * fx * (1 - fy) +
         a[c][y0 + 1][x0] * (1 - fx) * fy + a[c][y0 + 1][x0 + 1] * fx * fy;
}

double psnr255(const torch::Tensor& a, const torch::Tensor& b) {
  double mse = (a - b).square().mean().item<double>();
  return 10.0 * std::log10(255.0 * 255.0 / std::max(mse, 1e-12));
}

torch::Tensor smooth_image(int64_t size) {
  auto ramp = torch::linspace(0.0, 1.0, size, torch::kFloat64);
  auto g = torch::meshgrid({ramp, ramp}, "ij");
  auto field = 0.5 + 0.25 * torch::sin(2 * M_PI * g[1]) * torch::cos(2 * M_PI * g[0]) +
               0.2 * g[1] * g[0];
  return field.unsqueeze(0);
}

}  // namespace

TEST_CASE("zero displacement warp is pixel-identical") {
  auto img = sscn::testing::make_synth_image(1, 64, 2);
  auto warped = tps_warp(img, TpsWarpSpec::identity());
  CHECK(warped.sizes() == img.sizes());
  CHECK((warped.round() - img.round()).abs().max().item<double>() == 0.0);
  CHECK((warped - img).abs().max().item<double>() < 1e-9);
}

TEST_CASE("tps solve reproduces prescribed displacements at control points") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  // 9 control points
  auto line = torch::linspace(0.0, 1.0, 3, torch::kFloat64);
  auto g = torch::meshgrid({line, line}, "ij");
  auto pts = torch::stack({g[1].reshape(-1), g[0].reshape(-1)}, 1);
  auto vals = pts.clone();
  auto acc = vals.accessor<double, 2>();
  for (int64_t i = 0; i < vals.size(0); ++i) {
    acc[i][0] += u(rng);
    acc[i][1] += u(rng);
  }
  TpsSolver solver(pts, vals);
  CHECK(solver.residual() < 1e-8);
  auto at_pts = solver.evaluate(pts);
  CHECK((at_pts - vals).abs().max().item<double>() < 1e-8);
}

TEST_CASE("warped image shows source values at displaced control points") {
  auto img = smooth_image(128);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  auto spec = TpsWarpSpec::identity();
  auto disp = spec.displacements.accessor<double, 2>();
  for (int64_t i = 0; i < spec.displacements.size(0); ++i) {
    disp[i][0] = u(rng);
    disp[i][1] = u(rng);
  }
  auto warped = tps_warp(img, spec);
  auto cp = spec.control_points.accessor<double, 2>();
  int checked = 0;
  for (int64_t i = 0; i < spec.control_points.size(0); ++i) {
    double x = cp[i][0], y = cp[i][1];
    if (x < 0.2 || x > 0.8 || y < 0.2 || y > 0.8) {
      continue;  // skip border points where replication interferes
    }
    double wx = x + disp[i][0], wy = y + disp[i][1];
    double got = bilerp(warped, 0, wx, wy);
    double want = bilerp(img, 0, x, y);
    CHECK(std::abs(got - want) < 1e-3);
    ++checked;
  }
  CHECK(checked >= 4);
}

TEST_CASE("collinear control grid is rejected") {
  auto pts = torch::stack({torch::linspace(0.0, 1.0, 5, torch::kFloat64),
                           torch::linspace(0.0, 1.0, 5, torch::kFloat64)},
                          1);  // points on a diagonal line
  CHECK_THROWS(TpsSolver(pts, pts));
}

TEST_CASE("random_spec regimes and determinism") {
  auto rng1 = make_rng(9);
  auto rng2 = make_rng(9);
  auto s1 = random_spec(rng1, false);
  auto s2 = random_spec(rng2, false);
  CHECK(torch::equal(s1.displacements, s2.displacements));
  CHECK(torch::equal(s1.control_points, s2.control_points));

  auto rng = make_rng(10);
  for (int i = 0; i < 100; ++i) {
    auto s = random_spec(rng, false);
    CHECK(s.displacements.norm(2, 1).max().item<double>() <= 0.08 + 1e-12);
    auto v = random_spec(rng, true);
    auto norms = v.displacements.norm(2, 1);
    CHECK(norms.min().item<double>() >= 0.2 - 1e-12);
    CHECK(norms.max().item<double>() <= 0.4 + 1e-12);
  }
}

TEST_CASE("random_spec magnitudes match the uniform-range mean") {
  auto rng = make_rng(77);
  const int draws = 10000;
  double sum_n = 0, sum_v = 0;
  int64_t count = 0;
  for (int i = 0; i < draws; ++i) {
    sum_n += random_spec(rng, false).displacements.norm(2, 1).mean().item<double>();
    sum_v += random_spec(rng, true).displacements.norm(2, 1).mean().item<double>();
    ++count;
  }
  // magnitude ~ U[0,0.08]: mean 0.04, sd 0.08/sqrt(12); 16 points per draw
  double se_n = 3.0 * (0.08 / std::sqrt(12.0)) / std::sqrt(16.0 * draws);
  CHECK(std::abs(sum_n / count - 0.04) < se_n);
  double se_v = 3.0 * (0.2 / std::sqrt(12.0)) / std::sqrt(16.0 * draws);
  CHECK(std::abs(sum_v / count - 0.3) < se_v);
}

TEST_CASE("rotation identity and composition") {
  auto img = sscn::testing::make_synth_image(4, 64, 1);
  auto same = rotate(img, 0.0);
  CHECK((same - img).abs().max().item<double>() < 1e-6);

  auto r = img;
  for (int i = 0; i < 4; ++i) {
    r = rotate(r, 90.0);
  }
  CHECK(psnr255(r, img) > 40.0);
  CHECK(r.sizes() == img.sizes());
}

TEST_CASE("crop identity and resize-back") {
  auto img = sscn::testing::make_synth_image(5, 48, 3);
  auto same = crop_resize(img, 0, 0, 48, 48);
  CHECK((same - img).abs().max().item<double>() < 1e-6);

  auto rng = make_rng(15);
  for (int i = 0; i < 20; ++i) {
    auto out = random_crop(img, rng);
    CHECK(out.sizes() == img.sizes());
  }
}

TEST_CASE("training pair construction") {
  auto img = sscn::testing::make_synth_image(6, 64, 7);
  auto pair = make_training_pair_with_spec(img, TpsWarpSpec::identity(), 7);
  CHECK((pair.reference_rgb - img).abs().max().item<double>() < 1e-9);
  auto lab = rgb_to_lab(img);
  CHECK(torch::equal(pair.target_L, lab.L));
  CHECK(torch::equal(pair.gt_ab, lab.ab()));
  CHECK(pair.class_label.value() == 7);

  // identity-warp pair: ground truth equals the reference's own chroma
  auto ref_ab = rgb_to_lab(pair.reference_rgb).ab();
  CHECK((ref_ab - pair.gt_ab).abs().max().item<double>() < 1e-6);

  auto gray = torch::full({3, 32, 32}, 128.0, torch::kFloat64);
  auto rng = make_rng(1);
  CHECK_THROWS(make_training_pair(gray, rng, 0.0));
}

TEST_CASE("training pair generation is deterministic under a fixed seed") {
  auto img = sscn::testing::make_synth_image(8, 64, 2);
  auto r1 = make_rng(123);
  auto r2 = make_rng(123);
  auto p1 = make_training_pair(img, r1, 0.3);
  auto p2 = make_training_pair(img, r2, 0.3);
  CHECK(torch::equal(p1.reference_rgb, p2.reference_rgb));
  CHECK(torch::equal(p1.target_L, p2.target_L));
  CHECK(torch::equal(p1.gt_ab, p2.gt_ab));
  CHECK(p1.violent == p2.violent);
}

TEST_CASE("eval triplets: distinct references, deterministic digests") {
  auto img = sscn::testing::make_synth_image(9, 64, 4);
  const uint64_t seed = 55;
  std::vector<uint64_t> digests;
  for (auto aug : {AugType::kTps, AugType::kRotation, AugType::kCrop}) {
    auto rng = make_rng(seed);
    auto t = make_eval_triplet(img, aug, rng);
    CHECK(t.reference_rgb.sizes() == img.sizes());
    CHECK(torch::equal(t.gt_rgb, img));
    digests.push_back(triplet_digest(t));
  }
  CHECK(digests[0] != digests[1]);
  CHECK(digests[1] != digests[2]);
  CHECK(digests[0] != digests[2]);

  // regeneration reproduces the digests
  for (int i = 0; i < 3; ++i) {
    auto rng = make_rng(seed);
    auto t = make_eval_triplet(img, static_cast<AugType>(i), rng);
    CHECK(triplet_digest(t) == digests[i]);
  }
}

TEST_CASE("manifest round trip") {
  auto dir = sscn::testing::temp_dir("manifest");
  std::vector<ManifestEntry> entries = {
      {"a.png", AugType::kTps, 1},
      {"b.png", AugType::kRotation, 2},
      {"c.png", AugType::kCrop, 3},
  };
  auto path = dir + "/m.jsonl";
  write_manifest(path, entries);
  auto back = read_manifest(path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].source_path == entries[i].source_path);
    CHECK(back[i].aug == entries[i].aug);
    CHECK(back[i].seed == entries[i].seed);
  }
}
