#include "sscn/color_space.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace sscn {
namespace {

// sRGB <-> XYZ (D65, 2 degree observer)
const double kRgbToXyz[9] = {0.4124564, 0.3575761, 0.1804375,   //
                             0.2126729, 0.7151522, 0.0721750,   //
                             0.0193339, 0.1191920, 0.9503041};
const double kXyzToRgb[9] = {3.2404542,  -1.5371385, -0.4985314,  //
                             -0.9692660, 1.8760108,  0.0415560,   //
                             0.0556434,  -0.2040259, 1.0572252};
const double kWhite[3] = {0.95047, 1.0, 1.08883};

torch::Tensor srgb_to_linear(const torch::Tensor& s) {
  return torch::where(s > 0.04045, torch::pow((s + 0.055) / 1.055, 2.4), s / 12.92);
}

torch::Tensor linear_to_srgb(const torch::Tensor& l) {
  return torch::where(l > 0.0031308, 1.055 * torch::pow(l.clamp_min(0), 1.0 / 2.4) - 0.055,
                      12.92 * l);
}

torch::Tensor lab_f(const torch::Tensor& t) {
  const double d = 6.0 / 29.0;
  return torch::where(t > d * d * d, torch::pow(t.clamp_min(0), 1.0 / 3.0),
                      t / (3 * d * d) + 4.0 / 29.0);
}

torch::Tensor lab_f_inv(const torch::Tensor& t) {
  const double d = 6.0 / 29.0;
  return torch::where(t > d, t * t * t, 3 * d * d * (t - 4.0 / 29.0));
}

torch::Tensor mat3(const double* m) {
  return torch::from_blob(const_cast<double*>(m), {3, 3}, torch::kFloat64).clone();
}

// ab chroma of a dense grid over the sRGB cube; used to probe the gamut.
torch::Tensor gamut_probe_ab(int64_t steps) {
  auto v = torch::linspace(0.0, 1.0, steps, torch::kFloat64);
  auto grids = torch::meshgrid({v, v, v}, "ij");
  auto rgb = torch::stack({grids[0].reshape(-1), grids[1].reshape(-1), grids[2].reshape(-1)}, 1);
  auto lin = srgb_to_linear(rgb);
  auto xyz = torch::matmul(lin, mat3(kRgbToXyz).t());
  auto white = torch::tensor({kWhite[0], kWhite[1], kWhite[2]}, torch::kFloat64);
  auto f = lab_f(xyz / white);
  auto a = 500.0 * (f.select(1, 0) - f.select(1, 1));
  auto b = 200.0 * (f.select(1, 1) - f.select(1, 2));
  return torch::stack({a, b}, 1);
}

}  // namespace

void LabImage::validate() const {
  TORCH_CHECK(L.dim() == 2 && a.sizes() == L.sizes() && b.sizes() == L.sizes(),
              "L, a, b planes must share spatial dimensions");
  TORCH_CHECK(L.min().item<double>() >= -1e-6 && L.max().item<double>() <= 100.0 + 1e-6,
              "L out of [0,100]");
  for (const auto* p : {&a, &b}) {
    double lo = p->min().item<double>(), hi = p->max().item<double>();
    TORCH_CHECK(lo >= -110.0 - 1e-6 && hi <= 110.0 + 1e-6, "chroma out of [-110,110]");
  }
}

LabImage rgb_to_lab(const torch::Tensor& rgb) {
  TORCH_CHECK(rgb.dim() == 3 && rgb.size(0) == 3,
              "rgb_to_lab expects a (3,H,W) tensor, got ", rgb.sizes());
  auto s = rgb.to(torch::kFloat64) / 255.0;
  auto lin = srgb_to_linear(s.reshape({3, -1}));
  auto xyz = torch::matmul(mat3(kRgbToXyz), lin);
  auto white = torch::tensor({kWhite[0], kWhite[1], kWhite[2]}, torch::kFloat64).view({3, 1});
  auto f = lab_f(xyz / white);
  const auto h = rgb.size(1), w = rgb.size(2);
  LabImage out;
  out.L = (116.0 * f[1] - 16.0).reshape({h, w});
  out.a = (500.0 * (f[0] - f[1])).reshape({h, w});
  out.b = (200.0 * (f[1] - f[2])).reshape({h, w});
  // conversion noise can leave L at -1e-14 for pure black; pin the range
  out.L = out.L.clamp(0.0, 100.0);
  out.a = out.a.clamp(-110.0, 110.0);
  out.b = out.b.clamp(-110.0, 110.0);
  return out;
}

torch::Tensor lab_to_rgb(const LabImage& lab) {
  auto fy = (lab.L.to(torch::kFloat64) + 16.0) / 116.0;
  auto fx = fy + lab.a.to(torch::kFloat64) / 500.0;
  auto fz = fy - lab.b.to(torch::kFloat64) / 200.0;
  auto f = torch::stack({fx.reshape(-1), fy.reshape(-1), fz.reshape(-1)}, 0);
  auto white = torch::tensor({kWhite[0], kWhite[1], kWhite[2]}, torch::kFloat64).view({3, 1});
  auto xyz = lab_f_inv(f) * white;
  auto lin = torch::matmul(mat3(kXyzToRgb), xyz);
  auto s = linear_to_srgb(lin).clamp(0.0, 1.0) * 255.0;
  return s.reshape({3, lab.height(), lab.width()});
}

AbGamut::AbGamut() {
  cell_to_bin_.fill(-1);
  auto probe = gamut_probe_ab(64);  // (N,2)

  std::vector<double> kept;
  const int64_t chunk = 8192;
  // min distance from every lattice center to the displayable set
  auto lattice = torch::empty({23 * 23, 2}, torch::kFloat64);
  {
    auto acc = lattice.accessor<double, 2>();
    int64_t i = 0;
    for (int a = -kLatticeExtent; a <= kLatticeExtent; a += kGridStep) {
      for (int b = -kLatticeExtent; b <= kLatticeExtent; b += kGridStep, ++i) {
        acc[i][0] = a;
        acc[i][1] = b;
      }
    }
  }
  auto min_d = torch::full({23 * 23}, 1e30, torch::kFloat64);
  for (int64_t off = 0; off < probe.size(0); off += chunk) {
    auto part = probe.narrow(0, off, std::min(chunk, probe.size(0) - off));
    auto d = torch::cdist(lattice, part).amin(1);
    min_d = torch::minimum(min_d, d);
  }
  auto lat_acc = lattice.accessor<double, 2>();
  auto d_acc = min_d.accessor<double, 1>();
  int16_t bin = 0;
  for (int64_t i = 0; i < 23 * 23; ++i) {
    if (d_acc[i] <= kGamutReach) {
      kept.push_back(lat_acc[i][0]);
      kept.push_back(lat_acc[i][1]);
      cell_to_bin_[i] = bin++;
    }
  }
  centers_ = torch::from_blob(kept.data(), {static_cast<int64_t>(kept.size() / 2), 2},
                              torch::kFloat64)
                 .clone();
  TORCH_CHECK(centers_.size(0) == kBins, "gamut construction produced ", centers_.size(0),
              " bins, expected ", kBins);
}

const AbGamut& AbGamut::instance() {
  static const AbGamut gamut;
  return gamut;
}

int64_t AbGamut::nearest_bin(double a, double b) const {
  auto q = torch::tensor({{a, b}}, torch::kFloat64);
  return torch::cdist(q, centers_).argmin().item<int64_t>();
}

int64_t AbGamut::bin_of_cell(double a, double b) const {
  auto ia = static_cast<int64_t>(std::llround(a / kGridStep)) + 11;
  auto ib = static_cast<int64_t>(std::llround(b / kGridStep)) + 11;
  if (ia < 0 || ia >= 23 || ib < 0 || ib >= 23) {
    return -1;
  }
  return cell_to_bin_[ia * 23 + ib];
}

void AbGamut::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write gamut csv: " + path);
  }
  auto acc = centers_.accessor<double, 2>();
  for (int64_t i = 0; i < centers_.size(0); ++i) {
    out << static_cast<int>(acc[i][0]) << "," << static_cast<int>(acc[i][1]) << "\n";
  }
}

void ColorDistribution::validate() const {
  TORCH_CHECK(probs.dim() == 3 && probs.size(2) == AbGamut::kBins,
              "ColorDistribution probs must be (H,W,Q)");
  TORCH_CHECK(probs.min().item<double>() >= 0.0, "negative probability");
  auto sums = probs.sum(2);
  TORCH_CHECK((sums - 1.0).abs().max().item<double>() < 1e-5,
              "per-pixel probabilities must sum to 1");
}

ColorDistribution encode_ab(const torch::Tensor& ab, const AbGamut& gamut) {
  TORCH_CHECK(ab.dim() == 3 && ab.size(0) == 2, "encode_ab expects (2,H,W)");
  const auto h = ab.size(1), w = ab.size(2);
  auto pts = ab.to(torch::kFloat64).reshape({2, -1}).t();  // (N,2)
  auto d2 = torch::cdist(pts, gamut.centers()).square();
  auto [vals, idx] = torch::topk(d2, kEncodeNeighbors, /*dim=*/1, /*largest=*/false);
  auto wgt = torch::exp(-vals / (2.0 * kEncodeSigma * kEncodeSigma));
  wgt = wgt / wgt.sum(1, /*keepdim=*/true);
  auto probs = torch::zeros({pts.size(0), gamut.size()}, torch::kFloat64);
  probs.scatter_(1, idx, wgt);
  return ColorDistribution{probs.reshape({h, w, gamut.size()})};
}

torch::Tensor decode_distribution(const ColorDistribution& dist, const AbGamut& gamut,
                                  double temperature) {
  TORCH_CHECK(temperature >= 0.0, "temperature must be nonnegative");
  const auto h = dist.height(), w = dist.width();
  auto p = dist.probs.to(torch::kFloat64).reshape({-1, gamut.size()});
  torch::Tensor q;
  if (temperature == 0.0) {
    q = torch::zeros_like(p);
    q.scatter_(1, p.argmax(1, /*keepdim=*/true), 1.0);
  } else {
    q = torch::pow(p, 1.0 / temperature);
    q = q / q.sum(1, /*keepdim=*/true);
  }
  auto ab = torch::matmul(q, gamut.centers());  // (N,2)
  return ab.t().reshape({2, h, w});
}

}  // namespace sscn
