#include "sscn/evaluator.hpp"

#include <atomic>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include "sscn/common.hpp"
#include "sscn/image_io.hpp"

namespace sscn {

namespace F = torch::nn::functional;

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  TORCH_CHECK(a.sizes() == b.sizes(), "psnr shape mismatch");
  double mse =
      (a.to(torch::kFloat64) - b.to(torch::kFloat64)).square().mean().item<double>();
  if (mse <= 0.0) {
    return kPsnrCap;
  }
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

namespace {

torch::Tensor luma(const torch::Tensor& rgb) {
  auto t = rgb.to(torch::kFloat64);
  return 0.299 * t[0] + 0.587 * t[1] + 0.114 * t[2];
}

torch::Tensor gaussian_window(int64_t size, double sigma) {
  auto x = torch::arange(size, torch::kFloat64) - (size - 1) / 2.0;
  auto g = torch::exp(-x.square() / (2 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

torch::Tensor windowed_mean(const torch::Tensor& x, const torch::Tensor& win) {
  return F::conv2d(x.unsqueeze(0).unsqueeze(0), win.unsqueeze(0).unsqueeze(0))
      .squeeze(0)
      .squeeze(0);
}

}  // namespace

double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  TORCH_CHECK(a.sizes() == b.sizes(), "ssim shape mismatch");
  const int64_t win_size = 11;
  auto x = a.dim() == 3 ? luma(a) : a.to(torch::kFloat64);
  auto y = b.dim() == 3 ? luma(b) : b.to(torch::kFloat64);
  TORCH_CHECK(x.size(0) >= win_size && x.size(1) >= win_size,
              "image smaller than the ssim window");
  const double c1 = std::pow(0.01 * 255.0, 2.0);
  const double c2 = std::pow(0.03 * 255.0, 2.0);
  auto win = gaussian_window(win_size, 1.5);

  auto mu_x = windowed_mean(x, win);
  auto mu_y = windowed_mean(y, win);
  auto var_x = windowed_mean(x * x, win) - mu_x * mu_x;
  auto var_y = windowed_mean(y * y, win) - mu_y * mu_y;
  auto cov = windowed_mean(x * y, win) - mu_x * mu_y;

  auto num = (2 * mu_x * mu_y + c1) * (2 * cov + c2);
  auto den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
  return (num / den).mean().item<double>();
}

double his(const torch::Tensor& a, const torch::Tensor& b) {
  TORCH_CHECK(a.dim() == 3 && a.size(0) == 3 && b.dim() == 3 && b.size(0) == 3,
              "his expects (3,H,W) images");
  const int64_t bins = 32;
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    auto ha = torch::histc(a[c].to(torch::kFloat64), bins, 0.0, 256.0);
    auto hb = torch::histc(b[c].to(torch::kFloat64), bins, 0.0, 256.0);
    ha = ha / ha.sum();
    hb = hb / hb.sum();
    total += torch::minimum(ha, hb).sum().item<double>();
  }
  return total / 3.0;
}

uint64_t manifest_digest(const std::vector<ManifestEntry>& entries) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : entries) {
    h = fnv1a64(e.source_path.data(), e.source_path.size(), h);
    auto name = aug_type_name(e.aug);
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(&e.seed, sizeof(e.seed), h);
  }
  return h;
}

void EvalReport::validate() const {
  std::map<AugType, EvalAggregate> recompute;
  for (const auto& row : rows) {
    if (!row.ok) {
      continue;
    }
    TORCH_CHECK(row.psnr > 0.0, "psnr must be positive");
    TORCH_CHECK(row.ssim >= -1.0 && row.ssim <= 1.0, "ssim out of [-1,1]");
    auto& agg = recompute[row.aug];
    agg.psnr += row.psnr;
    agg.ssim += row.ssim;
    agg.his += row.his;
    agg.count += 1;
  }
  for (auto& [aug, agg] : recompute) {
    auto it = per_aug.find(aug);
    TORCH_CHECK(it != per_aug.end(), "aggregate missing for an aug type");
    TORCH_CHECK(std::abs(it->second.psnr - agg.psnr / agg.count) < 1e-9,
                "per-aug psnr mean mismatch");
    TORCH_CHECK(std::abs(it->second.ssim - agg.ssim / agg.count) < 1e-9,
                "per-aug ssim mean mismatch");
  }
  if (!per_aug.empty()) {
    double p = 0, s = 0;
    for (const auto& [aug, agg] : per_aug) {
      p += agg.psnr;
      s += agg.ssim;
    }
    TORCH_CHECK(std::abs(overall.psnr - p / per_aug.size()) < 1e-9, "overall psnr mismatch");
    TORCH_CHECK(std::abs(overall.ssim - s / per_aug.size()) < 1e-9, "overall ssim mismatch");
  }
}

namespace {

std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "# sscn self-augmentation evaluation\n";
  os << "# psnr_space=RGB ssim=luma-11x11-gaussian\n";
  os << "# checkpoint=" << checkpoint_tag << "\n";
  os << "# manifest_hash=" << hex64(manifest_hash) << "\n";
  os << "# coverage=" << evaluated << "/" << rows.size() << " missing=" << missing.size()
     << "\n";
  for (const auto& m : missing) {
    os << "# missing: " << m << "\n";
  }
  os << "kind,aug,source,seed,psnr_db,ssim" << (with_his ? ",his" : "") << "\n";
  for (const auto& row : rows) {
    if (!row.ok) {
      continue;
    }
    os << "image," << aug_type_name(row.aug) << "," << row.source << "," << row.seed << ","
       << fmt(row.psnr, 6) << "," << fmt(row.ssim, 6);
    if (with_his) {
      os << "," << fmt(row.his, 6);
    }
    os << "\n";
  }
  for (const auto& [aug, agg] : per_aug) {
    os << "mean," << aug_type_name(aug) << ",,," << fmt(agg.psnr, 6) << ","
       << fmt(agg.ssim, 6);
    if (with_his) {
      os << "," << fmt(agg.his, 6);
    }
    os << "\n";
  }
  os << "mean,ALL,,," << fmt(overall.psnr, 6) << "," << fmt(overall.ssim, 6);
  if (with_his) {
    os << "," << fmt(overall.his, 6);
  }
  os << "\n";
  return os.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "Self-augmentation PSNR/SSIM (higher is better)\n";
  os << std::left << std::setw(22) << "Method";
  for (const auto& [aug, agg] : per_aug) {
    os << std::setw(15) << aug_type_name(aug);
  }
  os << std::setw(15) << "Mean" << "\n";
  os << std::left << std::setw(22) << "sscn";
  for (const auto& [aug, agg] : per_aug) {
    os << std::setw(15) << (fmt(agg.psnr, 2) + "/" + fmt(agg.ssim, 3));
  }
  os << std::setw(15) << (fmt(overall.psnr, 2) + "/" + fmt(overall.ssim, 3)) << "\n";
  return os.str();
}

EvalReport evaluate(SscnModel& model, const std::vector<ManifestEntry>& entries,
                    const EvalOptions& opts) {
  TORCH_CHECK(model->weights_ready(), "evaluate requires a trained model");
  EvalReport report;
  report.rows.resize(entries.size());
  report.manifest_hash = manifest_digest(entries);
  report.checkpoint_tag = opts.checkpoint_tag;
  report.with_his = opts.with_his;

  auto run_one = [&](size_t i) {
    const auto& e = entries[i];
    EvalRow row;
    row.source = e.source_path;
    row.aug = e.aug;
    row.seed = e.seed;
    try {
      auto src = load_image_rgb(e.source_path);
      auto rng = make_rng(e.seed);
      auto triplet = make_eval_triplet(src, e.aug, rng);
      auto lab = model->colorize(triplet.target_L, triplet.reference_rgb, opts.mode, opts.k,
                                 opts.r, opts.selection_seed);
      auto pred = lab_to_rgb(lab).round().clamp(0, 255);
      auto gt = triplet.gt_rgb.round().clamp(0, 255);
      row.psnr = psnr(pred, gt);
      row.ssim = ssim(pred, gt);
      if (opts.with_his) {
        row.his = his(pred, triplet.reference_rgb.round().clamp(0, 255));
      }
      row.ok = true;
    } catch (const std::exception& ex) {
      row.ok = false;
      row.error = ex.what();
    }
    report.rows[i] = std::move(row);
  };

  const int64_t jobs = std::max<int64_t>(1, opts.jobs);
  if (jobs == 1) {
    for (size_t i = 0; i < entries.size(); ++i) {
      run_one(i);
    }
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int64_t j = 0; j < jobs; ++j) {
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < entries.size(); i = next.fetch_add(1)) {
          run_one(i);
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
  }

  for (const auto& row : report.rows) {
    if (!row.ok) {
      report.missing.push_back(row.source);
      continue;
    }
    auto& agg = report.per_aug[row.aug];
    agg.psnr += row.psnr;
    agg.ssim += row.ssim;
    agg.his += row.his;
    agg.count += 1;
    ++report.evaluated;
  }
  for (auto& [aug, agg] : report.per_aug) {
    agg.psnr /= agg.count;
    agg.ssim /= agg.count;
    agg.his /= agg.count;
  }
  if (!report.per_aug.empty()) {
    for (const auto& [aug, agg] : report.per_aug) {
      report.overall.psnr += agg.psnr;
      report.overall.ssim += agg.ssim;
      report.overall.his += agg.his;
    }
    report.overall.psnr /= report.per_aug.size();
    report.overall.ssim /= report.per_aug.size();
    report.overall.his /= report.per_aug.size();
    report.overall.count = report.evaluated;
  }
  return report;
}

}  // namespace sscn
