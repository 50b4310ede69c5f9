#include "sscn/image_io.hpp"

#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace sscn {

torch::Tensor load_image_rgb(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw std::runtime_error("cannot read image: " + path);
  }
  auto out = torch::empty({3, bgr.rows, bgr.cols}, torch::kFloat64);
  auto acc = out.accessor<double, 3>();
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      acc[0][y][x] = row[x][2];
      acc[1][y][x] = row[x][1];
      acc[2][y][x] = row[x][0];
    }
  }
  return out;
}

void save_image_rgb(const std::string& path, const torch::Tensor& rgb) {
  TORCH_CHECK(rgb.dim() == 3 && rgb.size(0) == 3, "expected (3,H,W) tensor");
  auto t = rgb.to(torch::kFloat64).clamp(0, 255).round().contiguous();
  const int h = static_cast<int>(t.size(1));
  const int w = static_cast<int>(t.size(2));
  cv::Mat bgr(h, w, CV_8UC3);
  auto acc = t.accessor<double, 3>();
  for (int y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      row[x][0] = static_cast<unsigned char>(acc[2][y][x]);
      row[x][1] = static_cast<unsigned char>(acc[1][y][x]);
      row[x][2] = static_cast<unsigned char>(acc[0][y][x]);
    }
  }
  if (!cv::imwrite(path, bgr)) {
    throw std::runtime_error("cannot write image: " + path);
  }
}

void save_ab_png16(const std::string& path, const torch::Tensor& ab) {
  TORCH_CHECK(ab.dim() == 3 && ab.size(0) == 2, "expected (2,H,W) ab tensor");
  auto t = ab.to(torch::kFloat64).contiguous();
  const int h = static_cast<int>(t.size(1));
  const int w = static_cast<int>(t.size(2));
  cv::Mat img(2 * h, w, CV_16UC1);
  auto acc = t.accessor<double, 3>();
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < h; ++y) {
      auto* row = img.ptr<uint16_t>(c * h + y);
      for (int x = 0; x < w; ++x) {
        double v = std::round((acc[c][y][x] + 128.0) * 256.0);
        row[x] = static_cast<uint16_t>(std::min(65535.0, std::max(0.0, v)));
      }
    }
  }
  if (!cv::imwrite(path, img)) {
    throw std::runtime_error("cannot write image: " + path);
  }
}

torch::Tensor load_ab_png16(const std::string& path) {
  cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (img.empty() || img.type() != CV_16UC1 || img.rows % 2 != 0) {
    throw std::runtime_error("not a 2-plane 16-bit ab image: " + path);
  }
  const int h = img.rows / 2;
  const int w = img.cols;
  auto out = torch::empty({2, h, w}, torch::kFloat64);
  auto acc = out.accessor<double, 3>();
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < h; ++y) {
      const auto* row = img.ptr<uint16_t>(c * h + y);
      for (int x = 0; x < w; ++x) {
        acc[c][y][x] = row[x] / 256.0 - 128.0;
      }
    }
  }
  return out;
}

}  // namespace sscn
