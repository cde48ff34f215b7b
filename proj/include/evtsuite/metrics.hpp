#pragma once

// Framed quality metrics: MSE, PSNR and SSIM (11x11 Gaussian window,
// sigma 1.5, K1 = 0.01, K2 = 0.03, L = 255, valid region only).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "evtsuite/image.hpp"
#include "evtsuite/types.hpp"

namespace evtsuite {

struct FrameMetrics {
  double mse = 0.0;
  /// +infinity when mse == 0.
  double psnr_db = 0.0;
  double ssim = 0.0;

  bool psnr_is_infinite() const noexcept { return std::isinf(psnr_db); }
};

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 255.0;
};

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ArgumentError("mse: image dimensions differ");
  if (a.data.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.data.size());
}

inline double psnr_from_mse(double m) {
  if (m <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / m);
}

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    k[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable weighted sum over every valid window position.
inline std::vector<double> filter_valid(const std::vector<double>& src, int w, int h, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over the valid window positions, averaged over channels. Images
/// smaller than the window shrink it to the smaller dimension.
inline double ssim(const Image& a, const Image& b, const SsimParams& prm = {}) {
  if (!a.same_shape(b)) throw ArgumentError("ssim: image dimensions differ");
  if (a.data.empty()) return 1.0;
  const int win = std::min({prm.window, a.width, a.height});
  const auto k = detail::gaussian_kernel(win, prm.sigma);
  const double c1 = (prm.k1 * prm.dynamic_range) * (prm.k1 * prm.dynamic_range);
  const double c2 = (prm.k2 * prm.dynamic_range) * (prm.k2 * prm.dynamic_range);
  const std::size_t plane = static_cast<std::size_t>(a.width) * a.height;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = a.data[i * a.channels + c];
      y[i] = b.data[i * b.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, a.width, a.height, k);
    const auto my = detail::filter_valid(y, a.width, a.height, k);
    const auto mxx = detail::filter_valid(xx, a.width, a.height, k);
    const auto myy = detail::filter_valid(yy, a.width, a.height, k);
    const auto mxy = detail::filter_valid(xy, a.width, a.height, k);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cov = mxy[i] - mx[i] * my[i];
      sum += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / a.channels;
}

inline FrameMetrics frame_metrics(const Image& reference, const Image& candidate) {
  if (!reference.same_shape(candidate)) throw ArgumentError("frame_metrics: image dimensions differ");
  FrameMetrics m;
  m.mse = mse(reference, candidate);
  m.psnr_db = psnr_from_mse(m.mse);
  m.ssim = ssim(reference, candidate);
  return m;
}

}  // namespace evtsuite
