#pragma once

// Fidelity metrics on [0, 1] grayscale images stored as [H x W] tensors.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dcag/error.hpp"
#include "dcag/tensor.hpp"

namespace dcag {

using Image = Tensor;

inline constexpr double kPsnrCapDb = 100.0;
inline constexpr double kPsnrMseFloor = 1e-10;

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline void require_same_image(const Image& a, const Image& b, const char* op) {
  require_rank(a, 2, op);
  require_same_shape(a, b, op);
}

}  // namespace detail

inline double mse(const Image& a, const Image& b) {
  detail::require_same_image(a, b, "mse");
  if (a.size() == 0) throw ShapeError("mse: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

/// 10 log10(1 / mse) for unit peak; saturates at kPsnrCapDb once mse < 1e-10.
inline double psnr_from_mse(double m) {
  if (m < kPsnrMseFloor) return kPsnrCapDb;
  return 10.0 * std::log10(1.0 / m);
}

inline double psnr(const Image& a, const Image& b) { return psnr_from_mse(mse(a, b)); }

/// Normalized 1-D Gaussian taps; the 2-D SSIM window is their outer product.
inline std::vector<double> gaussian_taps(std::size_t size = kSsimWindow, double sigma = kSsimSigma) {
  std::vector<double> taps(size);
  const double center = static_cast<double>(size - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - center;
    taps[i] = std::exp(-(x * x) / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

namespace detail {

/// "Valid" separable filtering: [H x W] -> [(H-n+1) x (W-n+1)].
inline Tensor filter_valid(const Tensor& x, const std::vector<double>& taps) {
  const std::size_t n = taps.size();
  const std::size_t h = x.dim(0), w = x.dim(1);
  const std::size_t oh = h - n + 1, ow = w - n + 1;
  Tensor rows({h, ow});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += taps[k] * x(i, j + k);
      rows(i, j) = acc;
    }
  }
  Tensor out({oh, ow});
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += taps[k] * rows(i + k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), valid window
/// positions only, averaged over the SSIM map.
inline double ssim(const Image& a, const Image& b) {
  detail::require_same_image(a, b, "ssim");
  if (a.dim(0) < kSsimWindow || a.dim(1) < kSsimWindow) {
    throw ShapeError("ssim: image " + shape_to_string(a.shape()) + " smaller than the " +
                     std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) + " window");
  }
  const auto taps = gaussian_taps();
  Tensor aa(a.shape()), bb(a.shape()), ab(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Tensor mu_a = detail::filter_valid(a, taps);
  const Tensor mu_b = detail::filter_valid(b, taps);
  const Tensor e_aa = detail::filter_valid(aa, taps);
  const Tensor e_bb = detail::filter_valid(bb, taps);
  const Tensor e_ab = detail::filter_valid(ab, taps);

  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double var_a = e_aa[i] - ma * ma;
    const double var_b = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    acc += ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
           ((ma * ma + mb * mb + kSsimC1) * (var_a + var_b + kSsimC2));
  }
  return acc / static_cast<double>(mu_a.size());
}

}  // namespace dcag
