#pragma once

// Reconstruction quality metrics: PSNR (capped) and single-channel SSIM
// with the usual 11x11 Gaussian window, valid-mode.

#include "drift/tensor.hpp"

namespace drift {

inline double psnr(const Tensor& x, const Tensor& ref, double data_range = 1.0) {
  if (x.shape() != ref.shape())
    op_error("psnr", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(ref.shape()));
  double mse = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    double d = x.value()[static_cast<size_t>(i)] - ref.value()[static_cast<size_t>(i)];
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(data_range * data_range / mse));
}

// treats the trailing two dims as the image; leading dims must be size 1
inline double ssim(const Tensor& x, const Tensor& ref, double data_range = 1.0) {
  if (x.shape() != ref.shape())
    op_error("ssim", "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(ref.shape()));
  if (x.rank() < 2) op_error("ssim", "need at least 2 dims");
  for (int i = 0; i + 2 < x.rank(); ++i)
    if (x.dim(i) != 1) op_error("ssim", "leading dims must be 1, got " + shape_str(x.shape()));
  int H = static_cast<int>(x.dim(x.rank() - 2)), W = static_cast<int>(x.dim(x.rank() - 1));
  const int win = 11, half = win / 2;
  if (H < win || W < win) op_error("ssim", "image smaller than the 11x11 window");

  double w[win][win], wsum = 0;
  const double sigma = 1.5;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      double di = i - half, dj = j - half;
      w[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      wsum += w[i][j];
    }
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) w[i][j] /= wsum;

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double* a = x.value().data();
  const double* b = ref.value().data();
  double acc = 0;
  int64_t count = 0;
  for (int y = half; y < H - half; ++y)
    for (int xx = half; xx < W - half; ++xx) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          double va = a[(y + i - half) * W + (xx + j - half)];
          double vb = b[(y + i - half) * W + (xx + j - half)];
          mx += w[i][j] * va;
          my += w[i][j] * vb;
          sxx += w[i][j] * va * va;
          syy += w[i][j] * vb * vb;
          sxy += w[i][j] * va * vb;
        }
      double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

}  // namespace drift
