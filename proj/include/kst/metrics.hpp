#pragma once

#include "kst/fourier.hpp"

#include <cstddef>
#include <vector>

namespace kst {

// Real-valued image, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double max() const;
};

Image magnitude_image(const ComplexGrid& g);

// 10 log10(MAX^2 / MSE) with MAX the peak of `ref`. Identical inputs give
// +infinity.
double psnr(const Image& x, const Image& ref);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

// Mean SSIM over all fully contained 11x11 Gaussian windows (sigma 1.5),
// dynamic range = peak of `ref`.
double ssim(const Image& x, const Image& ref);

// Normalized 1D Gaussian taps of the SSIM window.
std::vector<double> ssim_window_1d();

}  // namespace kst
