#include "kst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace kst {

namespace {

void require_same(const Image& x, const Image& ref) {
  if (x.height != ref.height || x.width != ref.width || x.pixels.size() != ref.pixels.size()) {
    throw DimensionError("image dimensions differ");
  }
}

// Valid-mode separable filter: output is (H - k + 1) x (W - k + 1).
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t H, std::size_t W,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size(), oh = H - k + 1, ow = W - k + 1;
  std::vector<double> rows(H * ow), out(oh * ow);
  for (std::size_t r = 0; r < H; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += taps[j] * img[r * W + c + j];
      rows[r * ow + c] = acc;
    }
  }
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k; ++j) acc += taps[j] * rows[(r + j) * ow + c];
      out[r * ow + c] = acc;
    }
  }
  return out;
}

}  // namespace

double Image::max() const {
  if (pixels.empty()) return 0.0;
  return *std::max_element(pixels.begin(), pixels.end());
}

Image magnitude_image(const ComplexGrid& g) { return {g.height, g.width, g.magnitude()}; }

double psnr(const Image& x, const Image& ref) {
  require_same(x, ref);
  double mse = 0.0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i) {
    const double d = x.pixels[i] - ref.pixels[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.pixels.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double peak = ref.max();
  return 10.0 * std::log10(peak * peak / mse);
}

std::vector<double> ssim_window_1d() {
  std::vector<double> taps(kSsimWindow);
  const double c = static_cast<double>(kSsimWindow / 2);
  double s = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - c;
    taps[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    s += taps[i];
  }
  for (auto& t : taps) t /= s;
  return taps;
}

double ssim(const Image& x, const Image& ref) {
  require_same(x, ref);
  if (x.height < kSsimWindow || x.width < kSsimWindow) {
    throw DimensionError("ssim: image smaller than the 11x11 window");
  }
  const std::size_t H = x.height, W = x.width, n = H * W;
  const auto taps = ssim_window_1d();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x.pixels[i] * x.pixels[i];
    yy[i] = ref.pixels[i] * ref.pixels[i];
    xy[i] = x.pixels[i] * ref.pixels[i];
  }
  const auto mx = filter_valid(x.pixels, H, W, taps);
  const auto my = filter_valid(ref.pixels, H, W, taps);
  const auto sxx = filter_valid(xx, H, W, taps);
  const auto syy = filter_valid(yy, H, W, taps);
  const auto sxy = filter_valid(xy, H, W, taps);
  const double L = ref.max();
  const double c1 = (kSsimK1 * L) * (kSsimK1 * L), c2 = (kSsimK2 * L) * (kSsimK2 * L);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace kst
