#include "kst/metrics.hpp"
#include "kst/phantom.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace kst;
using kst::test::random_vector;

namespace {

Image image(std::size_t h, std::size_t w, std::vector<double> px) { return {h, w, std::move(px)}; }

// Sliding 11x11 window with the 2D Gaussian built directly, no separability.
double ssim_oracle(const Image& x, const Image& y) {
  const int R = 5;
  const double L = y.max(), c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  std::vector<double> w(121);
  double z = 0;
  for (int i = -R; i <= R; ++i)
    for (int j = -R; j <= R; ++j) z += w[(i + R) * 11 + j + R] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5));
  for (auto& v : w) v /= z;
  double total = 0;
  int count = 0;
  for (int r = R; r + R < int(x.height); ++r)
    for (int c = R; c + R < int(x.width); ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = -R; i <= R; ++i)
        for (int j = -R; j <= R; ++j) {
          const double k = w[(i + R) * 11 + j + R];
          const double a = x.pixels[(r + i) * x.width + c + j], b = y.pixels[(r + i) * y.width + c + j];
          mx += k * a;
          my += k * b;
          sxx += k * a * a;
          syy += k * b * b;
          sxy += k * a * b;
        }
      sxx -= mx * mx;
      syy -= my * my;
      sxy -= mx * my;
      total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("psnr follows 10 log10(MAX^2 / MSE)") {
  auto ref = image(2, 2, {0.0, 0.5, 1.0, 0.25});
  auto x = image(2, 2, {0.1, 0.5, 0.9, 0.25});
  const double mse = (0.01 + 0.01) / 4;
  CHECK(psnr(x, ref) == doctest::Approx(10 * std::log10(1.0 / mse)));
  CHECK(psnr(ref, ref) == std::numeric_limits<double>::infinity());
  CHECK_THROWS(psnr(image(1, 2, {0, 1}), ref));
}

TEST_CASE("ssim matches a direct sliding-window oracle") {
  auto a = image(24, 20, random_vector(480, 1, 0, 1));
  auto b = a;
  auto noise = random_vector(480, 2, -0.1, 0.1);
  for (std::size_t i = 0; i < 480; ++i) b.pixels[i] += noise[i];
  CHECK(ssim(b, a) == doctest::Approx(ssim_oracle(b, a)).epsilon(1e-10));
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ssim(b, a) < 1.0);
  auto w = ssim_window_1d();
  REQUIRE(w.size() == kSsimWindow);
  double s = 0;
  for (double v : w) s += v;
  CHECK(s == doctest::Approx(1.0));
  CHECK_THROWS(ssim(image(8, 8, std::vector<double>(64, 0.5)), image(8, 8, std::vector<double>(64, 0.5))));
}

TEST_CASE("magnitude image") {
  ComplexGrid g(1, 2);
  g.set(0, 0, {3.0, 4.0});
  g.set(0, 1, {0.0, -2.0});
  auto m = magnitude_image(g);
  CHECK(m.pixels[0] == 5.0);
  CHECK(m.pixels[1] == 2.0);
  CHECK(m.max() == 5.0);
}

TEST_CASE("phantoms are bounded, deterministic and indexed independently") {
  auto batch = generate_phantoms(100, 64, 64, 5);
  for (const auto& s : batch) {
    for (double v : s.image.magnitude()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-12);
    }
    CHECK(s.image.all_finite());
    CHECK(s.ellipses.size() >= 3);
    CHECK(s.ellipses.size() <= 8);
  }
  auto again = generate_phantom(64, 64, 5, 37);
  CHECK(again.image.re == batch[37].image.re);
  CHECK(again.spectrogram.im == batch[37].spectrogram.im);
  auto shifted = generate_phantoms(3, 64, 64, 5, 36);
  CHECK(shifted[1].image.re == batch[37].image.re);
  CHECK(generate_phantom(64, 64, 6, 37).image.re != batch[37].image.re);
  // Spectrogram is the centered transform of the image.
  auto f = fft2_centered(batch[0].image);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f.re[i] == batch[0].spectrogram.re[i]);
}

TEST_CASE("phantom images are complex with a smooth phase") {
  auto s = generate_phantom(32, 32, 1, 0);
  double imag = 0;
  for (double v : s.image.im) imag = std::max(imag, std::abs(v));
  CHECK(imag > 0.0);
}

TEST_CASE("psnr is 0 dB when the MSE equals MAX squared") {
  auto ref = image(1, 2, {2.0, 0.0});
  auto x = image(1, 2, {0.0, 2.0});
  CHECK(psnr(x, ref) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("ssim of an image with itself is one and its negative scores lower") {
  std::vector<double> px(16 * 16);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = ((i / 16) / 4 + (i % 16) / 4) % 2;
  auto x = image(16, 16, px);
  for (auto& v : px) v = 1.0 - v;
  auto inv = image(16, 16, px);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ssim(inv, x) < ssim(x, x));
}
