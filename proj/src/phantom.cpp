#include "kst/phantom.hpp"

#include "kst/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kst {

namespace {

constexpr double kBlurSigma = 0.8;

std::vector<double> gaussian_blur(const std::vector<double>& img, std::size_t H, std::size_t W) {
  const int radius = 3;
  std::vector<double> k(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (kBlurSigma * kBlurSigma));
    ksum += k[static_cast<std::size_t>(i + radius)];
  }
  for (auto& v : k) v /= ksum;
  std::vector<double> tmp(H * W, 0.0), out(H * W, 0.0);
  const auto iH = static_cast<long>(H), iW = static_cast<long>(W);
  for (long r = 0; r < iH; ++r) {
    for (long c = 0; c < iW; ++c) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const long cc = c + j;
        if (cc >= 0 && cc < iW) acc += k[static_cast<std::size_t>(j + radius)] * img[r * W + cc];
      }
      tmp[r * W + c] = acc;
    }
  }
  for (long r = 0; r < iH; ++r) {
    for (long c = 0; c < iW; ++c) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        const long rr = r + j;
        if (rr >= 0 && rr < iH) acc += k[static_cast<std::size_t>(j + radius)] * tmp[rr * W + c];
      }
      out[r * W + c] = acc;
    }
  }
  return out;
}

}  // namespace

PhantomSample generate_phantom(std::size_t height, std::size_t width, std::uint64_t seed,
                               std::size_t index) {
  if (height == 0 || width == 0) throw std::invalid_argument("phantom grid must be non-empty");
  std::mt19937_64 rng(derive_seed(seed, index));
  PhantomSample s;
  s.seed = seed;
  s.index = index;

  const int count = 3 + static_cast<int>(rng() % 6);
  for (int e = 0; e < count; ++e) {
    Ellipse el;
    if (e == 0) {
      // Body outline.
      el.center_row = uniform(rng, -0.1, 0.1);
      el.center_col = uniform(rng, -0.1, 0.1);
      el.semi_row = uniform(rng, 0.55, 0.85);
      el.semi_col = uniform(rng, 0.55, 0.85);
    } else {
      el.center_row = uniform(rng, -0.5, 0.5);
      el.center_col = uniform(rng, -0.5, 0.5);
      el.semi_row = uniform(rng, 0.08, 0.35);
      el.semi_col = uniform(rng, 0.08, 0.35);
    }
    el.angle = uniform(rng, 0.0, std::numbers::pi);
    el.intensity = uniform(rng, 0.2, 1.0);
    s.ellipses.push_back(el);
  }
  s.phase = {uniform(rng, -1.5, 1.5), uniform(rng, -1.5, 1.5), uniform(rng, -1.0, 1.0),
             uniform(rng, -1.0, 1.0)};

  std::vector<double> mag(height * width, 0.0);
  for (std::size_t r = 0; r < height; ++r) {
    const double y = 2.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(height) - 1.0;
    for (std::size_t c = 0; c < width; ++c) {
      const double x = 2.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(width) - 1.0;
      double v = 0.0;
      for (const auto& el : s.ellipses) {
        const double dy = y - el.center_row, dx = x - el.center_col;
        const double ca = std::cos(el.angle), sa = std::sin(el.angle);
        const double u = (ca * dy + sa * dx) / el.semi_row;
        const double w = (-sa * dy + ca * dx) / el.semi_col;
        if (u * u + w * w <= 1.0) v += el.intensity;
      }
      mag[r * width + c] = v;
    }
  }
  mag = gaussian_blur(mag, height, width);
  const double peak = *std::max_element(mag.begin(), mag.end());
  if (peak > 1.0) {
    for (auto& v : mag) v /= peak;
  }

  s.image = ComplexGrid(height, width);
  const auto& ph = s.phase;
  for (std::size_t r = 0; r < height; ++r) {
    const double y = 2.0 * (static_cast<double>(r) + 0.5) / static_cast<double>(height) - 1.0;
    for (std::size_t c = 0; c < width; ++c) {
      const double x = 2.0 * (static_cast<double>(c) + 0.5) / static_cast<double>(width) - 1.0;
      const double phi = ph.a * y + ph.b * x + ph.c * y * x + ph.e * (y * y + x * x);
      s.image.set(r, c, std::polar(mag[r * width + c], phi));
    }
  }
  s.spectrogram = fft2_centered(s.image);
  return s;
}

std::vector<PhantomSample> generate_phantoms(std::size_t count, std::size_t height,
                                             std::size_t width, std::uint64_t seed,
                                             std::size_t first_index) {
  if (count == 0) throw std::invalid_argument("phantom count must be >= 1");
  std::vector<PhantomSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_phantom(height, width, seed, first_index + i));
  }
  return out;
}

}  // namespace kst
