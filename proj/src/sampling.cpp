#include "kst/sampling.hpp"

#include "kst/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kst {

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::Uniform1D:
      return "uniform1d";
    case MaskKind::Gaussian2D:
      return "gaussian2d";
    case MaskKind::Custom:
      return "custom";
  }
  return "custom";
}

MaskKind mask_kind_from_string(const std::string& name) {
  if (name == "uniform1d") return MaskKind::Uniform1D;
  if (name == "gaussian2d") return MaskKind::Gaussian2D;
  if (name == "custom") return MaskKind::Custom;
  throw std::invalid_argument("unknown mask kind '" + name + "'");
}

Mask::Mask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits, MaskMeta meta)
    : height_(height), width_(width), bits_(std::move(bits)), meta_(std::move(meta)) {
  if (bits_.size() != height_ * width_) {
    throw DimensionError("mask data length does not match " + std::to_string(height_) + "x" +
                         std::to_string(width_));
  }
  for (auto& b : bits_) {
    if (b > 1) throw std::invalid_argument("mask entries must be 0 or 1");
  }
  if (height_ == 0 || width_ == 0) throw DimensionError("empty mask");
  if (bits_[(height_ / 2) * width_ + width_ / 2] != 1) {
    throw std::invalid_argument("mask must sample the DC bin");
  }
  count_ = static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Mask Mask::all_ones(std::size_t height, std::size_t width) {
  MaskMeta meta;
  meta.kind = MaskKind::Custom;
  return Mask(height, width, std::vector<std::uint8_t>(height * width, 1), meta);
}

double acceleration(const Mask& mask) {
  return static_cast<double>(mask.height() * mask.width()) / static_cast<double>(mask.count());
}

Mask make_uniform_1d_mask(std::size_t height, std::size_t width, const UniformMaskParams& p) {
  if (!(p.acceleration >= 1.0)) throw std::invalid_argument("acceleration must be >= 1");
  if (!(p.center_fraction >= 0.0 && p.center_fraction < 1.0)) {
    throw std::invalid_argument("center_fraction must lie in [0, 1)");
  }
  const long lattice = std::lround(p.acceleration);
  if (p.offset < 0 || p.offset >= lattice) {
    throw std::invalid_argument("offset must lie in [0, round(acceleration))");
  }
  const auto W = static_cast<long>(width);
  const long total = std::max(1L, std::lround(static_cast<double>(W) / p.acceleration));
  const long center =
      std::max(1L, static_cast<long>(std::ceil(p.center_fraction * static_cast<double>(W) - 1e-9)));
  if (center > total) {
    throw std::invalid_argument("center block of " + std::to_string(center) +
                                " columns exceeds the budget of " + std::to_string(total) +
                                " columns at acceleration " + std::to_string(p.acceleration));
  }
  std::vector<std::uint8_t> columns(width, 0);
  const long c0 = W / 2 - center / 2;
  for (long c = c0; c < c0 + center; ++c) columns[static_cast<std::size_t>(c)] = 1;

  std::vector<std::size_t> outside;
  for (std::size_t c = 0; c < width; ++c) {
    if (!columns[c]) outside.push_back(c);
  }
  const long remaining = total - center;
  if (remaining > 0) {
    const double spacing =
        static_cast<double>(outside.size()) / static_cast<double>(remaining);
    const double phase = static_cast<double>(p.offset) / static_cast<double>(lattice);
    for (long j = 0; j < remaining; ++j) {
      const auto idx =
          static_cast<std::size_t>(std::floor((static_cast<double>(j) + phase) * spacing));
      columns[outside[std::min(idx, outside.size() - 1)]] = 1;
    }
  }

  std::vector<std::uint8_t> bits(height * width, 0);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) bits[r * width + c] = columns[c];
  }
  MaskMeta meta;
  meta.kind = MaskKind::Uniform1D;
  meta.target_acceleration = p.acceleration;
  meta.offset = p.offset;
  meta.center_fraction = p.center_fraction;
  return Mask(height, width, std::move(bits), meta);
}

Mask make_gaussian_2d_mask(std::size_t height, std::size_t width, const GaussianMaskParams& p) {
  if (!(p.acceleration >= 1.0)) throw std::invalid_argument("acceleration must be >= 1");
  if (!(p.sigma_fraction > 0.0)) throw std::invalid_argument("sigma_fraction must be > 0");
  const std::size_t n = height * width;
  const double target = static_cast<double>(n) / p.acceleration;
  if (target > static_cast<double>(n)) {
    throw std::invalid_argument("infeasible calibration: required probability exceeds 1");
  }
  const double sigma = p.sigma_fraction * static_cast<double>(std::min(height, width));
  std::vector<double> weight(n);
  const double hc = static_cast<double>(height / 2), wc = static_cast<double>(width / 2);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double dr = static_cast<double>(r) - hc, dc = static_cast<double>(c) - wc;
      weight[r * width + c] = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
    }
  }
  auto expected = [&](double a) {
    double s = 0.0;
    for (double w : weight) s += std::min(1.0, a * w);
    return s;
  };
  std::vector<double> prob(n, 1.0);
  if (target < static_cast<double>(n)) {
    const double wsum = std::accumulate(weight.begin(), weight.end(), 0.0);
    const double wmin = *std::min_element(weight.begin(), weight.end());
    double lo = std::log(target / wsum), hi = std::log(1.0 / wmin);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (expected(std::exp(mid)) < target ? lo : hi) = mid;
    }
    const double a = std::exp(0.5 * (lo + hi));
    for (std::size_t i = 0; i < n; ++i) prob[i] = std::min(1.0, a * weight[i]);
  }
  std::mt19937_64 rng(p.seed);
  std::vector<std::uint8_t> bits(n, 0);
  for (std::size_t i = 0; i < n; ++i) bits[i] = uniform01(rng) < prob[i] ? 1 : 0;
  bits[(height / 2) * width + width / 2] = 1;

  MaskMeta meta;
  meta.kind = MaskKind::Gaussian2D;
  meta.target_acceleration = p.acceleration;
  meta.seed = p.seed;
  meta.sigma_fraction = p.sigma_fraction;
  meta.axis = "both";
  return Mask(height, width, std::move(bits), meta);
}

std::pair<double, double> normalized_position(std::size_t r, std::size_t c, std::size_t height,
                                              std::size_t width) {
  return {static_cast<double>(r) / static_cast<double>(height),
          static_cast<double>(c) / static_cast<double>(width)};
}

ComplexGrid SampledPointSet::scatter() const {
  ComplexGrid g(height, width);
  for (const auto& pt : points) {
    g.re[pt.row * width + pt.col] = pt.re;
    g.im[pt.row * width + pt.col] = pt.im;
  }
  return g;
}

MaskedSpectrogram apply_mask(const ComplexGrid& full, const Mask& mask) {
  if (full.height != mask.height() || full.width != mask.width()) {
    throw DimensionError("apply_mask: grid " + std::to_string(full.height) + "x" +
                         std::to_string(full.width) + " vs mask " + std::to_string(mask.height()) +
                         "x" + std::to_string(mask.width()));
  }
  MaskedSpectrogram out;
  out.zero_filled = ComplexGrid(full.height, full.width);
  out.points.height = full.height;
  out.points.width = full.width;
  out.points.mask_bits = mask.bits();
  out.points.points.reserve(mask.count());
  for (std::size_t r = 0; r < full.height; ++r) {
    for (std::size_t c = 0; c < full.width; ++c) {
      if (!mask.sampled(r, c)) continue;
      const std::size_t i = r * full.width + c;
      out.zero_filled.re[i] = full.re[i];
      out.zero_filled.im[i] = full.im[i];
      auto [pr, pc] = normalized_position(r, c, full.height, full.width);
      out.points.points.push_back({full.re[i], full.im[i], pr, pc, r, c});
    }
  }
  return out;
}

}  // namespace kst
