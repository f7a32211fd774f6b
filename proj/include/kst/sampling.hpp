#pragma once

#include "kst/fourier.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kst {

enum class MaskKind { Uniform1D, Gaussian2D, Custom };

std::string to_string(MaskKind kind);
MaskKind mask_kind_from_string(const std::string& name);

struct MaskMeta {
  MaskKind kind = MaskKind::Custom;
  double target_acceleration = 1.0;
  std::uint64_t seed = 0;
  int offset = 0;
  double center_fraction = 0.0;
  double sigma_fraction = 0.0;
  // Uniform 1D masks sample whole columns (phase-encode along width).
  std::string axis = "columns";
};

// Binary sampling pattern over a centered H x W k-space grid.
class Mask {
 public:
  Mask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits, MaskMeta meta = {});

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  bool sampled(std::size_t r, std::size_t c) const { return bits_[r * width_ + c] != 0; }
  std::size_t count() const { return count_; }
  const MaskMeta& meta() const { return meta_; }

  static Mask all_ones(std::size_t height, std::size_t width);

 private:
  std::size_t height_, width_;
  std::vector<std::uint8_t> bits_;
  std::size_t count_ = 0;
  MaskMeta meta_;
};

// H*W / number of sampled bins.
double acceleration(const Mask& mask);

struct UniformMaskParams {
  double acceleration = 2.5;
  double center_fraction = 0.08;
  int offset = 0;
};

// Fully sampled central block of ceil(center_fraction * W) columns plus an
// evenly spaced lattice of the remaining columns, sized so the total column
// count is round(W / acceleration).
Mask make_uniform_1d_mask(std::size_t height, std::size_t width, const UniformMaskParams& p);

struct GaussianMaskParams {
  double acceleration = 5.0;
  double sigma_fraction = 0.25;
  std::uint64_t seed = 0;
};

// Independent Bernoulli draw per bin with probability
// min(1, a * exp(-|k - c|^2 / (2 sigma^2))), a calibrated so the expected
// count is H*W / acceleration. The DC bin is always sampled.
Mask make_gaussian_2d_mask(std::size_t height, std::size_t width, const GaussianMaskParams& p);

struct SampledPoint {
  double re = 0.0;
  double im = 0.0;
  double pos_row = 0.0;  // normalized, in [0, 1)
  double pos_col = 0.0;
  std::size_t row = 0;
  std::size_t col = 0;
};

// Normalized coordinate of bin (r, c) on an H x W grid: (r / H, c / W), so the
// DC bin sits at (0.5, 0.5).
std::pair<double, double> normalized_position(std::size_t r, std::size_t c, std::size_t height,
                                              std::size_t width);

struct SampledPointSet {
  std::vector<SampledPoint> points;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask_bits;

  std::size_t size() const { return points.size(); }
  // Scatters the points back onto a zero grid.
  ComplexGrid scatter() const;
};

struct MaskedSpectrogram {
  SampledPointSet points;
  ComplexGrid zero_filled;
};

MaskedSpectrogram apply_mask(const ComplexGrid& full, const Mask& mask);

}  // namespace kst
