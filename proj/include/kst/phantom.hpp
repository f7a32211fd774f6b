#pragma once

#include "kst/fourier.hpp"

#include <cstdint>
#include <vector>

namespace kst {

// Axis-aligned-then-rotated ellipse in normalized image coordinates [-1, 1]^2.
struct Ellipse {
  double center_row = 0.0;
  double center_col = 0.0;
  double semi_row = 0.5;
  double semi_col = 0.5;
  double angle = 0.0;
  double intensity = 1.0;
};

// Smooth phase phi(y, x) = a*y + b*x + c*y*x + e*(y^2 + x^2) over [-1, 1]^2.
struct PhaseField {
  double a = 0.0, b = 0.0, c = 0.0, e = 0.0;
};

struct PhantomSample {
  ComplexGrid image;
  ComplexGrid spectrogram;  // fft2_centered(image)
  std::uint64_t seed = 0;
  std::size_t index = 0;
  std::vector<Ellipse> ellipses;
  PhaseField phase;
};

// Sum of 3-8 ellipses with intensities in [0.2, 1.0], Gaussian blur
// (sigma 0.8 px), rescaled to peak magnitude 1 when the sum exceeds it, times
// a smooth random phase. Sample i depends only on (seed, i).
PhantomSample generate_phantom(std::size_t height, std::size_t width, std::uint64_t seed,
                               std::size_t index);

std::vector<PhantomSample> generate_phantoms(std::size_t count, std::size_t height,
                                             std::size_t width, std::uint64_t seed,
                                             std::size_t first_index = 0);

}  // namespace kst
