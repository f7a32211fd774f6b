#pragma once

#include "kst/tensor.hpp"

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace kst {

// Complex H x W grid held as two real channels. Used for spectrograms and
// complex images alike.
struct ComplexGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> re;
  std::vector<double> im;

  ComplexGrid() = default;
  ComplexGrid(std::size_t h, std::size_t w) : height(h), width(w), re(h * w, 0.0), im(h * w, 0.0) {}

  std::size_t size() const { return height * width; }
  std::complex<double> at(std::size_t r, std::size_t c) const {
    return {re[r * width + c], im[r * width + c]};
  }
  void set(std::size_t r, std::size_t c, std::complex<double> v) {
    re[r * width + c] = v.real();
    im[r * width + c] = v.imag();
  }
  std::vector<double> magnitude() const;
  bool all_finite() const;
};

bool is_power_of_two(std::size_t n);

// Orthonormal DFT with the zero frequency at index (H/2, W/2). Both
// dimensions must be powers of two.
ComplexGrid fft2_centered(const ComplexGrid& g);
ComplexGrid ifft2_centered(const ComplexGrid& g);

// Direct double-sum transform with the same scaling and centering. Limited to
// 32 x 32 grids.
ComplexGrid dft2_naive(const ComplexGrid& g);

// max_k |g[k] - conj(g[-k])| with k measured from the center bin.
double hermitian_symmetry_error(const ComplexGrid& g);

// In-place centered transform on split real/imaginary planes of one H x W grid.
template <typename T>
void fft2_centered_inplace(std::span<T> re, std::span<T> im, std::size_t height, std::size_t width,
                           bool inverse);

// Differentiable transforms on [2, H, W] tensors (channel 0 real, 1 imag).
// The backward pass of each is the other, as the transform is unitary.
template <typename T>
Tensor<T> fft2_centered(const Tensor<T>& x);
template <typename T>
Tensor<T> ifft2_centered(const Tensor<T>& x);

template <typename T>
Tensor<T> grid_to_tensor(const ComplexGrid& g);
template <typename T>
ComplexGrid tensor_to_grid(const Tensor<T>& x);

}  // namespace kst
