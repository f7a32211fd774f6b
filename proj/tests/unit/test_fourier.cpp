#include "kst/fourier.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>

using namespace kst;
using kst::test::random_vector;

namespace {

ComplexGrid random_grid(std::size_t h, std::size_t w, std::uint64_t seed) {
  ComplexGrid g(h, w);
  g.re = random_vector(h * w, seed);
  g.im = random_vector(h * w, seed + 1000);
  return g;
}

double max_diff(const ComplexGrid& a, const ComplexGrid& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(std::complex<double>(a.re[i] - b.re[i], a.im[i] - b.im[i])));
  }
  return m;
}

double norm(const ComplexGrid& g) {
  double s = 0;
  for (std::size_t i = 0; i < g.size(); ++i) s += g.re[i] * g.re[i] + g.im[i] * g.im[i];
  return std::sqrt(s);
}

ComplexGrid conj(ComplexGrid g) {
  for (auto& v : g.im) v = -v;
  return g;
}

}  // namespace

TEST_CASE("centered FFT agrees with the naive DFT on square and rectangular grids") {
  for (std::size_t h : {1u, 2u, 4u, 8u, 16u})
    for (std::size_t w : {2u, 4u, 8u, 16u}) {
      auto g = random_grid(h, w, h * 100 + w);
      CHECK(max_diff(fft2_centered(g), dft2_naive(g)) < 1e-10);
    }
}

TEST_CASE("impulse at the center transforms to a constant") {
  ComplexGrid g(8, 8);
  g.set(4, 4, 1.0);
  auto f = fft2_centered(g);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(std::abs(f.re[i] - 1.0 / 8.0) < 1e-12);
    CHECK(std::abs(f.im[i]) < 1e-12);
  }
}

TEST_CASE("constant 2x2 grid transforms to a scaled center impulse") {
  ComplexGrid g(2, 2);
  for (auto& v : g.re) v = 3.0;
  auto f = fft2_centered(g);
  CHECK(f.at(1, 1).real() == doctest::Approx(6.0));
  CHECK(std::abs(f.at(0, 0)) < 1e-12);
  CHECK(std::abs(f.at(0, 1)) < 1e-12);
  CHECK(std::abs(f.at(1, 0)) < 1e-12);
  CHECK(max_diff(ifft2_centered(f), g) < 1e-12);
}

TEST_CASE("zero grid stays zero") {
  ComplexGrid g(4, 8);
  auto f = fft2_centered(g);
  CHECK(norm(f) == 0.0);
  CHECK(hermitian_symmetry_error(g) == 0.0);
}

TEST_CASE("round trip, Parseval, linearity, conjugation identity") {
  auto x = random_grid(16, 16, 1), y = random_grid(16, 16, 2);
  auto fx = fft2_centered(x), fy = fft2_centered(y);
  CHECK(max_diff(ifft2_centered(fx), x) < 1e-10);
  CHECK(std::abs(norm(fx) - norm(x)) < 1e-9 * norm(x));
  // conj(fft(conj(X))) is the inverse transform.
  CHECK(max_diff(conj(fft2_centered(conj(fx))), ifft2_centered(fx)) < 1e-10);
  const double a = 0.7, b = -1.3;
  ComplexGrid lin(16, 16);
  for (std::size_t i = 0; i < lin.size(); ++i) {
    lin.re[i] = a * x.re[i] + b * y.re[i];
    lin.im[i] = a * x.im[i] + b * y.im[i];
  }
  auto fl = fft2_centered(lin);
  for (std::size_t i = 0; i < lin.size(); ++i) {
    CHECK(std::abs(fl.re[i] - (a * fx.re[i] + b * fy.re[i])) < 1e-10);
    CHECK(std::abs(fl.im[i] - (a * fx.im[i] + b * fy.im[i])) < 1e-10);
  }
}

TEST_CASE("adjoint identity <fft x, y> = <x, ifft y>") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto x = random_grid(8, 16, 10 + s), y = random_grid(8, 16, 20 + s);
    auto fx = fft2_centered(x), iy = ifft2_centered(y);
    std::complex<double> lhs, rhs;
    for (std::size_t i = 0; i < x.size(); ++i) {
      lhs += std::complex<double>(fx.re[i], fx.im[i]) * std::conj(std::complex<double>(y.re[i], y.im[i]));
      rhs += std::complex<double>(x.re[i], x.im[i]) * std::conj(std::complex<double>(iy.re[i], iy.im[i]));
    }
    CHECK(std::abs(lhs - rhs) < 1e-9);
  }
}

TEST_CASE("hermitian symmetry of real and imaginary images") {
  ComplexGrid real(8, 8);
  real.re = random_vector(64, 3);
  auto f = fft2_centered(real);
  CHECK(hermitian_symmetry_error(f) < 1e-10);

  ComplexGrid imag(8, 8);
  imag.im = real.re;
  auto fi = fft2_centered(imag);
  double peak = 0;
  for (double m : fi.magnitude()) peak = std::max(peak, m);
  CHECK(hermitian_symmetry_error(fi) == doctest::Approx(2 * peak).epsilon(1e-9));
}

TEST_CASE("non power of two sizes are rejected") {
  CHECK_THROWS(fft2_centered(ComplexGrid(6, 8)));
  CHECK_THROWS(ifft2_centered(ComplexGrid(8, 12)));
  CHECK_THROWS(dft2_naive(ComplexGrid(64, 64)));
}

TEST_CASE("tensor transforms match the grid transforms and backprop through the adjoint") {
  auto g = random_grid(8, 8, 7);
  auto t = grid_to_tensor<double>(g);
  t.set_requires_grad(true);
  auto f = fft2_centered(t);
  CHECK(max_diff(tensor_to_grid(f), fft2_centered(g)) < 1e-12);
  CHECK(max_diff(tensor_to_grid(ifft2_centered(t)), ifft2_centered(g)) < 1e-12);

  // d/dx <fft(x), w> over the real channels equals the adjoint applied to w.
  auto w = random_grid(8, 8, 8);
  backward(sum(mul(f, grid_to_tensor<double>(w))));
  auto adj = ifft2_centered(w);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(t.grad()[i] == doctest::Approx(adj.re[i]).epsilon(1e-10));
    CHECK(t.grad()[64 + i] == doctest::Approx(adj.im[i]).epsilon(1e-10));
  }
}

TEST_CASE("single precision stays close to the double transform") {
  auto g = random_grid(16, 16, 9);
  auto t = grid_to_tensor<float>(g);
  auto f = tensor_to_grid(fft2_centered(t));
  CHECK(max_diff(f, fft2_centered(g)) < 1e-5);
}
