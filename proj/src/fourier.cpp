#include "kst/fourier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kst {

namespace {

void require_pow2(std::size_t h, std::size_t w) {
  if (!is_power_of_two(h) || !is_power_of_two(w)) {
    throw DimensionError("centered FFT needs power-of-two dimensions, got " + std::to_string(h) +
                         "x" + std::to_string(w));
  }
}

// Iterative radix-2 Cooley-Tukey on a strided 1D sequence. Unscaled; the
// caller applies 1/sqrt(N).
template <typename T>
class Radix2 {
 public:
  explicit Radix2(std::size_t n) : n_(n), rev_(n), cos_(n / 2), sin_(n / 2) {
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      rev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      cos_[k] = static_cast<T>(std::cos(a));
      sin_[k] = static_cast<T>(std::sin(a));
    }
  }

  // Transforms buf (length n, interleaved scratch) in place.
  void run(T* re, T* im, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t j = rev_[i];
      if (j > i) {
        std::swap(re[i], re[j]);
        std::swap(im[i], im[j]);
      }
    }
    const T sign = inverse ? T(-1) : T(1);
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2, step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          const T wr = cos_[k * step], wi = sign * sin_[k * step];
          const std::size_t a = start + k, b = a + half;
          const T tr = re[b] * wr - im[b] * wi;
          const T ti = re[b] * wi + im[b] * wr;
          re[b] = re[a] - tr;
          im[b] = im[a] - ti;
          re[a] += tr;
          im[a] += ti;
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> rev_;
  std::vector<T> cos_, sin_;
};

// Centered 1D transform of n samples: shift, transform, shift back. For even
// n the forward and inverse shifts coincide (rotate by n/2).
template <typename T>
void centered_1d(const Radix2<T>& fft, std::size_t n, T* re, T* im, T* sr, T* si, bool inverse) {
  const std::size_t h = n / 2;
  for (std::size_t i = 0; i < n; ++i) {
    sr[i] = re[(i + h) % n];
    si[i] = im[(i + h) % n];
  }
  fft.run(sr, si, inverse);
  for (std::size_t i = 0; i < n; ++i) {
    re[(i + h) % n] = sr[i];
    im[(i + h) % n] = si[i];
  }
}

}  // namespace

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::vector<double> ComplexGrid::magnitude() const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::hypot(re[i], im[i]);
  return out;
}

bool ComplexGrid::all_finite() const {
  auto fin = [](double v) { return std::isfinite(v); };
  return std::all_of(re.begin(), re.end(), fin) && std::all_of(im.begin(), im.end(), fin);
}

template <typename T>
void fft2_centered_inplace(std::span<T> re, std::span<T> im, std::size_t height, std::size_t width,
                           bool inverse) {
  require_pow2(height, width);
  if (re.size() != height * width || im.size() != height * width) {
    throw DimensionError("centered FFT: plane size does not match " + std::to_string(height) +
                         "x" + std::to_string(width));
  }
  const Radix2<T> row_fft(width), col_fft(height);
  const std::size_t n = std::max(height, width);
  std::vector<T> sr(n), si(n), cr(height), ci(height);
  for (std::size_t r = 0; r < height; ++r) {
    centered_1d(row_fft, width, re.data() + r * width, im.data() + r * width, sr.data(), si.data(),
                inverse);
  }
  for (std::size_t c = 0; c < width; ++c) {
    for (std::size_t r = 0; r < height; ++r) {
      cr[r] = re[r * width + c];
      ci[r] = im[r * width + c];
    }
    centered_1d(col_fft, height, cr.data(), ci.data(), sr.data(), si.data(), inverse);
    for (std::size_t r = 0; r < height; ++r) {
      re[r * width + c] = cr[r];
      im[r * width + c] = ci[r];
    }
  }
  const T norm = static_cast<T>(1.0 / std::sqrt(static_cast<double>(height * width)));
  for (std::size_t i = 0; i < re.size(); ++i) {
    re[i] *= norm;
    im[i] *= norm;
  }
}

ComplexGrid fft2_centered(const ComplexGrid& g) {
  ComplexGrid out = g;
  fft2_centered_inplace<double>(out.re, out.im, g.height, g.width, false);
  return out;
}

ComplexGrid ifft2_centered(const ComplexGrid& g) {
  ComplexGrid out = g;
  fft2_centered_inplace<double>(out.re, out.im, g.height, g.width, true);
  return out;
}

ComplexGrid dft2_naive(const ComplexGrid& g) {
  const std::size_t H = g.height, W = g.width;
  if (H > 32 || W > 32) {
    throw std::invalid_argument("dft2_naive: grid " + std::to_string(H) + "x" + std::to_string(W) +
                                " exceeds the 32x32 oracle limit");
  }
  const auto hc = static_cast<long>(H / 2), wc = static_cast<long>(W / 2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(H * W));
  ComplexGrid out(H, W);
  for (std::size_t u = 0; u < H; ++u) {
    for (std::size_t v = 0; v < W; ++v) {
      std::complex<double> acc = 0.0;
      const long fu = static_cast<long>(u) - hc, fv = static_cast<long>(v) - wc;
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const long sy = static_cast<long>(y) - hc, sx = static_cast<long>(x) - wc;
          const double phase = -2.0 * std::numbers::pi *
                               (static_cast<double>(fu * sy) / static_cast<double>(H) +
                                static_cast<double>(fv * sx) / static_cast<double>(W));
          acc += g.at(y, x) * std::polar(1.0, phase);
        }
      }
      out.set(u, v, acc * scale);
    }
  }
  return out;
}

double hermitian_symmetry_error(const ComplexGrid& g) {
  const std::size_t H = g.height, W = g.width;
  double worst = 0.0;
  for (std::size_t r = 0; r < H; ++r) {
    // Centered index i pairs with (2*center - i) mod N.
    const std::size_t rr = (2 * (H / 2) + H - r) % H;
    for (std::size_t c = 0; c < W; ++c) {
      const std::size_t cc = (2 * (W / 2) + W - c) % W;
      worst = std::max(worst, std::abs(g.at(r, c) - std::conj(g.at(rr, cc))));
    }
  }
  return worst;
}

template <typename T>
Tensor<T> grid_to_tensor(const ComplexGrid& g) {
  std::vector<T> data(2 * g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    data[i] = static_cast<T>(g.re[i]);
    data[g.size() + i] = static_cast<T>(g.im[i]);
  }
  return Tensor<T>::from({2, g.height, g.width}, std::move(data));
}

template <typename T>
ComplexGrid tensor_to_grid(const Tensor<T>& x) {
  if (x.rank() != 3 || x.dim(0) != 2) {
    throw DimensionError("expected a [2, H, W] complex tensor, got " + shape_str(x.shape()));
  }
  ComplexGrid g(x.dim(1), x.dim(2));
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) {
    g.re[i] = static_cast<double>(x.data()[i]);
    g.im[i] = static_cast<double>(x.data()[n + i]);
  }
  return g;
}

namespace {

template <typename T>
Tensor<T> centered_transform(const Tensor<T>& x, bool inverse) {
  if (x.rank() != 3 || x.dim(0) != 2) {
    throw DimensionError("centered FFT expects [2, H, W], got " + shape_str(x.shape()));
  }
  const std::size_t H = x.dim(1), W = x.dim(2), n = H * W;
  require_pow2(H, W);
  std::vector<T> out(x.data().begin(), x.data().end());
  fft2_centered_inplace<T>(std::span<T>(out.data(), n), std::span<T>(out.data() + n, n), H, W,
                           inverse);
  return detail::make_result<T>(x.shape(), std::move(out), {x}, [=](Node<T>& self) {
    std::vector<T> g = self.grad;
    fft2_centered_inplace<T>(std::span<T>(g.data(), n), std::span<T>(g.data() + n, n), H, W,
                             !inverse);
    auto& dst = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  });
}

}  // namespace

template <typename T>
Tensor<T> fft2_centered(const Tensor<T>& x) {
  return centered_transform(x, false);
}

template <typename T>
Tensor<T> ifft2_centered(const Tensor<T>& x) {
  return centered_transform(x, true);
}

template void fft2_centered_inplace<float>(std::span<float>, std::span<float>, std::size_t,
                                           std::size_t, bool);
template void fft2_centered_inplace<double>(std::span<double>, std::span<double>, std::size_t,
                                            std::size_t, bool);
template Tensor<float> fft2_centered<float>(const Tensor<float>&);
template Tensor<double> fft2_centered<double>(const Tensor<double>&);
template Tensor<float> ifft2_centered<float>(const Tensor<float>&);
template Tensor<double> ifft2_centered<double>(const Tensor<double>&);
template Tensor<float> grid_to_tensor<float>(const ComplexGrid&);
template Tensor<double> grid_to_tensor<double>(const ComplexGrid&);
template ComplexGrid tensor_to_grid<float>(const Tensor<float>&);
template ComplexGrid tensor_to_grid<double>(const Tensor<double>&);

}  // namespace kst
