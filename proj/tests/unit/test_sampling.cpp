#include "kst/sampling.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <set>

using namespace kst;

TEST_CASE("uniform 1D: accel 1 without a center block is all ones") {
  auto m = make_uniform_1d_mask(8, 8, {1.0, 0.0, 0});
  CHECK(m.count() == 64);
  CHECK(acceleration(m) == 1.0);
}

TEST_CASE("uniform 1D at 2.5x on 64 columns") {
  auto m = make_uniform_1d_mask(64, 64, {2.5, 0.08, 0});
  // Center block of ceil(0.08 * 64) = 6 columns around column 32.
  for (std::size_t c = 29; c < 35; ++c) CHECK(m.sampled(0, c));
  std::size_t cols = 0;
  for (std::size_t c = 0; c < 64; ++c) {
    cols += m.sampled(0, c);
    for (std::size_t r = 1; r < 64; ++r) CHECK(m.sampled(r, c) == m.sampled(0, c));
  }
  CHECK(m.count() == cols * 64);
  CHECK(std::abs(acceleration(m) - 2.5) <= 0.25);
  CHECK(m.meta().kind == MaskKind::Uniform1D);
  CHECK(m.bits() == make_uniform_1d_mask(64, 64, {2.5, 0.08, 0}).bits());
  CHECK(m.bits() != make_uniform_1d_mask(64, 64, {2.5, 0.08, 1}).bits());
}

TEST_CASE("uniform 1D 5x and parameter errors") {
  auto m = make_uniform_1d_mask(32, 128, {5.0, 0.08, 2});
  CHECK(std::abs(acceleration(m) - 5.0) <= 0.5);
  CHECK_THROWS(make_uniform_1d_mask(64, 64, {0.5, 0.08, 0}));
  CHECK_THROWS(make_uniform_1d_mask(64, 64, {2.5, 1.0, 0}));
  CHECK_THROWS(make_uniform_1d_mask(64, 64, {2.5, 0.08, 3}));
  CHECK_THROWS(make_uniform_1d_mask(64, 64, {5.0, 0.5, 0}));
}

TEST_CASE("gaussian 2D calibration and determinism") {
  CHECK(make_gaussian_2d_mask(16, 16, {1.0, 0.25, 3}).count() == 256);
  double mean = 0;
  for (std::uint64_t s = 0; s < 20; ++s) mean += acceleration(make_gaussian_2d_mask(64, 64, {5.0, 0.25, s})) / 20;
  CHECK(std::abs(mean - 5.0) <= 0.25);
  auto a = make_gaussian_2d_mask(64, 64, {5.0, 0.25, 7});
  CHECK(a.bits() == make_gaussian_2d_mask(64, 64, {5.0, 0.25, 7}).bits());
  CHECK(a.bits() != make_gaussian_2d_mask(64, 64, {5.0, 0.25, 8}).bits());
  CHECK(a.sampled(32, 32));
  CHECK_THROWS(make_gaussian_2d_mask(64, 64, {5.0, 0.0, 1}));
}

TEST_CASE("mask invariants are enforced") {
  CHECK_THROWS(Mask(2, 2, {0, 0, 0, 0}));
  CHECK_THROWS(Mask(2, 2, {1, 1, 1, 2}));
  CHECK_THROWS(Mask(2, 2, {1, 1, 1}));
  Mask half(4, 4, {1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0});
  CHECK(acceleration(half) == 2.0);
  CHECK(mask_kind_from_string(to_string(MaskKind::Gaussian2D)) == MaskKind::Gaussian2D);
  CHECK_THROWS(mask_kind_from_string("radial"));
}

TEST_CASE("apply_mask gathers exactly the sampled bins") {
  auto s = generate_phantom(16, 16, 3, 0);
  auto full = apply_mask(s.spectrogram, Mask::all_ones(16, 16));
  CHECK(full.points.size() == 256);
  CHECK(full.zero_filled.re == s.spectrogram.re);

  std::vector<std::uint8_t> one(256, 0);
  one[8 * 16 + 8] = 1;
  auto single = apply_mask(s.spectrogram, Mask(16, 16, one));
  REQUIRE(single.points.size() == 1);
  CHECK(single.points.points[0].pos_row == 0.5);
  CHECK(single.points.points[0].pos_col == 0.5);

  auto mask = make_gaussian_2d_mask(16, 16, {2.5, 0.25, 4});
  auto ms = apply_mask(s.spectrogram, mask);
  CHECK(ms.points.size() == mask.count());
  std::set<std::pair<double, double>> pos;
  for (const auto& p : ms.points.points) {
    CHECK(mask.sampled(p.row, p.col));
    CHECK(p.pos_row >= 0.0);
    CHECK(p.pos_row < 1.0);
    pos.emplace(p.pos_row, p.pos_col);
  }
  CHECK(pos.size() == ms.points.size());
  auto sc = ms.points.scatter();
  CHECK(sc.re == ms.zero_filled.re);
  CHECK(sc.im == ms.zero_filled.im);
  for (std::size_t i = 0; i < 256; ++i) {
    CHECK(ms.zero_filled.re[i] == (mask.bits()[i] ? s.spectrogram.re[i] : 0.0));
  }
  CHECK_THROWS(apply_mask(s.spectrogram, Mask::all_ones(8, 8)));
}
