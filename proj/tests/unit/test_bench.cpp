#include "kst/bench.hpp"

#include <doctest.h>

#include <cmath>

using namespace kst;

TEST_CASE("standard cost arithmetic") {
  auto c = analytic_cost_standard(4096, 819, 64, 1);
  CHECK(c.cross == 3354624);
  CHECK(c.self == 16777216);
  CHECK(c.total == c.cross + c.self);
  CHECK(c.multiply_adds == c.total * 64);
  auto eq = analytic_cost_standard(100, 100, 8, 3);
  CHECK(eq.cross == eq.self);
  CHECK(analytic_cost_standard(200, 10, 8, 1).self == 4 * analytic_cost_standard(100, 10, 8, 1).self);
  CHECK_THROWS(analytic_cost_standard(0, 1, 1, 1));
}

TEST_CASE("hierarchical cost arithmetic") {
  auto h = analytic_cost_hier(4096, 819, 256, 64, 1, 1);
  CHECK(h.hr_cross_per_layer == 1048576);
  CHECK(h.lr_self_per_layer == 65536);
  CHECK(h.lr_cross_per_layer == 256 * 819);
  CHECK(h.peak == 1048576);
  CHECK(analytic_cost_hier(64, 10, 64, 8, 1, 2).hr_cross_per_layer == 64 * 64);
  CHECK_THROWS(analytic_cost_hier(64, 10, 128, 8, 1, 1));
}

TEST_CASE("hierarchical total is below the flat total over a sweep") {
  for (std::uint64_t m : {std::uint64_t{64}, std::uint64_t{256}, std::uint64_t{1024}, std::uint64_t{4096}})
    for (std::uint64_t l = 1; l < m; l *= 4)
      for (std::uint64_t n : {std::uint64_t{1}, m / 5 + 1, m})
        for (std::uint64_t lr = 1; lr <= 3; ++lr)
          for (std::uint64_t hr = 1; hr <= 3; ++hr) {
            CHECK(analytic_cost_hier(m, n, l, 16, lr, hr).total <
                  analytic_cost_standard(m, n, 16, lr + hr).total);
          }
}

TEST_CASE("fit comparison separates linear and quadratic data") {
  std::vector<double> x = {1, 2, 3, 4, 5}, lin, quad;
  for (double v : x) {
    lin.push_back(3 + 2 * v);
    quad.push_back(1 + v * v);
  }
  CHECK(compare_linear_quadratic(x, lin).linear_better());
  CHECK(!compare_linear_quadratic(x, quad).linear_better());
  CHECK_THROWS(compare_linear_quadratic({1, 2}, {1, 2}));
  CHECK(median({3, 1, 2}) == 2);
  CHECK(median({4, 1, 2, 3}) == 2.5);
}

TEST_CASE("instrumented counts equal the formulas on a small sweep") {
  BenchConfig cfg;
  cfg.model.d = 16;
  cfg.model.n_heads = 2;
  cfg.model.ffn_width = 32;
  cfg.model.refine_channels = 4;
  cfg.grids = {{16, 16, 4, 4, 51}, {32, 16, 8, 4, 102}};
  cfg.hr_layers = {1, 2};
  cfg.runs = 1;
  auto rows = measure(cfg);
  REQUIRE(rows.size() == 4);
  for (const auto& p : rows) {
    CHECK(p.measured_hier_total == p.hier.total);
    CHECK(p.measured_hier_peak == p.hier.peak);
    CHECK(p.measured_standard_total == p.standard.total);
    CHECK(p.measured_encoder_total == p.encoder_self);
    CHECK(!p.hier_has_m_by_m);
    CHECK(p.wall_ms_runs.size() == 1);
  }
}
