#include "kst/bench.hpp"

#include "kst/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kst {

StandardCost analytic_cost_standard(std::uint64_t m, std::uint64_t n, std::uint64_t d,
                                    std::uint64_t layers) {
  if (m == 0 || n == 0 || d == 0 || layers == 0) {
    throw std::invalid_argument("analytic_cost_standard: arguments must be positive");
  }
  StandardCost c;
  c.cross_per_layer = m * n;
  c.self_per_layer = m * m;
  c.cross = c.cross_per_layer * layers;
  c.self = c.self_per_layer * layers;
  c.total = c.cross + c.self;
  c.multiply_adds = c.total * d;
  return c;
}

HierCost analytic_cost_hier(std::uint64_t m, std::uint64_t n, std::uint64_t l, std::uint64_t d,
                            std::uint64_t lr_layers, std::uint64_t hr_layers) {
  if (m == 0 || n == 0 || l == 0 || d == 0 || lr_layers == 0 || hr_layers == 0) {
    throw std::invalid_argument("analytic_cost_hier: arguments must be positive");
  }
  if (l > m) throw std::invalid_argument("analytic_cost_hier: l must not exceed m");
  HierCost c;
  c.lr_cross_per_layer = l * n;
  c.lr_self_per_layer = l * l;
  c.hr_cross_per_layer = m * l;
  c.lr_cross = c.lr_cross_per_layer * lr_layers;
  c.lr_self = c.lr_self_per_layer * lr_layers;
  c.hr_cross = c.hr_cross_per_layer * hr_layers;
  c.total = c.lr_cross + c.lr_self + c.hr_cross;
  c.peak = std::max({c.lr_cross_per_layer, c.lr_self_per_layer, c.hr_cross_per_layer});
  c.multiply_adds = c.total * d;
  return c;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

FitComparison compare_linear_quadratic(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3) {
    throw std::invalid_argument("fit comparison needs >= 3 matching points");
  }
  // Least squares for y = a + b f(x), returning the residual sum of squares.
  auto rss = [&](auto f) {
    const double n = static_cast<double>(x.size());
    double sf = 0, sy = 0, sff = 0, sfy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double fi = f(x[i]);
      sf += fi;
      sy += y[i];
      sff += fi * fi;
      sfy += fi * y[i];
    }
    const double b = (n * sfy - sf * sy) / (n * sff - sf * sf);
    const double a = (sy - b * sf) / n;
    double r = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double e = y[i] - (a + b * f(x[i]));
      r += e * e;
    }
    return r;
  };
  return {rss([](double v) { return v; }), rss([](double v) { return v * v; })};
}

namespace {

Tensor<float> random_matrix(std::size_t rows, std::size_t cols, double bound,
                            std::mt19937_64& rng) {
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -bound, bound));
  return Tensor<float>::from({rows, cols}, std::move(v));
}

SampledPointSet random_points(std::size_t H, std::size_t W, std::size_t n, std::mt19937_64& rng) {
  if (n == 0 || n > H * W) throw std::invalid_argument("bench: n must be in [1, H*W]");
  std::vector<std::size_t> idx(H * W);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(H * W - i));
    std::swap(idx[i], idx[std::min(j, H * W - 1)]);
  }
  SampledPointSet s;
  s.height = H;
  s.width = W;
  s.mask_bits.assign(H * W, 0);
  for (std::size_t i = 0; i < n; ++i) {
    SampledPoint p;
    p.row = idx[i] / W;
    p.col = idx[i] % W;
    std::tie(p.pos_row, p.pos_col) = normalized_position(p.row, p.col, H, W);
    p.re = uniform(rng, -1.0, 1.0);
    p.im = uniform(rng, -1.0, 1.0);
    s.mask_bits[idx[i]] = 1;
    s.points.push_back(p);
  }
  return s;
}

bool is_decoder_label(const std::string& label) {
  return label.rfind("lr_decoder", 0) == 0 || label.rfind("hr_decoder", 0) == 0;
}

}  // namespace

void run_standard_decoder(const Tensor<float>& memory, std::size_t m, std::size_t layers,
                          std::size_t d, std::size_t heads, std::uint64_t seed,
                          AttentionProbe* probe) {
  std::mt19937_64 rng(derive_seed(seed, 0x5354445ull));
  const double b = 1.0 / std::sqrt(static_cast<double>(d));
  const auto ones = Tensor<float>::full({d}, 1.0f);
  const auto zeros = Tensor<float>::zeros({d});
  Tensor<float> y = random_matrix(m, d, 1.0, rng);
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = "standard.layer" + std::to_string(i);
    auto h = layer_norm(y, ones, zeros);
    auto self = multi_head_attention(linear(h, random_matrix(d, d, b, rng), Tensor<float>()),
                                     linear(h, random_matrix(d, d, b, rng), Tensor<float>()),
                                     linear(h, random_matrix(d, d, b, rng), Tensor<float>()),
                                     heads, probe, name + ".self");
    y = add(y, self);
    h = layer_norm(y, ones, zeros);
    auto cross = multi_head_attention(
        linear(h, random_matrix(d, d, b, rng), Tensor<float>()),
        linear(memory, random_matrix(d, d, b, rng), Tensor<float>()),
        linear(memory, random_matrix(d, d, b, rng), Tensor<float>()), heads, probe,
        name + ".cross");
    y = add(y, cross);
  }
}

std::vector<CostProfile> measure(const BenchConfig& cfg) {
  if (cfg.runs < 1) throw std::invalid_argument("bench: runs must be >= 1");
  std::vector<CostProfile> out;
  for (const auto& grid : cfg.grids) {
    for (std::size_t n_hr : cfg.hr_layers) {
      ModelConfig mc = cfg.model;
      mc.hr_height = grid.hr_height;
      mc.hr_width = grid.hr_width;
      mc.lr_height = grid.lr_height;
      mc.lr_width = grid.lr_width;
      mc.n_hr = n_hr;
      mc.use_lr_decoder = true;
      mc.validate();
      const std::size_t m = mc.hr_tokens(), l = mc.lr_tokens(), n = grid.n;

      auto params = init_params<float>(mc, cfg.seed);
      for (auto& [_, t] : params.tensors()) t.set_requires_grad(false);

      CostProfile p;
      p.m = m;
      p.n = n;
      p.l = l;
      p.d = mc.d;
      p.n_enc = mc.n_enc;
      p.n_lr = mc.n_lr;
      p.n_hr = mc.n_hr;
      p.standard = analytic_cost_standard(m, n, mc.d, mc.n_lr + mc.n_hr);
      p.hier = analytic_cost_hier(m, n, l, mc.d, mc.n_lr, mc.n_hr);
      p.encoder_self = static_cast<std::uint64_t>(n) * n * mc.n_enc;

      std::mt19937_64 rng(derive_seed(cfg.seed, m * 1315423911ull + n_hr));
      const auto points = random_points(mc.hr_height, mc.hr_width, n, rng);

      // Instrumented pass through the full model.
      AttentionProbe probe;
      forward(points, params, mc, ForwardOptions{&probe, false});
      for (const auto& c : probe.calls) {
        const std::uint64_t e = static_cast<std::uint64_t>(c.queries) * c.keys;
        if (is_decoder_label(c.label)) {
          p.measured_hier_total += e;
          p.measured_hier_peak = std::max(p.measured_hier_peak, e);
          if (c.queries == m && c.keys == m) p.hier_has_m_by_m = true;
        } else {
          p.measured_encoder_total += e;
        }
      }

      if (cfg.measure_standard) {
        AttentionProbe sp;
        const auto memory = random_matrix(n, mc.d, 1.0, rng);
        run_standard_decoder(memory, m, mc.n_lr + mc.n_hr, mc.d, mc.n_heads, cfg.seed, &sp);
        p.measured_standard_total = sp.total_score_elements();
        p.measured_standard_peak = sp.peak_score_elements();
      }

      // Timed decoding: one warm-up, then `runs` runs on fresh random memory.
      const auto coords = central_crop_coordinates(mc.lr_height, mc.lr_width, mc.hr_height,
                                                   mc.hr_width);
      for (std::size_t r = 0; r <= cfg.runs; ++r) {
        TokenSequence<float> memory{random_matrix(n, mc.d, 1.0, rng), {}};
        const auto t0 = std::chrono::steady_clock::now();
        auto lr = lr_decode(memory, params, mc, mc.lr_height, mc.lr_width, coords);
        auto hr = hr_decode(lr.tokens, params, mc, points);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        if (r > 0) p.wall_ms_runs.push_back(ms);
      }
      p.wall_ms_median = median(p.wall_ms_runs);
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace kst
