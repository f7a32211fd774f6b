#pragma once

// Shared helpers for unit and acceptance tests.

#include "kst/model.hpp"
#include "kst/phantom.hpp"
#include "kst/random.hpp"
#include "kst/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace kst::test {

// Small double-precision model used by gradient checks and property tests.
inline ModelConfig tiny_config(std::size_t grid = 16, std::size_t d = 16) {
  ModelConfig c;
  c.d = d;
  c.n_heads = 2;
  c.n_enc = 2;
  c.n_lr = 2;
  c.n_hr = 3;
  c.ffn_width = 2 * d;
  c.hr_height = c.hr_width = grid;
  c.lr_height = c.lr_width = grid / 4;
  c.refine_channels = 4;
  c.refine_depth = 3;
  return c;
}

inline MaskedSpectrogram sample_input(const PhantomSample& s, const MaskSpec& spec = {}) {
  return apply_mask(s.spectrogram, make_mask(spec, s.spectrogram.height, s.spectrogram.width));
}

// Naive reference products.
inline std::vector<double> matmul_loops(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t n, std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * m + j] += a[i * k + t] * b[t * m + j];
  return c;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

struct GradProbe {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

// Central differences with one Richardson step, O(h^4). Returns false when
// the perturbation crosses a ReLU kink, in which case the probe is unusable.
inline bool numeric_derivative(const std::function<double()>& loss, double& slot, double h,
                               double& out) {
  const double orig = slot;
  std::uint64_t base_pattern = 0;
  {
    ActivationPatternScope scope;
    loss();
    base_pattern = scope.fingerprint();
  }
  auto eval = [&](double delta, bool& same) {
    slot = orig + delta;
    ActivationPatternScope scope;
    const double v = loss();
    same = same && scope.fingerprint() == base_pattern;
    return v;
  };
  bool same = true;
  const double d1 = (eval(h, same) - eval(-h, same)) / (2 * h);
  const double d2 = (eval(h / 2, same) - eval(-h / 2, same)) / h;
  slot = orig;
  out = (4 * d2 - d1) / 3;
  return same;
}

inline double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-12});
  return std::abs(a - b) / denom;
}

// Probes `per_group` kink-free coordinates in every parameter group. `loss`
// must rebuild the graph from `params` on each call; `analytic` holds the
// gradients of the unperturbed loss. Candidates are drawn from coordinates
// whose gradient magnitude is at least 1e-4 times the group maximum so the
// relative error measures the derivative rather than round-off.
inline std::map<ParamGroup, std::vector<GradProbe>> gradient_check(
    ModelParams<double>& params, const std::function<double()>& loss, std::size_t per_group,
    std::uint64_t seed, double h = 1e-4) {
  std::map<ParamGroup, std::vector<std::pair<std::string, std::size_t>>> candidates;
  std::map<ParamGroup, double> group_max;
  for (const auto& [name, t] : params.tensors()) {
    if (!t.has_grad()) continue;
    auto& mx = group_max[param_group(name)];
    for (double g : t.grad()) mx = std::max(mx, std::abs(g));
  }
  for (const auto& [name, t] : params.tensors()) {
    if (!t.has_grad()) continue;
    const auto g = param_group(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (std::abs(t.grad()[i]) >= 1e-4 * group_max[g]) candidates[g].emplace_back(name, i);
    }
  }
  std::mt19937_64 rng(seed);
  std::map<ParamGroup, std::vector<GradProbe>> out;
  for (auto& [group, list] : candidates) {
    // Fisher-Yates over the candidates; take the first kink-free ones.
    for (std::size_t i = 0; i + 1 < list.size(); ++i) {
      const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(list.size() - i));
      std::swap(list[i], list[std::min(j, list.size() - 1)]);
    }
    for (const auto& [name, idx] : list) {
      if (out[group].size() >= per_group) break;
      auto& t = params.at(name);
      GradProbe p{name, idx, t.grad()[idx], 0.0, 0.0};
      double& slot = t.mutable_data()[idx];
      if (!numeric_derivative(loss, slot, h, p.numeric)) continue;
      p.rel_error = relative_error(p.analytic, p.numeric);
      out[group].push_back(p);
    }
  }
  return out;
}

}  // namespace kst::test
