#pragma once

#include "kst/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kst {

// Counts are attention score-matrix elements per head; each costs d
// multiply-adds in the QK^T product.
struct StandardCost {
  std::uint64_t cross_per_layer = 0;  // m * n
  std::uint64_t self_per_layer = 0;   // m * m
  std::uint64_t cross = 0;
  std::uint64_t self = 0;
  std::uint64_t total = 0;
  std::uint64_t multiply_adds = 0;  // total * d
};

struct HierCost {
  std::uint64_t lr_cross_per_layer = 0;  // l * n
  std::uint64_t lr_self_per_layer = 0;   // l * l
  std::uint64_t hr_cross_per_layer = 0;  // m * l
  std::uint64_t lr_cross = 0;
  std::uint64_t lr_self = 0;
  std::uint64_t hr_cross = 0;
  std::uint64_t total = 0;
  std::uint64_t peak = 0;  // largest single score matrix
  std::uint64_t multiply_adds = 0;
};

// A flat decoder: every layer has m x m self-attention and m x n cross-attention.
StandardCost analytic_cost_standard(std::uint64_t m, std::uint64_t n, std::uint64_t d,
                                    std::uint64_t layers);
HierCost analytic_cost_hier(std::uint64_t m, std::uint64_t n, std::uint64_t l, std::uint64_t d,
                            std::uint64_t lr_layers, std::uint64_t hr_layers);

struct BenchGrid {
  std::size_t hr_height = 64;
  std::size_t hr_width = 64;
  std::size_t lr_height = 16;
  std::size_t lr_width = 16;
  std::size_t n = 819;  // sampled points / encoder memory length
};

struct BenchConfig {
  ModelConfig model;  // grids and layer counts are overridden per sweep point
  std::vector<BenchGrid> grids;
  std::vector<std::size_t> hr_layers = {3};
  std::size_t runs = 5;
  std::uint64_t seed = 0;
  // Also instrument the flat decoder (m x m self-attention). Costly for large m.
  bool measure_standard = true;
};

struct CostProfile {
  std::size_t m = 0, n = 0, l = 0, d = 0;
  std::size_t n_enc = 0, n_lr = 0, n_hr = 0;
  StandardCost standard;  // layers = n_lr + n_hr
  HierCost hier;
  std::uint64_t encoder_self = 0;  // n * n * n_enc, reported separately

  std::uint64_t measured_hier_total = 0;
  std::uint64_t measured_hier_peak = 0;
  std::uint64_t measured_standard_total = 0;  // 0 when not measured
  std::uint64_t measured_standard_peak = 0;
  std::uint64_t measured_encoder_total = 0;
  bool hier_has_m_by_m = false;  // any recorded m x m score matrix

  double wall_ms_median = 0.0;  // LR + HR decoding, no gradients
  std::vector<double> wall_ms_runs;
};

// Runs the decoders on random memory for every (grid, hr_layers) pair and
// records timings and instrumented score counts.
std::vector<CostProfile> measure(const BenchConfig& cfg);

// Flat-decoder reference used for the standard instrumentation: m grid
// queries, per layer Pre-LN self-attention then cross-attention into
// `memory`. Weights are random; only shapes and counts matter.
void run_standard_decoder(const Tensor<float>& memory, std::size_t m, std::size_t layers,
                          std::size_t d, std::size_t heads, std::uint64_t seed,
                          AttentionProbe* probe);

struct FitComparison {
  double linear_rss = 0.0;     // y = a + b x
  double quadratic_rss = 0.0;  // y = a + c x^2
  bool linear_better() const { return linear_rss < quadratic_rss; }
};

FitComparison compare_linear_quadratic(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> v);

}  // namespace kst
