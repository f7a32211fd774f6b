#pragma once

#include "kst/fourier.hpp"
#include "kst/sampling.hpp"
#include "kst/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace kst {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc = 2;
  std::size_t n_lr = 2;
  std::size_t n_hr = 3;
  std::size_t ffn_width = 256;
  std::size_t lr_height = 16;
  std::size_t lr_width = 16;
  std::size_t hr_height = 64;
  std::size_t hr_width = 64;
  std::size_t refine_channels = 64;
  std::size_t refine_depth = 5;
  double leaky_slope = 0.01;
  // Ablation switches. Without the LR decoder the HR queries attend to the
  // encoder memory directly.
  bool use_lr_decoder = true;
  bool use_refinement = true;
  // Overwrite predicted k-space, LR and HR, at sampled bins with the measured
  // values.
  bool data_consistency = false;

  void validate() const;
  std::size_t lr_tokens() const { return lr_height * lr_width; }
  std::size_t hr_tokens() const { return hr_height * hr_width; }

  // 4/4/6 layers, d = 256.
  static ModelConfig paper_scale();
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// Parameter groups used by gradient checks and reporting.
enum class ParamGroup { Tokenizer, Attention, Ffn, Norm, Head, Refine, Embed };
inline constexpr ParamGroup kAllParamGroups[] = {ParamGroup::Tokenizer, ParamGroup::Attention,
                                                 ParamGroup::Ffn,       ParamGroup::Norm,
                                                 ParamGroup::Head,      ParamGroup::Refine,
                                                 ParamGroup::Embed};
std::string to_string(ParamGroup g);
ParamGroup param_group(const std::string& name);

// Every learnable tensor keyed by a hierarchical dotted name. Iteration order
// is lexicographic by name.
template <typename T>
class ModelParams {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  void insert(const std::string& name, Tensor<T> t);
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Map& tensors() const { return tensors_; }
  Map& tensors() { return tensors_; }
  std::size_t scalar_count() const;
  void zero_grad();
  // Deep copy with fresh leaves.
  ModelParams clone() const;
  template <typename U>
  ModelParams<U> cast() const;

 private:
  Map tensors_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
// layer-norm gains. Each tensor draws from its own stream keyed by name.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

// Names the model expects for `cfg`, in lexicographic order.
std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg);

// d/2 dims for the row coordinate then d/2 for the column; within each half,
// interleaved (sin, cos) of p * 2*pi * 2^j for j = 0 .. d/4 - 1.
std::vector<double> positional_encoding_2d(double pos_row, double pos_col, std::size_t d);

template <typename T>
Tensor<T> positional_encoding_table(const std::vector<std::pair<double, double>>& coords,
                                    std::size_t d);

// Coordinates of a full H x W grid in row-major order.
std::vector<std::pair<double, double>> grid_coordinates(std::size_t height, std::size_t width);
// Coordinates of the central h x w crop of an H x W grid, in HR-normalized
// units. The LR decoder queries these.
std::vector<std::pair<double, double>> central_crop_coordinates(std::size_t h, std::size_t w,
                                                                std::size_t H, std::size_t W);

template <typename T>
struct TokenSequence {
  Tensor<T> features;  // [L, d]
  std::vector<std::pair<double, double>> coords;
  std::size_t size() const { return coords.size(); }
};

struct ForwardOptions {
  AttentionProbe* probe = nullptr;
  // Treat the LR -> HR token handoff as a constant.
  bool stop_hr_gradient = false;
};

template <typename T>
struct ReconstructionOutputs {
  std::vector<Tensor<T>> lr_spectrograms;        // [2, h_lr, w_lr] per LR layer
  std::vector<Tensor<T>> hr_spectrograms;        // [2, H, W] per HR layer, before refinement
  std::vector<Tensor<T>> hr_images;              // [2, H, W] refined image per HR layer
  std::vector<Tensor<T>> hr_refined_spectrograms;
  Tensor<T> final_image;
};

template <typename T>
TokenSequence<T> tokenize(const SampledPointSet& points, const ModelParams<T>& params,
                          const ModelConfig& cfg);

template <typename T>
TokenSequence<T> encode(const TokenSequence<T>& tokens, const ModelParams<T>& params,
                        const ModelConfig& cfg, AttentionProbe* probe = nullptr);

template <typename T>
struct LrDecodeResult {
  TokenSequence<T> tokens;
  std::vector<Tensor<T>> spectrograms;  // one per layer, [2, qh, qw]
};

// Decodes onto `query_coords` laid out as a qh x qw grid. The default model
// path passes the central LR crop; any grid works.
template <typename T>
LrDecodeResult<T> lr_decode(const TokenSequence<T>& memory, const ModelParams<T>& params,
                            const ModelConfig& cfg, std::size_t qh, std::size_t qw,
                            const std::vector<std::pair<double, double>>& query_coords,
                            AttentionProbe* probe = nullptr);

template <typename T>
struct HrDecodeResult {
  std::vector<Tensor<T>> spectrograms;
  std::vector<Tensor<T>> images;
  std::vector<Tensor<T>> refined_spectrograms;
};

// `sampled` supplies measured values for data consistency; unused otherwise.
template <typename T>
HrDecodeResult<T> hr_decode(const TokenSequence<T>& lr_tokens, const ModelParams<T>& params,
                            const ModelConfig& cfg, const SampledPointSet& sampled,
                            AttentionProbe* probe = nullptr);

template <typename T>
ReconstructionOutputs<T> forward(const SampledPointSet& points, const ModelParams<T>& params,
                                 const ModelConfig& cfg, const ForwardOptions& opts = {});

// Rows of recorded softmax matrices, one vector per head.
struct AttentionMaps {
  std::size_t heads = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::vector<double>> per_head;  // each height * width
  std::vector<std::vector<double>> rows;      // raw softmax rows per head
};

// Encoder self-attention of sampled point `point_index` in `layer`, scattered
// onto the H x W grid at the sampled positions.
AttentionMaps encoder_attention_map(const AttentionProbe& probe, const SampledPointSet& points,
                                    std::size_t layer, std::size_t point_index);

// HR cross-attention of HR bin `hr_index` in `layer`, laid out on the LR grid.
AttentionMaps hr_attention_map(const AttentionProbe& probe, const ModelConfig& cfg,
                               std::size_t layer, std::size_t hr_index);

}  // namespace kst
