#include "kst/model.hpp"

#include "kst/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace kst {

namespace {

std::string layer_name(const std::string& prefix, std::size_t i) {
  return prefix + ".layer" + std::to_string(i);
}

void add_linear(std::vector<std::pair<std::string, Shape>>& out, const std::string& name,
                std::size_t in, std::size_t out_dim) {
  out.push_back({name + ".weight", {in, out_dim}});
  out.push_back({name + ".bias", {out_dim}});
}

void add_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& name,
              std::size_t d) {
  out.push_back({name + ".gain", {d}});
  out.push_back({name + ".bias", {d}});
}

void add_attention(std::vector<std::pair<std::string, Shape>>& out, const std::string& name,
                   std::size_t d) {
  for (const char* p : {"q", "k", "v", "o"}) add_linear(out, name + "." + p, d, d);
}

void add_mlp(std::vector<std::pair<std::string, Shape>>& out, const std::string& name,
             std::size_t in, std::size_t hidden, std::size_t out_dim) {
  add_linear(out, name + ".fc1", in, hidden);
  add_linear(out, name + ".fc2", hidden, out_dim);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
struct Layers {
  const ModelParams<T>& p;

  const Tensor<T>& get(const std::string& name) const { return p.at(name); }

  Tensor<T> lin(const Tensor<T>& x, const std::string& name) const {
    return linear(x, get(name + ".weight"), get(name + ".bias"));
  }
  Tensor<T> norm(const Tensor<T>& x, const std::string& name) const {
    return layer_norm(x, get(name + ".gain"), get(name + ".bias"));
  }
  Tensor<T> mlp(const Tensor<T>& x, const std::string& name) const {
    return mlp2(x, get(name + ".fc1.weight"), get(name + ".fc1.bias"), get(name + ".fc2.weight"),
                get(name + ".fc2.bias"));
  }
  Tensor<T> attend(const Tensor<T>& queries, const Tensor<T>& memory, const std::string& name,
                   std::size_t heads, AttentionProbe* probe, const std::string& label) const {
    auto q = lin(queries, name + ".q");
    auto k = lin(memory, name + ".k");
    auto v = lin(memory, name + ".v");
    return lin(multi_head_attention(q, k, v, heads, probe, label), name + ".o");
  }
};

template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& values, std::size_t h, std::size_t w) {
  // [h*w, 2] -> [2, h, w]
  return reshape(transpose2d(values), {2, h, w});
}

template <typename T>
Tensor<T> grid_to_tokens(const Tensor<T>& grid) {
  const std::size_t n = grid.dim(1) * grid.dim(2);
  return transpose2d(reshape(grid, {2, n}));
}

template <typename T>
struct Consistency {
  Tensor<T> keep;      // 1 where unsampled
  Tensor<T> measured;  // measured values at sampled bins, 0 elsewhere

  explicit Consistency(const SampledPointSet& s) : Consistency(s, 0, 0, s.height, s.width) {}

  // Restricted to the h x w window of the sampled grid starting at (r0, c0).
  Consistency(const SampledPointSet& s, std::size_t r0, std::size_t c0, std::size_t h,
              std::size_t w) {
    const std::size_t n = h * w;
    std::vector<T> keep_v(2 * n, T(1)), meas_v(2 * n, T(0));
    for (const auto& pt : s.points) {
      if (pt.row < r0 || pt.row >= r0 + h || pt.col < c0 || pt.col >= c0 + w) continue;
      const std::size_t i = (pt.row - r0) * w + (pt.col - c0);
      keep_v[i] = keep_v[n + i] = T(0);
      meas_v[i] = static_cast<T>(pt.re);
      meas_v[n + i] = static_cast<T>(pt.im);
    }
    keep = Tensor<T>::from({2, h, w}, std::move(keep_v));
    measured = Tensor<T>::from({2, h, w}, std::move(meas_v));
  }

  Tensor<T> apply(const Tensor<T>& spectrogram) const {
    return add(mul(spectrogram, keep), measured);
  }
};

}  // namespace

// ---- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (d == 0 || n_heads == 0 || d % n_heads != 0) fail("d must be divisible by n_heads");
  if (d % 4 != 0) fail("d must be divisible by 4");
  if (n_enc == 0) fail("need at least one encoder layer");
  if (n_hr == 0) fail("need at least one HR decoder layer");
  if (use_lr_decoder && n_lr == 0) fail("LR decoder enabled with zero layers");
  if (ffn_width == 0) fail("ffn_width must be positive");
  if (!is_power_of_two(hr_height) || !is_power_of_two(hr_width)) {
    fail("HR grid dims must be powers of two");
  }
  if (lr_height == 0 || lr_width == 0 || hr_height % lr_height != 0 || hr_width % lr_width != 0) {
    fail("LR grid must divide the HR grid per axis");
  }
  if (!is_power_of_two(lr_height) || !is_power_of_two(lr_width)) {
    fail("LR grid dims must be powers of two");
  }
  if (use_refinement && (refine_depth < 2 || refine_channels == 0)) {
    fail("refinement needs depth >= 2 and positive channel count");
  }
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.d = 256;
  c.n_enc = 4;
  c.n_lr = 4;
  c.n_hr = 6;
  c.ffn_width = 1024;
  return c;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.d == b.d && a.n_heads == b.n_heads && a.n_enc == b.n_enc && a.n_lr == b.n_lr &&
         a.n_hr == b.n_hr && a.ffn_width == b.ffn_width && a.lr_height == b.lr_height &&
         a.lr_width == b.lr_width && a.hr_height == b.hr_height && a.hr_width == b.hr_width &&
         a.refine_channels == b.refine_channels && a.refine_depth == b.refine_depth &&
         a.leaky_slope == b.leaky_slope && a.use_lr_decoder == b.use_lr_decoder &&
         a.use_refinement == b.use_refinement && a.data_consistency == b.data_consistency;
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Tokenizer:
      return "tokenizer";
    case ParamGroup::Attention:
      return "attention";
    case ParamGroup::Ffn:
      return "ffn";
    case ParamGroup::Norm:
      return "norm";
    case ParamGroup::Head:
      return "head";
    case ParamGroup::Refine:
      return "refine";
    case ParamGroup::Embed:
      return "embed";
  }
  return "attention";
}

ParamGroup param_group(const std::string& name) {
  if (name.rfind("tokenizer.", 0) == 0) return ParamGroup::Tokenizer;
  if (name.find(".refine.") != std::string::npos) return ParamGroup::Refine;
  if (name.find(".embed.") != std::string::npos) return ParamGroup::Embed;
  if (name.find(".head.") != std::string::npos) return ParamGroup::Head;
  if (name.find(".ffn.") != std::string::npos) return ParamGroup::Ffn;
  if (name.find("norm") != std::string::npos) return ParamGroup::Norm;
  return ParamGroup::Attention;
}

// ---- parameters -----------------------------------------------------------

template <typename T>
void ModelParams<T>::insert(const std::string& name, Tensor<T> t) {
  if (!tensors_.emplace(name, std::move(t)).second) {
    throw std::invalid_argument("duplicate parameter '" + name + "'");
  }
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& [_, t] : tensors_) t.zero_grad();
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams out;
  for (const auto& [name, t] : tensors_) {
    out.insert(name, Tensor<T>::from(t.shape(), std::vector<T>(t.data().begin(), t.data().end()),
                                     t.requires_grad()));
  }
  return out;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  for (const auto& [name, t] : tensors_) {
    std::vector<U> v(t.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(t.data()[i]);
    out.insert(name, Tensor<U>::from(t.shape(), std::move(v), t.requires_grad()));
  }
  return out;
}

std::vector<std::pair<std::string, Shape>> param_layout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d, F = cfg.ffn_width;
  std::vector<std::pair<std::string, Shape>> out;
  add_mlp(out, "tokenizer", 2, d, d);
  for (std::size_t i = 0; i < cfg.n_enc; ++i) {
    const auto L = layer_name("encoder", i);
    add_norm(out, L + ".norm1", d);
    add_attention(out, L + ".self_attn", d);
    add_norm(out, L + ".norm2", d);
    add_mlp(out, L + ".ffn", d, F, d);
  }
  add_norm(out, "encoder.norm", d);
  if (cfg.use_lr_decoder) {
    add_linear(out, "lr_decoder.query", d, d);
    for (std::size_t i = 0; i < cfg.n_lr; ++i) {
      const auto L = layer_name("lr_decoder", i);
      add_norm(out, L + ".norm1", d);
      add_attention(out, L + ".self_attn", d);
      add_norm(out, L + ".norm2", d);
      add_attention(out, L + ".cross_attn", d);
      add_norm(out, L + ".norm3", d);
      add_mlp(out, L + ".ffn", d, F, d);
      add_linear(out, L + ".head", d, 2);
    }
    add_norm(out, "lr_decoder.norm", d);
  }
  add_linear(out, "hr_decoder.query", d, d);
  for (std::size_t i = 0; i < cfg.n_hr; ++i) {
    const auto L = layer_name("hr_decoder", i);
    add_norm(out, L + ".norm1", d);
    add_attention(out, L + ".cross_attn", d);
    add_norm(out, L + ".norm2", d);
    add_mlp(out, L + ".ffn", d, F, d);
    add_linear(out, L + ".head", d, 2);
    if (cfg.use_refinement) {
      for (std::size_t j = 0; j < cfg.refine_depth; ++j) {
        const std::size_t cin = j == 0 ? 2 : cfg.refine_channels;
        const std::size_t cout = j + 1 == cfg.refine_depth ? 2 : cfg.refine_channels;
        const auto C = L + ".refine.conv" + std::to_string(j);
        out.push_back({C + ".weight", {cout, cin, 3, 3}});
        out.push_back({C + ".bias", {cout}});
      }
    }
    if (i + 1 < cfg.n_hr) add_mlp(out, L + ".embed", 2, d, d);
  }
  std::sort(out.begin(), out.end());
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams<T> params;
  for (const auto& [name, shape] : param_layout(cfg)) {
    std::vector<T> v(shape_numel(shape), T(0));
    if (ends_with(name, ".gain")) {
      std::fill(v.begin(), v.end(), T(1));
    } else if (ends_with(name, ".weight")) {
      // Linear weights are [in, out]; conv kernels [out, in, 3, 3].
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * 9 : shape[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::mt19937_64 rng(derive_seed(seed, fnv1a(name)));
      for (auto& x : v) x = static_cast<T>(uniform(rng, -bound, bound));
    }
    params.insert(name, Tensor<T>::from(shape, std::move(v), true));
  }
  return params;
}

// ---- positional encoding --------------------------------------------------

std::vector<double> positional_encoding_2d(double pos_row, double pos_col, std::size_t d) {
  if (d == 0 || d % 4 != 0) {
    throw std::invalid_argument("positional encoding width must be divisible by 4, got " +
                                std::to_string(d));
  }
  std::vector<double> pe(d);
  const std::size_t quarter = d / 4, half = d / 2;
  for (std::size_t j = 0; j < quarter; ++j) {
    const double w = 2.0 * std::numbers::pi * std::ldexp(1.0, static_cast<int>(j));
    pe[2 * j] = std::sin(pos_row * w);
    pe[2 * j + 1] = std::cos(pos_row * w);
    pe[half + 2 * j] = std::sin(pos_col * w);
    pe[half + 2 * j + 1] = std::cos(pos_col * w);
  }
  return pe;
}

template <typename T>
Tensor<T> positional_encoding_table(const std::vector<std::pair<double, double>>& coords,
                                    std::size_t d) {
  std::vector<T> table(coords.size() * d);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto pe = positional_encoding_2d(coords[i].first, coords[i].second, d);
    for (std::size_t j = 0; j < d; ++j) table[i * d + j] = static_cast<T>(pe[j]);
  }
  return Tensor<T>::from({coords.size(), d}, std::move(table));
}

std::vector<std::pair<double, double>> grid_coordinates(std::size_t height, std::size_t width) {
  std::vector<std::pair<double, double>> out;
  out.reserve(height * width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) out.push_back(normalized_position(r, c, height, width));
  }
  return out;
}

std::vector<std::pair<double, double>> central_crop_coordinates(std::size_t h, std::size_t w,
                                                                std::size_t H, std::size_t W) {
  if (h > H || w > W) throw DimensionError("crop larger than grid");
  const std::size_t r0 = H / 2 - h / 2, c0 = W / 2 - w / 2;
  std::vector<std::pair<double, double>> out;
  out.reserve(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) out.push_back(normalized_position(r0 + r, c0 + c, H, W));
  }
  return out;
}

// ---- stages ---------------------------------------------------------------

template <typename T>
TokenSequence<T> tokenize(const SampledPointSet& points, const ModelParams<T>& params,
                          const ModelConfig& cfg) {
  if (points.size() == 0) throw std::invalid_argument("tokenize: empty point set");
  const std::size_t n = points.size();
  std::vector<T> values(n * 2);
  TokenSequence<T> out;
  out.coords.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[2 * i] = static_cast<T>(points.points[i].re);
    values[2 * i + 1] = static_cast<T>(points.points[i].im);
    out.coords.emplace_back(points.points[i].pos_row, points.points[i].pos_col);
  }
  Layers<T> L{params};
  auto m = Tensor<T>::from({n, 2}, std::move(values));
  out.features = add(L.mlp(m, "tokenizer"), positional_encoding_table<T>(out.coords, cfg.d));
  return out;
}

template <typename T>
TokenSequence<T> encode(const TokenSequence<T>& tokens, const ModelParams<T>& params,
                        const ModelConfig& cfg, AttentionProbe* probe) {
  if (tokens.features.rank() != 2 || tokens.features.dim(1) != cfg.d) {
    throw DimensionError("encode: token width " + shape_str(tokens.features.shape()) +
                         " does not match d = " + std::to_string(cfg.d));
  }
  Layers<T> L{params};
  Tensor<T> x = tokens.features;
  for (std::size_t i = 0; i < cfg.n_enc; ++i) {
    const auto name = layer_name("encoder", i);
    auto h = L.norm(x, name + ".norm1");
    x = add(x, L.attend(h, h, name + ".self_attn", cfg.n_heads, probe, name + ".self"));
    x = add(x, L.mlp(L.norm(x, name + ".norm2"), name + ".ffn"));
  }
  return {L.norm(x, "encoder.norm"), tokens.coords};
}

template <typename T>
LrDecodeResult<T> lr_decode(const TokenSequence<T>& memory, const ModelParams<T>& params,
                            const ModelConfig& cfg, std::size_t qh, std::size_t qw,
                            const std::vector<std::pair<double, double>>& query_coords,
                            AttentionProbe* probe) {
  if (memory.features.rank() != 2 || memory.features.dim(1) != cfg.d) {
    throw DimensionError("lr_decode: memory width " + shape_str(memory.features.shape()) +
                         " does not match d = " + std::to_string(cfg.d));
  }
  if (query_coords.size() != qh * qw) throw DimensionError("lr_decode: query grid size mismatch");
  Layers<T> L{params};
  LrDecodeResult<T> out;
  Tensor<T> y = L.lin(positional_encoding_table<T>(query_coords, cfg.d), "lr_decoder.query");
  for (std::size_t i = 0; i < cfg.n_lr; ++i) {
    const auto name = layer_name("lr_decoder", i);
    auto h = L.norm(y, name + ".norm1");
    y = add(y, L.attend(h, h, name + ".self_attn", cfg.n_heads, probe, name + ".self"));
    y = add(y, L.attend(L.norm(y, name + ".norm2"), memory.features, name + ".cross_attn",
                        cfg.n_heads, probe, name + ".cross"));
    y = add(y, L.mlp(L.norm(y, name + ".norm3"), name + ".ffn"));
    out.spectrograms.push_back(tokens_to_grid(L.lin(y, name + ".head"), qh, qw));
  }
  out.tokens = {L.norm(y, "lr_decoder.norm"), query_coords};
  return out;
}

template <typename T>
HrDecodeResult<T> hr_decode(const TokenSequence<T>& lr_tokens, const ModelParams<T>& params,
                            const ModelConfig& cfg, const SampledPointSet& sampled,
                            AttentionProbe* probe) {
  if (lr_tokens.features.rank() != 2 || lr_tokens.features.dim(1) != cfg.d) {
    throw DimensionError("hr_decode: token width " + shape_str(lr_tokens.features.shape()) +
                         " does not match d = " + std::to_string(cfg.d));
  }
  const std::size_t H = cfg.hr_height, W = cfg.hr_width;
  if (cfg.data_consistency && (sampled.height != H || sampled.width != W)) {
    throw DimensionError("hr_decode: sampled grid does not match the HR grid");
  }
  Layers<T> L{params};
  HrDecodeResult<T> out;
  std::optional<Consistency<T>> dc;
  if (cfg.data_consistency) dc.emplace(sampled);

  Tensor<T> z =
      L.lin(positional_encoding_table<T>(grid_coordinates(H, W), cfg.d), "hr_decoder.query");
  for (std::size_t i = 0; i < cfg.n_hr; ++i) {
    const auto name = layer_name("hr_decoder", i);
    z = add(z, L.attend(L.norm(z, name + ".norm1"), lr_tokens.features, name + ".cross_attn",
                        cfg.n_heads, probe, name + ".cross"));
    z = add(z, L.mlp(L.norm(z, name + ".norm2"), name + ".ffn"));
    Tensor<T> spec = tokens_to_grid(L.lin(z, name + ".head"), H, W);
    if (dc) spec = dc->apply(spec);
    out.spectrograms.push_back(spec);

    Tensor<T> image = ifft2_centered(spec);
    Tensor<T> refined_spec = spec;
    if (cfg.use_refinement) {
      Tensor<T> h = image;
      for (std::size_t j = 0; j < cfg.refine_depth; ++j) {
        const auto C = name + ".refine.conv" + std::to_string(j);
        h = conv2d(h, L.get(C + ".weight"), L.get(C + ".bias"));
        if (j + 1 < cfg.refine_depth) h = leaky_relu(h, static_cast<T>(cfg.leaky_slope));
      }
      image = add(image, h);
      refined_spec = fft2_centered(image);
      if (dc) {
        refined_spec = dc->apply(refined_spec);
        image = ifft2_centered(refined_spec);
      }
    }
    out.images.push_back(image);
    out.refined_spectrograms.push_back(refined_spec);
    if (i + 1 < cfg.n_hr) z = add(z, L.mlp(grid_to_tokens(refined_spec), name + ".embed"));
  }
  return out;
}

template <typename T>
ReconstructionOutputs<T> forward(const SampledPointSet& points, const ModelParams<T>& params,
                                 const ModelConfig& cfg, const ForwardOptions& opts) {
  cfg.validate();
  if (points.height != cfg.hr_height || points.width != cfg.hr_width) {
    throw DimensionError("forward: sampled grid " + std::to_string(points.height) + "x" +
                         std::to_string(points.width) + " does not match model HR grid " +
                         std::to_string(cfg.hr_height) + "x" + std::to_string(cfg.hr_width));
  }
  ReconstructionOutputs<T> out;
  auto memory = encode(tokenize(points, params, cfg), params, cfg, opts.probe);
  TokenSequence<T> handoff = memory;
  if (cfg.use_lr_decoder) {
    auto lr = lr_decode(
        memory, params, cfg, cfg.lr_height, cfg.lr_width,
        central_crop_coordinates(cfg.lr_height, cfg.lr_width, cfg.hr_height, cfg.hr_width),
        opts.probe);
    out.lr_spectrograms = std::move(lr.spectrograms);
    if (cfg.data_consistency) {
      // LR bins are the central crop of the HR grid, so measured values apply.
      const Consistency<T> dc(points, cfg.hr_height / 2 - cfg.lr_height / 2,
                              cfg.hr_width / 2 - cfg.lr_width / 2, cfg.lr_height, cfg.lr_width);
      for (auto& s : out.lr_spectrograms) s = dc.apply(s);
    }
    handoff = std::move(lr.tokens);
  }
  if (opts.stop_hr_gradient) handoff.features = detach(handoff.features);
  auto hr = hr_decode(handoff, params, cfg, points, opts.probe);
  out.hr_spectrograms = std::move(hr.spectrograms);
  out.hr_images = std::move(hr.images);
  out.hr_refined_spectrograms = std::move(hr.refined_spectrograms);
  out.final_image = out.hr_images.back();
  return out;
}

// ---- attention maps -------------------------------------------------------

namespace {

const AttentionProbe::Call& find_call(const AttentionProbe& probe, const std::string& label) {
  for (const auto& c : probe.calls) {
    if (c.label == label) {
      if (c.probabilities.empty()) {
        throw std::logic_error("attention record '" + label + "' has no stored probabilities");
      }
      return c;
    }
  }
  throw std::logic_error("no attention record for '" + label + "'");
}

std::vector<std::vector<double>> rows_of(const AttentionProbe::Call& c, std::size_t query) {
  std::vector<std::vector<double>> rows(c.heads);
  for (std::size_t h = 0; h < c.heads; ++h) {
    auto begin = c.probabilities.begin() +
                 static_cast<std::ptrdiff_t>(h * c.queries * c.keys + query * c.keys);
    rows[h].assign(begin, begin + static_cast<std::ptrdiff_t>(c.keys));
  }
  return rows;
}

}  // namespace

AttentionMaps encoder_attention_map(const AttentionProbe& probe, const SampledPointSet& points,
                                    std::size_t layer, std::size_t point_index) {
  const auto& call = find_call(probe, layer_name("encoder", layer) + ".self");
  if (point_index >= call.queries) {
    throw std::out_of_range("sampled point index " + std::to_string(point_index) +
                            " out of range (n = " + std::to_string(call.queries) + ")");
  }
  if (call.keys != points.size()) throw DimensionError("attention record does not match points");
  AttentionMaps maps;
  maps.heads = call.heads;
  maps.height = points.height;
  maps.width = points.width;
  maps.rows = rows_of(call, point_index);
  for (const auto& row : maps.rows) {
    std::vector<double> grid(points.height * points.width, 0.0);
    for (std::size_t j = 0; j < row.size(); ++j) {
      grid[points.points[j].row * points.width + points.points[j].col] = row[j];
    }
    maps.per_head.push_back(std::move(grid));
  }
  return maps;
}

AttentionMaps hr_attention_map(const AttentionProbe& probe, const ModelConfig& cfg,
                               std::size_t layer, std::size_t hr_index) {
  const auto& call = find_call(probe, layer_name("hr_decoder", layer) + ".cross");
  if (hr_index >= call.queries) {
    throw std::out_of_range("HR coordinate index " + std::to_string(hr_index) +
                            " out of range (m = " + std::to_string(call.queries) + ")");
  }
  if (call.keys != cfg.lr_tokens()) {
    throw DimensionError("HR attention keys do not form the LR grid");
  }
  AttentionMaps maps;
  maps.heads = call.heads;
  maps.height = cfg.lr_height;
  maps.width = cfg.lr_width;
  maps.rows = rows_of(call, hr_index);
  maps.per_head = maps.rows;
  return maps;
}

// ---- instantiations -------------------------------------------------------

#define KST_MODEL_INSTANTIATE(T)                                                                 \
  template class ModelParams<T>;                                                                 \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                     \
  template Tensor<T> positional_encoding_table<T>(const std::vector<std::pair<double, double>>&, \
                                                  std::size_t);                                  \
  template TokenSequence<T> tokenize<T>(const SampledPointSet&, const ModelParams<T>&,           \
                                        const ModelConfig&);                                     \
  template TokenSequence<T> encode<T>(const TokenSequence<T>&, const ModelParams<T>&,            \
                                      const ModelConfig&, AttentionProbe*);                      \
  template LrDecodeResult<T> lr_decode<T>(const TokenSequence<T>&, const ModelParams<T>&,        \
                                          const ModelConfig&, std::size_t, std::size_t,          \
                                          const std::vector<std::pair<double, double>>&,         \
                                          AttentionProbe*);                                      \
  template HrDecodeResult<T> hr_decode<T>(const TokenSequence<T>&, const ModelParams<T>&,        \
                                          const ModelConfig&, const SampledPointSet&,            \
                                          AttentionProbe*);                                      \
  template ReconstructionOutputs<T> forward<T>(const SampledPointSet&, const ModelParams<T>&,    \
                                               const ModelConfig&, const ForwardOptions&);

KST_MODEL_INSTANTIATE(float)
KST_MODEL_INSTANTIATE(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

#undef KST_MODEL_INSTANTIATE

}  // namespace kst
