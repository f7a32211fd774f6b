#include "kst/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <set>
#include <sstream>

namespace kst {

// ---- configuration --------------------------------------------------------

namespace {

// Applies `setters[key]` for each key in `j`; anything else is an error.
void apply_keys(const json& j, const std::string& where,
                const std::map<std::string, std::function<void(const json&)>>& setters) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw FormatError(where + ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw FormatError(where + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.bench.grids = {{32, 32, 8, 8, 205}, {64, 32, 8, 8, 410}, {64, 64, 8, 8, 819},
                   {128, 64, 8, 8, 1638}};
  c.bench.hr_layers = {3};
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"d", c.d},
          {"n_heads", c.n_heads},
          {"n_enc", c.n_enc},
          {"n_lr", c.n_lr},
          {"n_hr", c.n_hr},
          {"ffn_width", c.ffn_width},
          {"lr_height", c.lr_height},
          {"lr_width", c.lr_width},
          {"hr_height", c.hr_height},
          {"hr_width", c.hr_width},
          {"refine_channels", c.refine_channels},
          {"refine_depth", c.refine_depth},
          {"leaky_slope", c.leaky_slope},
          {"use_lr_decoder", c.use_lr_decoder},
          {"use_refinement", c.use_refinement},
          {"data_consistency", c.data_consistency}};
}

json to_json(const MaskSpec& c) {
  return {{"kind", to_string(c.kind)},
          {"acceleration", c.acceleration},
          {"center_fraction", c.center_fraction},
          {"sigma_fraction", c.sigma_fraction},
          {"seed", c.seed},
          {"offset", c.offset}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"schedule_horizon", c.schedule_horizon},
          {"hr_grad_stop_epochs", c.hr_grad_stop_epochs},
          {"seed", c.seed},
          {"mask", to_json(c.mask)},
          {"lr_loss_weight", c.lr_loss_weight},
          {"hr_loss_weight", c.hr_loss_weight}};
}

json to_json(const DataSpec& c) {
  return {{"train_count", c.train_count},
          {"test_count", c.test_count},
          {"seed", c.seed},
          {"test_first_index", c.test_first_index},
          {"height", c.height},
          {"width", c.width},
          {"dir", c.dir}};
}

json to_json(const BenchConfig& c) {
  json grids = json::array();
  for (const auto& g : c.grids) {
    grids.push_back({{"hr_height", g.hr_height},
                     {"hr_width", g.hr_width},
                     {"lr_height", g.lr_height},
                     {"lr_width", g.lr_width},
                     {"n", g.n}});
  }
  return {{"grids", grids},
          {"hr_layers", c.hr_layers},
          {"runs", c.runs},
          {"seed", c.seed},
          {"measure_standard", c.measure_standard}};
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"data", to_json(c.data)},
          {"out_dir", c.out_dir},
          {"precision", c.precision},
          {"checkpoint_every", c.checkpoint_every},
          {"attn_sample", c.attn_sample},
          {"attn_points", c.attn_points},
          {"bench", to_json(c.bench)}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  apply_keys(j, "model",
             {{"d", set(c.d)},
              {"n_heads", set(c.n_heads)},
              {"n_enc", set(c.n_enc)},
              {"n_lr", set(c.n_lr)},
              {"n_hr", set(c.n_hr)},
              {"ffn_width", set(c.ffn_width)},
              {"lr_height", set(c.lr_height)},
              {"lr_width", set(c.lr_width)},
              {"hr_height", set(c.hr_height)},
              {"hr_width", set(c.hr_width)},
              {"refine_channels", set(c.refine_channels)},
              {"refine_depth", set(c.refine_depth)},
              {"leaky_slope", set(c.leaky_slope)},
              {"use_lr_decoder", set(c.use_lr_decoder)},
              {"use_refinement", set(c.use_refinement)},
              {"data_consistency", set(c.data_consistency)}});
  return c;
}

MaskSpec mask_spec_from_json(const json& j, MaskSpec c) {
  apply_keys(j, "mask",
             {{"kind", [&c](const json& v) { c.kind = mask_kind_from_string(v.get<std::string>()); }},
              {"acceleration", set(c.acceleration)},
              {"center_fraction", set(c.center_fraction)},
              {"sigma_fraction", set(c.sigma_fraction)},
              {"seed", set(c.seed)},
              {"offset", set(c.offset)}});
  return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  apply_keys(j, "train",
             {{"epochs", set(c.epochs)},
              {"batch_size", set(c.batch_size)},
              {"learning_rate", set(c.learning_rate)},
              {"weight_decay", set(c.weight_decay)},
              {"schedule_horizon", set(c.schedule_horizon)},
              {"hr_grad_stop_epochs", set(c.hr_grad_stop_epochs)},
              {"seed", set(c.seed)},
              {"mask", [&c](const json& v) { c.mask = mask_spec_from_json(v, c.mask); }},
              {"lr_loss_weight", set(c.lr_loss_weight)},
              {"hr_loss_weight", set(c.hr_loss_weight)}});
  return c;
}

namespace {

DataSpec data_spec_from_json(const json& j, DataSpec c) {
  apply_keys(j, "data",
             {{"train_count", set(c.train_count)},
              {"test_count", set(c.test_count)},
              {"seed", set(c.seed)},
              {"test_first_index", set(c.test_first_index)},
              {"height", set(c.height)},
              {"width", set(c.width)},
              {"dir", set(c.dir)}});
  return c;
}

BenchGrid bench_grid_from_json(const json& j) {
  BenchGrid g;
  apply_keys(j, "bench.grids[]",
             {{"hr_height", set(g.hr_height)},
              {"hr_width", set(g.hr_width)},
              {"lr_height", set(g.lr_height)},
              {"lr_width", set(g.lr_width)},
              {"n", set(g.n)}});
  return g;
}

BenchConfig bench_config_from_json(const json& j, BenchConfig c) {
  apply_keys(j, "bench",
             {{"grids",
               [&c](const json& v) {
                 c.grids.clear();
                 for (const auto& g : v) c.grids.push_back(bench_grid_from_json(g));
               }},
              {"hr_layers", set(c.hr_layers)},
              {"runs", set(c.runs)},
              {"seed", set(c.seed)},
              {"measure_standard", set(c.measure_standard)}});
  return c;
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c = default_run_config();
  apply_keys(j, "config",
             {{"model", [&c](const json& v) { c.model = model_config_from_json(v, c.model); }},
              {"train", [&c](const json& v) { c.train = train_config_from_json(v, c.train); }},
              {"data", [&c](const json& v) { c.data = data_spec_from_json(v, c.data); }},
              {"out_dir", set(c.out_dir)},
              {"precision", set(c.precision)},
              {"checkpoint_every", set(c.checkpoint_every)},
              {"attn_sample", set(c.attn_sample)},
              {"attn_points", set(c.attn_points)},
              {"bench", [&c](const json& v) { c.bench = bench_config_from_json(v, c.bench); }}});
  if (c.precision != 32 && c.precision != 64) {
    throw FormatError("config.precision must be 32 or 64");
  }
  try {
    c.model.validate();
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---- files ----------------------------------------------------------------

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// ---- binary helpers -------------------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError(what_ + ": truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) {
    if (p > b_.size()) throw FormatError(what_ + ": offset out of range");
    pos_ = p;
  }
  std::size_t size() const { return b_.size(); }

 private:
  const std::string& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

void check_magic(Reader& r, const char (&magic)[8], const std::string& what) {
  if (r.size() < 8 || r.bytes(8) != std::string(magic, 8)) {
    throw FormatError(what + ": bad magic bytes");
  }
}

json parse_header(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(what + ": corrupt header: " + e.what());
  }
}

}  // namespace

// ---- checkpoints ----------------------------------------------------------

void validate_params(const ModelParams<float>& params, const ModelConfig& cfg) {
  const auto layout = param_layout(cfg);
  std::set<std::string> expected;
  for (const auto& [name, shape] : layout) {
    expected.insert(name);
    if (!params.contains(name)) throw FormatError("checkpoint is missing parameter '" + name + "'");
    if (params.at(name).shape() != shape) {
      throw FormatError("parameter '" + name + "' has shape " +
                        shape_str(params.at(name).shape()) + ", expected " + shape_str(shape));
    }
  }
  for (const auto& [name, _] : params.tensors()) {
    if (!expected.count(name)) throw FormatError("checkpoint has unexpected parameter '" + name + "'");
  }
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  json tensors = json::array();
  std::string data;
  auto add = [&](const std::string& name, const Shape& shape, std::span<const float> v) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", data.size()}});
    for (float x : v) put_f32(data, x);
  };
  for (const auto& [name, t] : ck.params.tensors()) add(name, t.shape(), t.data());
  for (const auto& [name, m] : ck.optimizer.first_moment) add("adam.m." + name, {m.size()}, m);
  for (const auto& [name, v] : ck.optimizer.second_moment) add("adam.v." + name, {v.size()}, v);
  const json header = {{"format", "kst-checkpoint"},
                       {"model", to_json(ck.model)},
                       {"train", to_json(ck.train)},
                       {"step", ck.step},
                       {"optimizer_step", ck.optimizer.step},
                       {"total_steps", ck.total_steps},
                       {"precision", ck.precision},
                       {"tensors", tensors}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u64(out, h.size());
  out += h;
  out += data;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const std::string what = "checkpoint";
  Reader r(bytes, what);
  check_magic(r, kCheckpointMagic, what);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t hlen = r.u64();
  const json h = parse_header(r.bytes(hlen), what);
  const std::size_t data_start = r.pos();
  Checkpoint ck;
  try {
    if (h.at("format") != "kst-checkpoint") throw FormatError("checkpoint: wrong format tag");
    ck.model = model_config_from_json(h.at("model"));
    ck.train = train_config_from_json(h.at("train"));
    ck.step = h.at("step").get<std::size_t>();
    ck.optimizer.step = h.at("optimizer_step").get<std::size_t>();
    ck.total_steps = h.at("total_steps").get<std::size_t>();
    ck.precision = h.at("precision").get<int>();
    std::size_t expected_offset = 0;
    for (const auto& t : h.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::size_t>();
      if (offset != expected_offset) throw FormatError("checkpoint: tensor '" + name + "' misplaced");
      const std::size_t n = shape_numel(shape);
      r.seek(data_start + offset);
      std::vector<float> v(n);
      for (auto& x : v) x = r.f32();
      expected_offset += 4 * n;
      if (name.rfind("adam.m.", 0) == 0) {
        ck.optimizer.first_moment[name.substr(7)] = std::move(v);
      } else if (name.rfind("adam.v.", 0) == 0) {
        ck.optimizer.second_moment[name.substr(7)] = std::move(v);
      } else {
        ck.params.insert(name, Tensor<float>::from(shape, std::move(v), true));
      }
    }
    if (data_start + expected_offset != bytes.size()) {
      throw FormatError("checkpoint: trailing bytes after tensor data");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  validate_params(ck.params, ck.model);
  for (const auto* moments : {&ck.optimizer.first_moment, &ck.optimizer.second_moment}) {
    for (const auto& [name, v] : *moments) {
      if (!ck.params.contains(name) || ck.params.at(name).size() != v.size()) {
        throw FormatError("checkpoint: optimizer state for unknown or mis-sized '" + name + "'");
      }
    }
  }
  return ck;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const fs::path& path) {
  return deserialize_checkpoint(read_file(path));
}

template <typename T>
Checkpoint make_checkpoint(const TrainState<T>& state, const ModelConfig& model,
                           const TrainConfig& train, int precision) {
  Checkpoint ck;
  ck.model = model;
  ck.train = train;
  ck.step = state.step();
  ck.total_steps = state.total_steps;
  ck.precision = precision;
  ck.params = state.params.template cast<float>();
  ck.optimizer.step = state.optimizer.step;
  auto conv = [](const std::map<std::string, std::vector<T>>& src,
                 std::map<std::string, std::vector<float>>& dst) {
    for (const auto& [name, v] : src) dst[name] = std::vector<float>(v.begin(), v.end());
  };
  conv(state.optimizer.first_moment, ck.optimizer.first_moment);
  conv(state.optimizer.second_moment, ck.optimizer.second_moment);
  return ck;
}

template <typename T>
TrainState<T> train_state_from_checkpoint(const Checkpoint& ck) {
  TrainState<T> s;
  s.params = ck.params.template cast<T>();
  s.total_steps = ck.total_steps;
  s.optimizer.step = ck.optimizer.step;
  auto conv = [](const std::map<std::string, std::vector<float>>& src,
                 std::map<std::string, std::vector<T>>& dst) {
    for (const auto& [name, v] : src) dst[name] = std::vector<T>(v.begin(), v.end());
  };
  conv(ck.optimizer.first_moment, s.optimizer.first_moment);
  conv(ck.optimizer.second_moment, s.optimizer.second_moment);
  return s;
}

template Checkpoint make_checkpoint<float>(const TrainState<float>&, const ModelConfig&,
                                           const TrainConfig&, int);
template Checkpoint make_checkpoint<double>(const TrainState<double>&, const ModelConfig&,
                                            const TrainConfig&, int);
template TrainState<float> train_state_from_checkpoint<float>(const Checkpoint&);
template TrainState<double> train_state_from_checkpoint<double>(const Checkpoint&);

// ---- grid files -----------------------------------------------------------

std::string serialize_grid(const GridFile& g) {
  if (g.data.size() != g.channels * g.height * g.width) {
    throw DimensionError("grid file: data length does not match dimensions");
  }
  const std::string meta = g.meta.dump();
  std::string out(kGridMagic, 8);
  put_u32(out, kGridVersion);
  put_u32(out, static_cast<std::uint32_t>(g.kind));
  put_u64(out, g.height);
  put_u64(out, g.width);
  put_u64(out, g.channels);
  put_u64(out, meta.size());
  out += meta;
  for (float x : g.data) put_f32(out, x);
  return out;
}

GridFile deserialize_grid(const std::string& bytes) {
  const std::string what = "grid file";
  Reader r(bytes, what);
  check_magic(r, kGridMagic, what);
  const std::uint32_t version = r.u32();
  if (version != kGridVersion) {
    throw FormatError("grid format version " + std::to_string(version) + " is not supported");
  }
  GridFile g;
  const std::uint32_t kind = r.u32();
  if (kind < 1 || kind > 4) throw FormatError("grid file: unknown kind tag " + std::to_string(kind));
  g.kind = static_cast<GridKind>(kind);
  g.height = r.u64();
  g.width = r.u64();
  g.channels = r.u64();
  g.meta = parse_header(r.bytes(r.u64()), what);
  const std::size_t n = g.channels * g.height * g.width;
  if (r.size() - r.pos() != 4 * n) throw FormatError("grid file: payload size mismatch");
  g.data.resize(n);
  for (auto& x : g.data) x = r.f32();
  return g;
}

void save_grid(const fs::path& path, const GridFile& g) { write_file_atomic(path, serialize_grid(g)); }

GridFile load_grid(const fs::path& path) { return deserialize_grid(read_file(path)); }

GridFile mask_to_grid(const Mask& mask) {
  GridFile g;
  g.kind = GridKind::Mask;
  g.height = mask.height();
  g.width = mask.width();
  g.channels = 1;
  const auto& m = mask.meta();
  g.meta = {{"kind", to_string(m.kind)},
            {"target_acceleration", m.target_acceleration},
            {"achieved_acceleration", acceleration(mask)},
            {"seed", m.seed},
            {"offset", m.offset},
            {"center_fraction", m.center_fraction},
            {"sigma_fraction", m.sigma_fraction},
            {"axis", m.axis}};
  g.data.assign(mask.bits().begin(), mask.bits().end());
  return g;
}

Mask mask_from_grid(const GridFile& g) {
  if (g.kind != GridKind::Mask || g.channels != 1) throw FormatError("grid file is not a mask");
  std::vector<std::uint8_t> bits(g.data.size());
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (g.data[i] != 0.0f && g.data[i] != 1.0f) throw FormatError("mask values must be 0 or 1");
    bits[i] = g.data[i] != 0.0f;
  }
  MaskMeta meta;
  try {
    meta.kind = mask_kind_from_string(g.meta.value("kind", std::string("custom")));
    meta.target_acceleration = g.meta.value("target_acceleration", 1.0);
    meta.seed = g.meta.value("seed", std::uint64_t{0});
    meta.offset = g.meta.value("offset", 0);
    meta.center_fraction = g.meta.value("center_fraction", 0.0);
    meta.sigma_fraction = g.meta.value("sigma_fraction", 0.0);
    meta.axis = g.meta.value("axis", std::string("columns"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask metadata: ") + e.what());
  }
  try {
    return Mask(g.height, g.width, std::move(bits), meta);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("mask: ") + e.what());
  }
}

GridFile complex_to_grid(const ComplexGrid& c, GridKind kind) {
  GridFile g;
  g.kind = kind;
  g.height = c.height;
  g.width = c.width;
  g.channels = 2;
  g.data.reserve(2 * c.size());
  for (double v : c.re) g.data.push_back(static_cast<float>(v));
  for (double v : c.im) g.data.push_back(static_cast<float>(v));
  return g;
}

ComplexGrid complex_from_grid(const GridFile& g) {
  if (g.channels != 2) throw FormatError("grid file is not complex (2 channels)");
  ComplexGrid c(g.height, g.width);
  const std::size_t n = c.size();
  for (std::size_t i = 0; i < n; ++i) {
    c.re[i] = g.data[i];
    c.im[i] = g.data[n + i];
  }
  return c;
}

GridFile phantom_to_grid(const PhantomSample& s) {
  GridFile g = complex_to_grid(s.image, GridKind::ComplexImage);
  json ellipses = json::array();
  for (const auto& e : s.ellipses) {
    ellipses.push_back({e.center_row, e.center_col, e.semi_row, e.semi_col, e.angle, e.intensity});
  }
  g.meta = {{"seed", s.seed},
            {"index", s.index},
            {"ellipses", ellipses},
            {"phase", {s.phase.a, s.phase.b, s.phase.c, s.phase.e}}};
  return g;
}

PhantomSample phantom_from_grid(const GridFile& g) {
  if (g.kind != GridKind::ComplexImage) throw FormatError("grid file is not a complex image");
  PhantomSample s;
  s.image = complex_from_grid(g);
  s.spectrogram = fft2_centered(s.image);
  try {
    s.seed = g.meta.value("seed", std::uint64_t{0});
    s.index = g.meta.value("index", std::size_t{0});
    if (g.meta.contains("ellipses")) {
      for (const auto& e : g.meta.at("ellipses")) {
        s.ellipses.push_back({e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>(),
                              e.at(3).get<double>(), e.at(4).get<double>(),
                              e.at(5).get<double>()});
      }
    }
    if (g.meta.contains("phase")) {
      const auto& p = g.meta.at("phase");
      s.phase = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(),
                 p.at(3).get<double>()};
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("phantom metadata: ") + e.what());
  }
  return s;
}

namespace {

std::string sample_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu.kgrid", i);
  return buf;
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<PhantomSample>& samples,
                   std::uint64_t seed) {
  fs::create_directories(dir);
  json files = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    save_grid(dir / sample_name(i), phantom_to_grid(samples[i]));
    files.push_back(sample_name(i));
  }
  const json manifest = {{"seed", seed},
                         {"count", samples.size()},
                         {"height", samples.empty() ? 0 : samples[0].image.height},
                         {"width", samples.empty() ? 0 : samples[0].image.width},
                         {"files", files}};
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<PhantomSample> read_dataset(const fs::path& dir) {
  const json m = parse_header(read_file(dir / "manifest.json"), "manifest");
  std::vector<PhantomSample> out;
  try {
    const auto files = m.at("files");
    if (files.size() != m.at("count").get<std::size_t>()) {
      throw FormatError("manifest: count does not match file list");
    }
    for (const auto& f : files) out.push_back(phantom_from_grid(load_grid(dir / f.get<std::string>())));
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return out;
}

// ---- images ---------------------------------------------------------------

void write_png(const fs::path& path, const Image& img, double scale) {
  if (img.height == 0 || img.width == 0) throw DimensionError("write_png: empty image");
  if (scale <= 0.0) scale = img.max();
  std::vector<png_byte> pixels(img.height * img.width);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = scale > 0.0 ? img.pixels[i] / scale : 0.0;
    pixels[i] = static_cast<png_byte>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
  }
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&im, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + im.message);
  }
  std::string buf(size, '\0');
  if (!png_image_write_to_memory(&im, buf.data(), &size, 0, pixels.data(), 0, nullptr)) {
    throw std::runtime_error(std::string("png encode failed: ") + im.message);
  }
  buf.resize(size);
  write_file_atomic(path, buf);
}

Image read_png(const fs::path& path) {
  const std::string bytes = read_file(path);
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&im, bytes.data(), bytes.size())) {
    throw FormatError(path.string() + ": " + im.message);
  }
  im.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, pixels.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + im.message);
  }
  Image out{im.height, im.width, std::vector<double>(pixels.begin(), pixels.end())};
  return out;
}

// ---- CSV ------------------------------------------------------------------

namespace {

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string loss_csv_header() { return "step,epoch,loss,lr_loss,hr_loss,learning_rate\n"; }

std::string loss_csv_row(const LossRecord& r) {
  return std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + num(r.loss) + "," +
         num(r.lr_loss) + "," + num(r.hr_loss) + "," + num(r.learning_rate) + "\n";
}

std::string loss_csv(const std::vector<LossRecord>& rows) {
  std::string out = loss_csv_header();
  for (const auto& r : rows) out += loss_csv_row(r);
  return out;
}

std::vector<LossRecord> parse_loss_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<LossRecord> out;
  if (!std::getline(in, line) || line + "\n" != loss_csv_header()) {
    throw FormatError("loss CSV: unexpected header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf,%lf,%lf,%lf%c", &r.step, &r.epoch, &r.loss,
                    &r.lr_loss, &r.hr_loss, &r.learning_rate, &tail) != 6) {
      throw FormatError("loss CSV: malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

std::string metrics_csv(const EvalReport& rep) {
  std::ostringstream os;
  const std::size_t layers = rep.mean_layer_psnr.size();
  os << "index,psnr,ssim,zero_filled_psnr,zero_filled_ssim";
  for (std::size_t i = 0; i < layers; ++i) os << ",layer" << i << "_psnr";
  os << "\n";
  for (const auto& s : rep.samples) {
    os << s.index << "," << num(s.psnr) << "," << num(s.ssim) << "," << num(s.zero_filled_psnr)
       << "," << num(s.zero_filled_ssim);
    for (double v : s.layer_psnr) os << "," << num(v);
    os << "\n";
  }
  return os.str();
}

std::string summary_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "metric,mean,std\n";
  os << "psnr," << num(rep.mean_psnr) << "," << num(rep.std_psnr) << "\n";
  os << "ssim," << num(rep.mean_ssim) << "," << num(rep.std_ssim) << "\n";
  os << "zero_filled_psnr," << num(rep.mean_zero_filled_psnr) << ","
     << num(rep.std_zero_filled_psnr) << "\n";
  os << "zero_filled_ssim," << num(rep.mean_zero_filled_ssim) << ","
     << num(rep.std_zero_filled_ssim) << "\n";
  for (std::size_t i = 0; i < rep.mean_layer_psnr.size(); ++i) {
    std::vector<double> v;
    for (const auto& s : rep.samples) v.push_back(s.layer_psnr[i]);
    os << "layer" << i << "_psnr," << num(rep.mean_layer_psnr[i]) << "," << num(mean_std(v).second)
       << "\n";
  }
  return os.str();
}

std::string bench_csv(const std::vector<CostProfile>& rows) {
  std::ostringstream os;
  os << "m,n,l,d,n_enc,n_lr,n_hr,std_cross,std_self,std_total,hier_lr_cross,hier_lr_self,"
        "hier_hr_cross,hier_total,hier_peak,encoder_self,measured_hier_total,"
        "measured_hier_peak,measured_standard_total,measured_encoder_total,wall_ms_median\n";
  for (const auto& p : rows) {
    os << p.m << "," << p.n << "," << p.l << "," << p.d << "," << p.n_enc << "," << p.n_lr << ","
       << p.n_hr << "," << p.standard.cross << "," << p.standard.self << "," << p.standard.total
       << "," << p.hier.lr_cross << "," << p.hier.lr_self << "," << p.hier.hr_cross << ","
       << p.hier.total << "," << p.hier.peak << "," << p.encoder_self << ","
       << p.measured_hier_total << "," << p.measured_hier_peak << ","
       << p.measured_standard_total << "," << p.measured_encoder_total << ","
       << num(p.wall_ms_median) << "\n";
  }
  return os.str();
}

}  // namespace kst
