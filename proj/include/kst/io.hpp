#pragma once

#include "kst/bench.hpp"
#include "kst/metrics.hpp"
#include "kst/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace kst {

// Malformed or incompatible files and configs.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---- configuration --------------------------------------------------------

struct DataSpec {
  std::size_t train_count = 200;
  std::size_t test_count = 50;
  std::uint64_t seed = 1;
  // Held-out samples start at this index so they never overlap training ones.
  std::size_t test_first_index = 1000000;
  std::size_t height = 64;
  std::size_t width = 64;
  // Optional directory written by gen-data; empty means generate in memory.
  std::string dir;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataSpec data;
  std::string out_dir = "out";
  int precision = 32;
  // Checkpoint every this many steps (0: only at the end).
  std::size_t checkpoint_every = 0;
  // dump-attn: which held-out sample, which sampled points / HR bins.
  std::size_t attn_sample = 0;
  std::vector<std::size_t> attn_points = {0};
  BenchConfig bench;
};

RunConfig default_run_config();

json to_json(const ModelConfig& c);
json to_json(const MaskSpec& c);
json to_json(const TrainConfig& c);
json to_json(const DataSpec& c);
json to_json(const BenchConfig& c);
json to_json(const RunConfig& c);

// Missing keys keep their defaults; unknown keys raise FormatError.
ModelConfig model_config_from_json(const json& j, ModelConfig base = {});
MaskSpec mask_spec_from_json(const json& j, MaskSpec base = {});
TrainConfig train_config_from_json(const json& j, TrainConfig base = {});
RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const fs::path& path);

// ---- atomic writes --------------------------------------------------------

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// ---- checkpoints ----------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'K', 'S', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Parameters and optimizer moments are stored as little-endian float32.
struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::size_t step = 0;
  std::size_t total_steps = 0;
  int precision = 32;
  ModelParams<float> params;
  OptimizerState<float> optimizer;
};

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const fs::path& path);

template <typename T>
Checkpoint make_checkpoint(const TrainState<T>& state, const ModelConfig& model,
                           const TrainConfig& train, int precision);
template <typename T>
TrainState<T> train_state_from_checkpoint(const Checkpoint& ck);

// Rejects missing or extra names and shape mismatches against `cfg`.
void validate_params(const ModelParams<float>& params, const ModelConfig& cfg);

// ---- grid files -----------------------------------------------------------

inline constexpr char kGridMagic[8] = {'K', 'S', 'T', 'G', 'R', 'I', 'D', '\0'};
inline constexpr std::uint32_t kGridVersion = 1;

enum class GridKind : std::uint32_t { Mask = 1, ComplexImage = 2, Spectrogram = 3, RealImage = 4 };

struct GridFile {
  GridKind kind = GridKind::RealImage;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  json meta = json::object();
  std::vector<float> data;  // channel-major: [channels, height, width]
};

std::string serialize_grid(const GridFile& g);
GridFile deserialize_grid(const std::string& bytes);
void save_grid(const fs::path& path, const GridFile& g);
GridFile load_grid(const fs::path& path);

GridFile mask_to_grid(const Mask& mask);
Mask mask_from_grid(const GridFile& g);

// Ground-truth complex image plus generator parameters in the metadata.
GridFile phantom_to_grid(const PhantomSample& s);
// The spectrogram is recomputed from the stored image so the pair is exact.
PhantomSample phantom_from_grid(const GridFile& g);

GridFile complex_to_grid(const ComplexGrid& c, GridKind kind);
ComplexGrid complex_from_grid(const GridFile& g);

// Writes sample_00000.kgrid ... plus manifest.json.
void write_dataset(const fs::path& dir, const std::vector<PhantomSample>& samples,
                   std::uint64_t seed);
std::vector<PhantomSample> read_dataset(const fs::path& dir);

// ---- images ---------------------------------------------------------------

// 8-bit grayscale PNG, linearly mapping [0, scale] to [0, 255] with clamping.
// scale <= 0 uses the image maximum (an all-zero image renders black).
void write_png(const fs::path& path, const Image& img, double scale = 0.0);
// Reads an 8-bit grayscale PNG back as values in [0, 255].
Image read_png(const fs::path& path);

// ---- CSV ------------------------------------------------------------------

std::string loss_csv_header();
std::string loss_csv_row(const LossRecord& r);
std::string loss_csv(const std::vector<LossRecord>& rows);
std::vector<LossRecord> parse_loss_csv(const std::string& text);

std::string metrics_csv(const EvalReport& rep);
std::string summary_csv(const EvalReport& rep);
std::string bench_csv(const std::vector<CostProfile>& rows);

}  // namespace kst
