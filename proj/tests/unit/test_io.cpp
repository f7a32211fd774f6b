#include "kst/io.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <unistd.h>

using namespace kst;
using kst::test::tiny_config;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("kst_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Checkpoint small_checkpoint() {
  auto cfg = tiny_config();
  TrainConfig t;
  t.epochs = 1;
  auto data = generate_phantoms(2, 16, 16, 1);
  auto state = initial_train_state<float>(cfg, t, data.size());
  train(state, cfg, t, data);
  return make_checkpoint(state, cfg, t, 32);
}

}  // namespace

TEST_CASE("checkpoint round trip is byte-identical") {
  auto ck = small_checkpoint();
  const auto bytes = serialize_checkpoint(ck);
  auto back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.step == 2);
  CHECK(back.optimizer.step == 2);
  CHECK(back.model == ck.model);
  CHECK(back.train == ck.train);

  auto dir = scratch_dir("ckpt");
  save_checkpoint(dir / "a.kckpt", ck);
  CHECK(read_file(dir / "a.kckpt") == bytes);
  CHECK(!fs::exists(dir / "a.kckpt.tmp"));
  auto state = train_state_from_checkpoint<double>(load_checkpoint(dir / "a.kckpt"));
  CHECK(state.step() == 2);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint loading rejects bad versions, magic, truncation and names") {
  auto ck = small_checkpoint();
  auto bytes = serialize_checkpoint(ck);

  auto wrong_version = bytes;
  wrong_version[8] = 7;
  CHECK_THROWS_WITH_AS(deserialize_checkpoint(wrong_version), doctest::Contains("version"), FormatError);

  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(wrong_magic), FormatError);

  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 4)), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);

  auto missing = ck;
  missing.params.tensors().erase("encoder.norm.gain");
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(missing)), FormatError);

  auto extra = ck;
  extra.params.insert("stray.weight", Tensor<float>::zeros({2}));
  CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint(extra)), FormatError);
}

TEST_CASE("run config: defaults, overrides and unknown keys") {
  auto c = run_config_from_json(json::object());
  CHECK(c.model == ModelConfig{});
  CHECK(c.data.train_count == 200);
  auto d = run_config_from_json(json::parse(R"({"model": {"d": 32}, "train": {"mask": {"kind": "gaussian2d"}}})"));
  CHECK(d.model.d == 32);
  CHECK(d.train.mask.kind == MaskKind::Gaussian2D);
  CHECK(d.train.mask.acceleration == 2.5);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"bogus": 1})")), FormatError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"depth": 1}})")), FormatError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"precision": 16})")), FormatError);
  CHECK_THROWS_AS(run_config_from_json(json::parse(R"({"model": {"n_heads": 5}})")), FormatError);
  // Serialized defaults parse back to the same values.
  auto again = run_config_from_json(to_json(default_run_config()));
  CHECK(to_json(again) == to_json(default_run_config()));
}

TEST_CASE("grid files round trip masks, images and phantoms") {
  auto mask = make_uniform_1d_mask(16, 32, {2.5, 0.08, 1});
  auto g = deserialize_grid(serialize_grid(mask_to_grid(mask)));
  CHECK(g.kind == GridKind::Mask);
  auto m2 = mask_from_grid(g);
  CHECK(m2.bits() == mask.bits());
  CHECK(m2.meta().offset == 1);

  auto s = generate_phantom(16, 16, 4, 9);
  auto p = phantom_from_grid(deserialize_grid(serialize_grid(phantom_to_grid(s))));
  CHECK(p.index == 9);
  CHECK(p.seed == 4);
  for (std::size_t i = 0; i < 256; ++i) {
    CHECK(p.image.re[i] == static_cast<float>(s.image.re[i]));
    CHECK(std::abs(p.spectrogram.re[i] - s.spectrogram.re[i]) < 1e-6);
  }
  CHECK_THROWS_AS(mask_from_grid(phantom_to_grid(s)), FormatError);
  auto bytes = serialize_grid(mask_to_grid(mask));
  bytes[8] = 9;
  CHECK_THROWS_AS(deserialize_grid(bytes), FormatError);
}

TEST_CASE("dataset directory round trip") {
  auto dir = scratch_dir("data");
  auto samples = generate_phantoms(3, 16, 16, 8);
  write_dataset(dir, samples, 8);
  CHECK(fs::exists(dir / "manifest.json"));
  auto back = read_dataset(dir);
  REQUIRE(back.size() == 3);
  CHECK(back[2].index == 2);
  fs::remove_all(dir);
}

TEST_CASE("png round trip") {
  auto dir = scratch_dir("png");
  Image img{3, 4, {0, 0.5, 1, 2, 0.25, 0, 0, 0, 1, 1, 1, 1}};
  write_png(dir / "a.png", img, 1.0);
  auto back = read_png(dir / "a.png");
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(back.pixels[0] == 0);
  CHECK(back.pixels[2] == 255);
  CHECK(back.pixels[3] == 255);
  CHECK(back.pixels[1] == doctest::Approx(128).epsilon(0.01));
  write_png(dir / "b.png", Image{2, 2, {0, 0, 0, 0}});
  for (double v : read_png(dir / "b.png").pixels) CHECK(v == 0);
  fs::remove_all(dir);
}

TEST_CASE("loss CSV keeps full precision") {
  std::vector<LossRecord> rows = {{0, 0, 1.0 / 3.0, 0.1, 0.2333333333333333, 5e-4},
                                  {1, 0, 2.5, 1.25, 1.25, 4.9e-4}};
  auto text = loss_csv(rows);
  CHECK(text.rfind(loss_csv_header(), 0) == 0);
  auto back = parse_loss_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].loss == rows[0].loss);
  CHECK(back[1].learning_rate == rows[1].learning_rate);
  CHECK_THROWS(parse_loss_csv("nonsense\n1,2\n"));
}

TEST_CASE("metrics and summary CSVs") {
  EvalReport rep;
  rep.samples = {{0, 30.0, 0.9, 25.0, 0.8, {28.0, 30.0}}, {1, 32.0, 0.95, 26.0, 0.85, {29.0, 32.0}}};
  rep.mean_psnr = 31.0;
  rep.mean_layer_psnr = {28.5, 31.0};
  auto m = metrics_csv(rep);
  CHECK(m.find("index,psnr,ssim,zero_filled_psnr,zero_filled_ssim,layer0_psnr,layer1_psnr") == 0);
  CHECK(std::count(m.begin(), m.end(), '\n') == 3);
  auto s = summary_csv(rep);
  CHECK(s.find("metric,mean,std") == 0);
  CHECK(s.find("psnr,31") != std::string::npos);
}
