#include "kst/training.hpp"

#include "../support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

using namespace kst;
using kst::test::tiny_config;

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_learning_rate(5e-4, 0, 100) == 5e-4);
  CHECK(cosine_learning_rate(5e-4, 50, 100) == doctest::Approx(2.5e-4));
  CHECK(cosine_learning_rate(5e-4, 100, 100) == 0.0);
  CHECK(cosine_learning_rate(5e-4, 150, 100) == 0.0);
  CHECK(cosine_learning_rate(5e-4, 25, 100) == doctest::Approx(0.5 * 5e-4 * (1 + std::cos(std::numbers::pi / 4))));
}

TEST_CASE("adamw matches a hand-rolled update") {
  ModelParams<double> params;
  params.insert("w", Tensor<double>::from({3}, {0.5, -1.0, 2.0}, true));
  OptimizerState<double> state;
  AdamWConfig cfg;
  cfg.weight_decay = 0.01;
  const std::vector<double> g1 = {0.1, -0.2, 0.0}, g2 = {-0.3, 0.4, 1.0};
  double w[3] = {0.5, -1.0, 2.0}, m[3] = {}, v[3] = {};
  const double lr[2] = {1e-2, 5e-3};
  for (int t = 1; t <= 2; ++t) {
    const auto& g = t == 1 ? g1 : g2;
    params.zero_grad();
    backward(sum(mul(params.at("w"), Tensor<double>::from({3}, g))));
    adamw_step(params, state, lr[t - 1], cfg);
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] = w[i] - lr[t - 1] * 0.01 * w[i] - lr[t - 1] * mh / (std::sqrt(vh) + 1e-8);
      CHECK(std::abs(params.at("w").data()[i] - w[i]) < 1e-12);
    }
  }
  CHECK(state.step == 2);
}

TEST_CASE("adamw with zero gradient and zero decay leaves parameters alone") {
  ModelParams<double> params;
  params.insert("w", Tensor<double>::from({2}, {0.25, -4.0}, true));
  OptimizerState<double> state;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(params, state, 1e-3, cfg);
  CHECK(params.at("w").data()[0] == 0.25);
  CHECK(params.at("w").data()[1] == -4.0);
}

TEST_CASE("deep supervision loss is a sum of plain L2 norms") {
  ModelConfig cfg;
  cfg.hr_height = cfg.hr_width = 4;
  cfg.lr_height = cfg.lr_width = 2;
  auto s = generate_phantom(4, 4, 1, 0);
  auto targets = SupervisionTargets::from(s, cfg);

  ReconstructionOutputs<double> out;
  auto gt = grid_to_tensor<double>(s.image);
  auto delta = kst::test::random_vector(32, 3, -0.1, 0.1);
  std::vector<double> pred(32);
  for (std::size_t i = 0; i < 32; ++i) pred[i] = gt.data()[i] + delta[i];
  out.hr_images = {Tensor<double>::from({2, 4, 4}, pred), gt};
  out.lr_spectrograms = {fft2_centered(grid_to_tensor<double>(targets.lr_image))};
  out.final_image = gt;

  double expect = 0;
  for (double d : delta) expect += d * d;
  expect = std::sqrt(expect);
  auto loss = deep_supervision_loss(out, targets);
  CHECK(std::abs(loss.total.item() - expect) < 1e-10);
  CHECK(std::abs(loss.hr - expect) < 1e-10);
  CHECK(loss.lr < 1e-12);
  auto weighted = deep_supervision_loss(out, targets, 1.0, 2.0);
  CHECK(std::abs(weighted.total.item() - 2 * expect) < 1e-10);

  out.hr_images = {gt};
  CHECK(deep_supervision_loss(out, targets).total.item() < 1e-12);
}

TEST_CASE("LR ground truth is the inverse transform of the central crop") {
  auto s = generate_phantom(16, 16, 2, 0);
  auto lr = lr_ground_truth(s.spectrogram, 4, 4);
  ComplexGrid crop(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) crop.set(r, c, s.spectrogram.at(6 + r, 6 + c));
  auto ref = ifft2_centered(crop);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(lr.re[i] == doctest::Approx(ref.re[i]).epsilon(1e-12));
    CHECK(lr.im[i] == doctest::Approx(ref.im[i]).epsilon(1e-12));
  }
}

TEST_CASE("epoch order is a seeded permutation") {
  auto a = epoch_order(50, 3, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
  CHECK(a == epoch_order(50, 3, 0));
  CHECK(a != epoch_order(50, 3, 1));
  CHECK(a != epoch_order(50, 4, 0));
  CHECK(steps_per_epoch(10, 3) == 4);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  t.learning_rate = 0;
  CHECK_THROWS(t.validate());
  t = TrainConfig{};
  t.epochs = 4;
  t.hr_grad_stop_epochs = 5;
  CHECK_THROWS(t.validate());
  t.hr_grad_stop_epochs = -1;
  CHECK(t.grad_stop_epochs() == 0);
  t.epochs = 20;
  CHECK(t.grad_stop_epochs() == 2);
}

TEST_CASE("HR gradient stop leaves encoder and LR gradients bit-identical") {
  auto cfg = tiny_config();
  auto params = init_params<double>(cfg, 6);
  auto s = generate_phantom(16, 16, 6, 0);
  auto input = kst::test::sample_input(s);
  auto targets = SupervisionTargets::from(s, cfg);

  auto grads = [&](double hr_weight) {
    params.zero_grad();
    auto out = forward(input.points, params, cfg, {nullptr, true});
    backward(deep_supervision_loss(out, targets, 1.0, hr_weight).total);
    std::map<std::string, std::vector<double>> g;
    for (const auto& [name, t] : params.tensors()) {
      if (name.rfind("hr_decoder", 0) == 0) continue;
      g[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                             : std::vector<double>(t.size(), 0.0);
    }
    return g;
  };
  auto with_hr = grads(1.0), without = grads(0.0);
  REQUIRE(with_hr.size() == without.size());
  std::size_t nonzero = 0;
  for (const auto& [name, g] : with_hr) {
    CHECK_MESSAGE(g == without.at(name), name);
    for (double v : g) nonzero += v != 0.0;
  }
  CHECK(nonzero > 0);

  // Without the stop the HR terms do reach the encoder.
  params.zero_grad();
  auto out = forward(input.points, params, cfg);
  backward(deep_supervision_loss(out, targets, 0.0, 1.0).total);
  CHECK(params.at("encoder.layer0.ffn.fc1.weight").has_grad());
}

TEST_CASE("zero-epoch training returns the initial parameters") {
  auto cfg = tiny_config();
  TrainConfig t;
  t.epochs = 0;
  t.hr_grad_stop_epochs = 0;
  auto data = generate_phantoms(2, 16, 16, 1);
  auto state = train<double>(cfg, t, data);
  auto init = init_params<double>(cfg, t.seed);
  CHECK(state.history.empty());
  for (const auto& [name, p] : init.tensors()) {
    CHECK(std::equal(p.data().begin(), p.data().end(), state.params.at(name).data().begin()));
  }
}

TEST_CASE("training records one loss row per step and is deterministic") {
  auto cfg = tiny_config();
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 2;
  t.seed = 11;
  auto data = generate_phantoms(5, 16, 16, 1);
  auto a = train<float>(cfg, t, data);
  auto b = train<float>(cfg, t, data);
  CHECK(a.history.size() == 6);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].step == i);
    CHECK(a.history[i].epoch == i / 3);
  }
  CHECK(a.history.back().learning_rate < a.history.front().learning_rate);
}

TEST_CASE("interrupted training resumes onto the same trajectory") {
  auto cfg = tiny_config();
  TrainConfig t;
  t.epochs = 3;
  t.seed = 12;
  auto data = generate_phantoms(4, 16, 16, 2);
  auto full = train<float>(cfg, t, data);

  auto part = initial_train_state<float>(cfg, t, data.size());
  TrainHooks hooks;
  hooks.stop_after = 5;
  train(part, cfg, t, data, hooks);
  CHECK(part.step() == 5);
  train(part, cfg, t, data);
  REQUIRE(part.history.size() == full.history.size());
  for (std::size_t i = 0; i < full.history.size(); ++i) CHECK(part.history[i].loss == full.history[i].loss);
}

TEST_CASE("overfit probe: 200 steps on one sample cut the loss tenfold") {
  ModelConfig cfg = tiny_config(32, 32);
  cfg.lr_height = cfg.lr_width = 8;
  cfg.refine_channels = 16;
  cfg.data_consistency = true;
  TrainConfig t;
  t.epochs = 200;
  t.learning_rate = 3e-3;
  t.hr_grad_stop_epochs = 0;
  auto data = generate_phantoms(1, 32, 32, 3);
  auto state = train<float>(cfg, t, data);
  const double first = state.history.front().loss, last = state.history.back().loss;
  MESSAGE("overfit loss " << first << " -> " << last);
  CHECK(last * 10 <= first);
}

TEST_CASE("non-finite loss aborts with the step number") {
  auto cfg = tiny_config();
  TrainConfig t;
  t.epochs = 1;
  t.learning_rate = 1e30;
  auto data = generate_phantoms(3, 16, 16, 2);
  auto state = initial_train_state<float>(cfg, t, data.size());
  try {
    train(state, cfg, t, data);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("evaluation aggregates per-sample metrics") {
  auto cfg = tiny_config();
  auto params = init_params<double>(cfg, 1);
  auto data = generate_phantoms(3, 16, 16, 4);
  auto rep = evaluate(params, cfg, data, Mask::all_ones(16, 16));
  REQUIRE(rep.samples.size() == 3);
  double mean = 0;
  for (const auto& s : rep.samples) {
    mean += s.psnr / 3;
    CHECK(std::isinf(s.zero_filled_psnr));
    CHECK(s.layer_psnr.size() == cfg.n_hr);
  }
  CHECK(rep.mean_psnr == doctest::Approx(mean));
  CHECK(rep.mean_layer_psnr.size() == cfg.n_hr);
  auto [m, sd] = mean_std({1.0, 3.0});
  CHECK(m == 2.0);
  CHECK(sd == 1.0);
}
