#include "kst/training.hpp"

#include "kst/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace kst {

Mask make_mask(const MaskSpec& spec, std::size_t height, std::size_t width) {
  switch (spec.kind) {
    case MaskKind::Uniform1D:
      return make_uniform_1d_mask(height, width,
                                  {spec.acceleration, spec.center_fraction, spec.offset});
    case MaskKind::Gaussian2D:
      return make_gaussian_2d_mask(height, width,
                                   {spec.acceleration, spec.sigma_fraction, spec.seed});
    case MaskKind::Custom:
      break;
  }
  throw std::invalid_argument("custom masks must be loaded from a file");
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (lr_loss_weight < 0.0 || hr_loss_weight < 0.0) {
    throw std::invalid_argument("loss weights must be >= 0");
  }
  if (!(mask.acceleration >= 1.0)) throw std::invalid_argument("mask acceleration must be >= 1");
  if (hr_grad_stop_epochs > 0 && static_cast<std::size_t>(hr_grad_stop_epochs) > epochs) {
    throw std::invalid_argument("hr_grad_stop_epochs must not exceed epochs");
  }
}

std::size_t TrainConfig::grad_stop_epochs() const {
  if (hr_grad_stop_epochs < 0) return epochs / 10;
  return static_cast<std::size_t>(hr_grad_stop_epochs);
}

bool operator==(const MaskSpec& a, const MaskSpec& b) {
  return a.kind == b.kind && a.acceleration == b.acceleration &&
         a.center_fraction == b.center_fraction && a.sigma_fraction == b.sigma_fraction &&
         a.seed == b.seed && a.offset == b.offset;
}

bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.epochs == b.epochs && a.batch_size == b.batch_size &&
         a.learning_rate == b.learning_rate && a.weight_decay == b.weight_decay &&
         a.schedule_horizon == b.schedule_horizon &&
         a.hr_grad_stop_epochs == b.hr_grad_stop_epochs && a.seed == b.seed && a.mask == b.mask &&
         a.lr_loss_weight == b.lr_loss_weight && a.hr_loss_weight == b.hr_loss_weight;
}

// ---- loss -----------------------------------------------------------------

ComplexGrid lr_ground_truth(const ComplexGrid& spectrogram, std::size_t h, std::size_t w) {
  const std::size_t H = spectrogram.height, W = spectrogram.width;
  if (h > H || w > W) throw DimensionError("LR grid larger than the spectrogram");
  const std::size_t r0 = H / 2 - h / 2, c0 = W / 2 - w / 2;
  ComplexGrid crop(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) crop.set(r, c, spectrogram.at(r0 + r, c0 + c));
  }
  return ifft2_centered(crop);
}

SupervisionTargets SupervisionTargets::from(const PhantomSample& s, const ModelConfig& cfg) {
  return {s.image, lr_ground_truth(s.spectrogram, cfg.lr_height, cfg.lr_width)};
}

template <typename T>
LossTerms<T> deep_supervision_loss(const ReconstructionOutputs<T>& outputs,
                                   const SupervisionTargets& targets, double lr_weight,
                                   double hr_weight) {
  if (outputs.hr_images.empty()) throw std::invalid_argument("loss: no HR outputs");
  const auto gt = grid_to_tensor<T>(targets.image);
  Tensor<T> hr_sum;
  for (const auto& img : outputs.hr_images) {
    auto term = l2_norm(sub(img, gt));
    hr_sum = hr_sum.defined() ? add(hr_sum, term) : term;
  }
  LossTerms<T> out;
  out.hr = static_cast<double>(hr_sum.item());
  out.total = scale(hr_sum, static_cast<T>(hr_weight));
  if (!outputs.lr_spectrograms.empty()) {
    const auto lr_gt = grid_to_tensor<T>(targets.lr_image);
    Tensor<T> lr_sum;
    for (const auto& spec : outputs.lr_spectrograms) {
      auto term = l2_norm(sub(ifft2_centered(spec), lr_gt));
      lr_sum = lr_sum.defined() ? add(lr_sum, term) : term;
    }
    out.lr = static_cast<double>(lr_sum.item());
    out.total = add(out.total, scale(lr_sum, static_cast<T>(lr_weight)));
  }
  return out;
}

// ---- optimizer ------------------------------------------------------------

double cosine_learning_rate(double lr0, std::size_t step, std::size_t horizon) {
  if (horizon == 0 || step >= horizon) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(horizon);
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void adamw_step(ModelParams<T>& params, OptimizerState<T>& state, double lr,
                const AdamWConfig& cfg) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params.tensors()) {
    const std::size_t n = p.size();
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.size() != n) m.assign(n, T(0));
    if (v.size() != n) v.assign(n, T(0));
    auto w = p.mutable_data();
    const bool has = p.has_grad();
    const auto g = p.grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double wi = static_cast<double>(w[i]);
      wi -= lr * cfg.weight_decay * wi;
      wi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      w[i] = static_cast<T>(wi);
    }
  }
}

// ---- training -------------------------------------------------------------

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size) {
  if (dataset_size == 0 || batch_size == 0) throw std::invalid_argument("empty dataset or batch");
  return (dataset_size + batch_size - 1) / batch_size;
}

std::vector<std::size_t> epoch_order(std::size_t dataset_size, std::uint64_t seed,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(derive_seed(seed, 0x5348554646ull), epoch));
  // Fisher-Yates with our own index draw so the order does not depend on the
  // standard library's distribution implementation.
  for (std::size_t i = dataset_size; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  return order;
}

template <typename T>
TrainState<T> initial_train_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                  std::size_t dataset_size) {
  model_cfg.validate();
  train_cfg.validate();
  TrainState<T> s;
  s.params = init_params<T>(model_cfg, train_cfg.seed);
  s.total_steps = train_cfg.epochs * steps_per_epoch(dataset_size, train_cfg.batch_size);
  return s;
}

template <typename T>
void train(TrainState<T>& state, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
           const std::vector<PhantomSample>& dataset, const TrainHooks& hooks) {
  model_cfg.validate();
  train_cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const std::size_t spe = steps_per_epoch(dataset.size(), train_cfg.batch_size);
  if (state.total_steps != train_cfg.epochs * spe) {
    throw std::invalid_argument("train: state step budget does not match the configuration");
  }
  const Mask mask = make_mask(train_cfg.mask, model_cfg.hr_height, model_cfg.hr_width);
  const std::size_t horizon =
      train_cfg.schedule_horizon == 0 ? state.total_steps : train_cfg.schedule_horizon;
  const std::size_t stop_epochs = model_cfg.use_lr_decoder ? train_cfg.grad_stop_epochs() : 0;
  AdamWConfig opt;
  opt.weight_decay = train_cfg.weight_decay;

  // Masked inputs do not change between epochs.
  std::vector<SampledPointSet> inputs;
  std::vector<SupervisionTargets> targets;
  inputs.reserve(dataset.size());
  targets.reserve(dataset.size());
  for (const auto& s : dataset) {
    if (s.spectrogram.height != model_cfg.hr_height || s.spectrogram.width != model_cfg.hr_width) {
      throw DimensionError("train: sample grid does not match the model HR grid");
    }
    inputs.push_back(apply_mask(s.spectrogram, mask).points);
    targets.push_back(SupervisionTargets::from(s, model_cfg));
  }

  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order;
  while (state.optimizer.step < state.total_steps) {
    if (hooks.stop_after && state.optimizer.step >= *hooks.stop_after) return;
    const std::size_t step = state.optimizer.step;
    const std::size_t epoch = step / spe;
    if (epoch != cached_epoch) {
      order = epoch_order(dataset.size(), train_cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const std::size_t begin = (step % spe) * train_cfg.batch_size;
    const std::size_t end = std::min(begin + train_cfg.batch_size, dataset.size());
    const T inv = static_cast<T>(1.0 / static_cast<double>(end - begin));

    ForwardOptions fo;
    fo.stop_hr_gradient = epoch < stop_epochs;
    state.params.zero_grad();
    LossRecord rec;
    rec.step = step;
    rec.epoch = epoch;
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t idx = order[b];
      auto out = forward(inputs[idx], state.params, model_cfg, fo);
      auto loss = deep_supervision_loss(out, targets[idx], train_cfg.lr_loss_weight,
                                        train_cfg.hr_loss_weight);
      const double value = static_cast<double>(loss.total.item());
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step) + " (sample " +
                             std::to_string(dataset[idx].index) + ")");
      }
      backward(scale(loss.total, inv));
      rec.loss += value / static_cast<double>(end - begin);
      rec.lr_loss += loss.lr / static_cast<double>(end - begin);
      rec.hr_loss += loss.hr / static_cast<double>(end - begin);
    }
    rec.learning_rate = cosine_learning_rate(train_cfg.learning_rate, step, horizon);
    adamw_step(state.params, state.optimizer, rec.learning_rate, opt);
    state.history.push_back(rec);
    if (hooks.after_step) hooks.after_step(state.optimizer.step);
  }
}

template <typename T>
TrainState<T> train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                    const std::vector<PhantomSample>& dataset) {
  auto state = initial_train_state<T>(model_cfg, train_cfg, dataset.size());
  train(state, model_cfg, train_cfg, dataset);
  return state;
}

// ---- evaluation -----------------------------------------------------------

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};
}

template <typename T>
Reconstruction reconstruct(const ModelParams<T>& params, const ModelConfig& cfg,
                           const ComplexGrid& spectrogram, const Mask& mask) {
  auto masked = apply_mask(spectrogram, mask);
  auto out = forward(masked.points, params, cfg);
  Reconstruction r;
  r.zero_filled = ifft2_centered(masked.zero_filled);
  for (const auto& img : out.hr_images) r.layer_images.push_back(tensor_to_grid(img));
  r.image = r.layer_images.back();
  return r;
}

template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const ModelConfig& cfg,
                    const std::vector<PhantomSample>& dataset, const Mask& mask) {
  EvalReport rep;
  std::vector<double> p, s, zp, zs;
  std::vector<std::vector<double>> layers(cfg.n_hr);
  for (const auto& sample : dataset) {
    const auto rec = reconstruct(params, cfg, sample.spectrogram, mask);
    // Reference through the same inverse transform as the zero-filled image,
    // so an all-ones mask scores exactly +inf.
    const auto ref = magnitude_image(ifft2_centered(sample.spectrogram));
    SampleMetrics m;
    m.index = sample.index;
    const auto out = magnitude_image(rec.image);
    const auto zf = magnitude_image(rec.zero_filled);
    m.psnr = psnr(out, ref);
    m.ssim = ssim(out, ref);
    m.zero_filled_psnr = psnr(zf, ref);
    m.zero_filled_ssim = ssim(zf, ref);
    for (std::size_t i = 0; i < rec.layer_images.size(); ++i) {
      m.layer_psnr.push_back(psnr(magnitude_image(rec.layer_images[i]), ref));
      layers[i].push_back(m.layer_psnr.back());
    }
    p.push_back(m.psnr);
    s.push_back(m.ssim);
    zp.push_back(m.zero_filled_psnr);
    zs.push_back(m.zero_filled_ssim);
    rep.samples.push_back(std::move(m));
  }
  std::tie(rep.mean_psnr, rep.std_psnr) = mean_std(p);
  std::tie(rep.mean_ssim, rep.std_ssim) = mean_std(s);
  std::tie(rep.mean_zero_filled_psnr, rep.std_zero_filled_psnr) = mean_std(zp);
  std::tie(rep.mean_zero_filled_ssim, rep.std_zero_filled_ssim) = mean_std(zs);
  for (const auto& l : layers) rep.mean_layer_psnr.push_back(mean_std(l).first);
  return rep;
}

#define KST_INSTANTIATE(T)                                                                       \
  template LossTerms<T> deep_supervision_loss<T>(const ReconstructionOutputs<T>&,                \
                                                 const SupervisionTargets&, double, double);     \
  template void adamw_step<T>(ModelParams<T>&, OptimizerState<T>&, double, const AdamWConfig&);  \
  template TrainState<T> initial_train_state<T>(const ModelConfig&, const TrainConfig&,          \
                                                std::size_t);                                    \
  template void train<T>(TrainState<T>&, const ModelConfig&, const TrainConfig&,                 \
                         const std::vector<PhantomSample>&, const TrainHooks&);                  \
  template TrainState<T> train<T>(const ModelConfig&, const TrainConfig&,                        \
                                  const std::vector<PhantomSample>&);                            \
  template Reconstruction reconstruct<T>(const ModelParams<T>&, const ModelConfig&,              \
                                         const ComplexGrid&, const Mask&);                       \
  template EvalReport evaluate<T>(const ModelParams<T>&, const ModelConfig&,                     \
                                  const std::vector<PhantomSample>&, const Mask&);

KST_INSTANTIATE(float)
KST_INSTANTIATE(double)

}  // namespace kst
