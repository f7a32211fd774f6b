#pragma once

#include "kst/metrics.hpp"
#include "kst/model.hpp"
#include "kst/phantom.hpp"
#include "kst/sampling.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kst {

// Raised when training produces a non-finite loss.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MaskSpec {
  MaskKind kind = MaskKind::Uniform1D;
  double acceleration = 2.5;
  double center_fraction = 0.08;
  double sigma_fraction = 0.25;
  std::uint64_t seed = 0;
  int offset = 0;
};

Mask make_mask(const MaskSpec& spec, std::size_t height, std::size_t width);

struct TrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 1;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  // Cosine horizon in steps; 0 means the total step count.
  std::size_t schedule_horizon = 0;
  // Epochs during which HR losses do not reach the encoder or LR decoder;
  // negative selects the default of epochs / 10.
  int hr_grad_stop_epochs = -1;
  std::uint64_t seed = 0;
  MaskSpec mask;
  double lr_loss_weight = 1.0;
  double hr_loss_weight = 1.0;

  void validate() const;
  std::size_t grad_stop_epochs() const;
};

bool operator==(const MaskSpec& a, const MaskSpec& b);
bool operator==(const TrainConfig& a, const TrainConfig& b);

// ---- loss -----------------------------------------------------------------

// Ground truth for the LR decoder: the central h x w crop of the centered
// spectrogram, inverse transformed at LR size.
ComplexGrid lr_ground_truth(const ComplexGrid& spectrogram, std::size_t h, std::size_t w);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double lr = 0.0;
  double hr = 0.0;
};

struct SupervisionTargets {
  ComplexGrid image;     // H x W
  ComplexGrid lr_image;  // h_lr x w_lr

  static SupervisionTargets from(const PhantomSample& s, const ModelConfig& cfg);
};

// sum_i ||I_i - I_gt||_2 over HR layers plus the same over LR layers against
// the LR ground truth, each sum scaled by its weight.
template <typename T>
LossTerms<T> deep_supervision_loss(const ReconstructionOutputs<T>& outputs,
                                   const SupervisionTargets& targets, double lr_weight = 1.0,
                                   double hr_weight = 1.0);

// ---- optimizer ------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// 0.5 * lr0 * (1 + cos(pi * t / horizon)), clamped to 0 past the horizon.
double cosine_learning_rate(double lr0, std::size_t step, std::size_t horizon);

template <typename T>
struct OptimizerState {
  std::size_t step = 0;
  std::map<std::string, std::vector<T>> first_moment;
  std::map<std::string, std::vector<T>> second_moment;
};

// One decoupled-weight-decay Adam update from the gradients held by `params`.
// Parameters without a gradient are treated as having a zero gradient.
template <typename T>
void adamw_step(ModelParams<T>& params, OptimizerState<T>& state, double lr,
                const AdamWConfig& cfg);

// ---- training -------------------------------------------------------------

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr_loss = 0.0;
  double hr_loss = 0.0;
  double learning_rate = 0.0;
};

template <typename T>
struct TrainState {
  ModelParams<T> params;
  OptimizerState<T> optimizer;
  std::vector<LossRecord> history;
  std::size_t total_steps = 0;

  std::size_t step() const { return optimizer.step; }
  bool finished() const { return optimizer.step >= total_steps; }
};

struct TrainHooks {
  // Called after every optimizer step with the completed step count.
  std::function<void(std::size_t)> after_step;
  // Stop early once this many steps have completed (simulates interruption).
  std::optional<std::size_t> stop_after;
};

std::size_t steps_per_epoch(std::size_t dataset_size, std::size_t batch_size);

// Visit order of dataset indices in `epoch`, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t dataset_size, std::uint64_t seed,
                                     std::size_t epoch);

template <typename T>
TrainState<T> initial_train_state(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                  std::size_t dataset_size);

// Runs (or resumes) training until `state.total_steps`. Throws NumericalError
// naming the step if the loss stops being finite.
template <typename T>
void train(TrainState<T>& state, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
           const std::vector<PhantomSample>& dataset, const TrainHooks& hooks = {});

template <typename T>
TrainState<T> train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                    const std::vector<PhantomSample>& dataset);

// ---- evaluation -----------------------------------------------------------

struct SampleMetrics {
  std::size_t index = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double zero_filled_psnr = 0.0;
  double zero_filled_ssim = 0.0;
  std::vector<double> layer_psnr;
};

struct EvalReport {
  std::vector<SampleMetrics> samples;
  double mean_psnr = 0.0, std_psnr = 0.0;
  double mean_ssim = 0.0, std_ssim = 0.0;
  double mean_zero_filled_psnr = 0.0, std_zero_filled_psnr = 0.0;
  double mean_zero_filled_ssim = 0.0, std_zero_filled_ssim = 0.0;
  std::vector<double> mean_layer_psnr;
};

struct Reconstruction {
  ComplexGrid image;
  ComplexGrid zero_filled;
  std::vector<ComplexGrid> layer_images;
};

template <typename T>
Reconstruction reconstruct(const ModelParams<T>& params, const ModelConfig& cfg,
                           const ComplexGrid& spectrogram, const Mask& mask);

template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const ModelConfig& cfg,
                    const std::vector<PhantomSample>& dataset, const Mask& mask);

// Arithmetic mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& v);

}  // namespace kst
