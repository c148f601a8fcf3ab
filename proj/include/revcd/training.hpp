#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "revcd/checkpoint.hpp"
#include "revcd/dataset.hpp"
#include "revcd/diffusion.hpp"
#include "revcd/model.hpp"
#include "revcd/optim.hpp"
#include "revcd/rng.hpp"
#include "revcd/schedule.hpp"

namespace revcd {

struct TrainConfig {
  int epochs = 200;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  LossWeights loss;
  ScheduleConfig schedule;
  std::uint64_t seed = 0;
  // Save a checkpoint every this many steps into checkpoint_dir (0 = never).
  std::int64_t checkpoint_interval = 0;
  std::string checkpoint_dir;
  // Stop after this many optimizer steps in total (0 = run all epochs).
  std::int64_t max_steps = 0;
  // Emit a progress line every this many steps (0 = never).
  std::int64_t log_interval = 100;

  void validate() const;
};

// Everything one optimisation step consumes.
template <typename T>
struct StepBatch {
  Tensor<T> s0;  // preconditioned clean semantics
  Tensor<T> x;
  std::vector<std::size_t> labels;  // seen-class positions
  std::vector<int> t;
  Tensor<T> eps;
  Tensor<T> s_t;
  std::vector<std::uint8_t> null_mask;
};

// Draws t ~ U[1,T], the condition mask and eps for one batch. `s` is in [0,1].
template <typename T>
StepBatch<T> draw_step_batch(const Tensor<T>& s, const Tensor<T>& x, std::span<const std::size_t> labels,
                             const NoiseSchedule& schedule, double p_conditional, Rng& rng);

template <typename T>
struct LossTerms {
  Var<T> rec, noise, cls, total;
};

// Forward pass plus the three objectives on the model's tape.
template <typename T>
LossTerms<T> forward_losses(Denoiser<T>& model, const typename Denoiser<T>::Bound& bound, const StepBatch<T>& batch,
                            const LossWeights& weights, const NoiseSchedule& schedule, bool training,
                            Rng* dropout_rng);

struct LossReport {
  std::int64_t step = 0;
  double rec = 0, noise = 0, cls = 0, total = 0;
};

struct TrainHooks {
  std::ostream* progress = nullptr;
  // Called with the dataset row ids of every batch.
  std::function<void(std::span<const std::uint32_t>)> on_batch;
};

class Trainer {
 public:
  Trainer(DenoiserConfig model, TrainConfig config);

  // One Adam step on a batch. `s` in [0,1], labels are seen-class positions.
  LossReport train_step(const Tensor<float>& s, const Tensor<float>& x, std::span<const std::size_t> labels);

  // Shuffled epochs over the seen-train rows. Resumes from step() so that a
  // restored trainer continues the exact same batch sequence.
  std::vector<LossReport> train(const GzslDataset& ds, const TrainHooks& hooks = {});

  static std::int64_t steps_per_epoch(std::size_t rows, std::size_t batch_size);

  Checkpoint checkpoint() const;
  // Restores parameters, BN statistics, optimizer state and the step counter.
  void restore(const Checkpoint& ckpt);

  Denoiser<float>& model() noexcept { return model_; }
  const Denoiser<float>& model() const noexcept { return model_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  const TrainConfig& config() const noexcept { return config_; }
  std::int64_t step() const noexcept { return step_; }

 private:
  TrainConfig config_;
  NoiseSchedule schedule_;
  Denoiser<float> model_;
  Adam<float> adam_;
  std::int64_t step_ = 0;
};

// Parameters and BN statistics of a model as checkpoint tensors.
std::vector<NamedTensor> model_tensors(const Denoiser<float>& model);
// Copies checkpoint tensors into `model`; throws ShapeError on any dims mismatch.
void load_model_tensors(Denoiser<float>& model, const Checkpoint& ckpt);
// Rebuilds a model from the configuration echoed in a checkpoint.
Denoiser<float> model_from_checkpoint(const Checkpoint& ckpt);
NoiseSchedule schedule_from_checkpoint(const Checkpoint& ckpt);

}  // namespace revcd
