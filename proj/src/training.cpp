#include "revcd/training.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>

#include "revcd/config.hpp"
#include "revcd/error.hpp"

namespace revcd {

using nlohmann::json;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2 (batch norm needs two rows)");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (checkpoint_interval < 0 || max_steps < 0 || log_interval < 0)
    throw ConfigError("train intervals must be non-negative");
  loss.validate();
}

template <typename T>
StepBatch<T> draw_step_batch(const Tensor<T>& s, const Tensor<T>& x, std::span<const std::size_t> labels,
                             const NoiseSchedule& schedule, double p_conditional, Rng& rng) {
  const std::size_t b = s.rows();
  if (x.rows() != b || labels.size() != b)
    throw ShapeError("batch: " + std::to_string(b) + " semantic rows, " + std::to_string(x.rows()) + " feature rows, " +
                     std::to_string(labels.size()) + " labels");
  StepBatch<T> batch;
  batch.s0 = precondition(s);
  batch.x = x;
  batch.labels.assign(labels.begin(), labels.end());
  batch.t.resize(b);
  for (auto& t : batch.t) t = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(schedule.steps())));
  batch.null_mask.resize(b);
  for (auto& m : batch.null_mask) m = rng.uniform() <= p_conditional ? 1 : 0;
  batch.eps = sample_gaussian<T>(s.dims(), rng);
  batch.s_t = forward_noise(batch.s0, batch.t, batch.eps, schedule);
  return batch;
}

template <typename T>
LossTerms<T> forward_losses(Denoiser<T>& model, const typename Denoiser<T>::Bound& bound, const StepBatch<T>& batch,
                            const LossWeights& weights, const NoiseSchedule& schedule, bool training,
                            Rng* dropout_rng) {
  auto& tape = *bound.tape;
  const auto cond = model.encode_condition(bound, tape.constant(batch.x));
  const auto s0_hat = model.denoise(bound, tape.constant(batch.s_t), batch.t, cond, batch.null_mask, training,
                                    dropout_rng);
  LossTerms<T> out;
  out.rec = loss_reconstruction(batch.s0, s0_hat, batch.t, weights, schedule);
  out.noise = loss_noise(batch.eps, batch.s_t, s0_hat, batch.t, weights, schedule);
  out.cls = ad::softmax_cross_entropy(model.classify(bound, s0_hat), std::span<const std::size_t>(batch.labels));
  out.total = total_loss(out.rec, out.noise, out.cls, weights);
  return out;
}

namespace {

DenoiserConfig with_schedule(DenoiserConfig model, const ScheduleConfig& schedule) {
  model.max_t = std::max(model.max_t, schedule.steps);
  return model;
}

}  // namespace

Trainer::Trainer(DenoiserConfig model, TrainConfig config)
    : config_((config.validate(), std::move(config))),
      schedule_(config_.schedule.build()),
      model_(with_schedule(std::move(model), config_.schedule), config_.seed),
      adam_(AdamConfig{config_.lr}) {}

LossReport Trainer::train_step(const Tensor<float>& s, const Tensor<float>& x, std::span<const std::size_t> labels) {
  for (auto l : labels)
    if (l >= model_.config().n_seen_classes)
      throw ShapeError("train_step: label " + std::to_string(l) + " >= n_seen_classes " +
                       std::to_string(model_.config().n_seen_classes));
  // Each step owns an independent stream keyed by its index, which makes a
  // resumed run replay exactly the draws of an uninterrupted one.
  Rng rng = Rng(config_.seed).fork(static_cast<std::uint64_t>(step_));
  const auto batch = draw_step_batch(s, x, labels, schedule_, config_.loss.p_conditional, rng);

  Tape<float> tape;
  const auto bound = model_.bind(tape, true);
  LossTerms<float> terms;
  try {
    terms = forward_losses(model_, bound, batch, config_.loss, schedule_, true, &rng);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(step_ + 1) + ": " + e.what());
  }
  LossReport report{step_ + 1, terms.rec.value().item(), terms.noise.value().item(), terms.cls.value().item(),
                    terms.total.value().item()};
  if (!std::isfinite(report.total))
    throw NumericError("step " + std::to_string(step_ + 1) + ": non-finite loss");
  tape.backward(terms.total);

  auto& values = model_.params().values();
  std::vector<Tensor<float>*> params;
  std::vector<Tensor<float>> grads;
  params.reserve(values.size());
  grads.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    params.push_back(&values[i]);
    grads.push_back(tape.grad(bound.p[i]));
  }
  adam_.step(params, grads);
  ++step_;
  return report;
}

std::int64_t Trainer::steps_per_epoch(std::size_t rows, std::size_t batch_size) {
  return static_cast<std::int64_t>((rows + batch_size - 1) / batch_size);
}

std::vector<LossReport> Trainer::train(const GzslDataset& ds, const TrainHooks& hooks) {
  if (ds.seen_classes.size() != model_.config().n_seen_classes)
    throw ShapeError("train: dataset has " + std::to_string(ds.seen_classes.size()) + " seen classes, model head has " +
                     std::to_string(model_.config().n_seen_classes));
  if (ds.d_s() != model_.config().d_s || ds.d_x() != model_.config().d_x)
    throw ShapeError("train: dataset dims (d_s=" + std::to_string(ds.d_s()) + ", d_x=" + std::to_string(ds.d_x()) +
                     ") differ from the model's (d_s=" + std::to_string(model_.config().d_s) +
                     ", d_x=" + std::to_string(model_.config().d_x) + ")");
  const SeenTrainView view = seen_train_view(ds);
  const std::size_t n = view.rows.size();
  if (n < 2) throw ValidationError("train: batch norm needs at least 2 seen-train rows, got " + std::to_string(n));
  const std::size_t bsz = config_.batch_size;
  const std::int64_t per_epoch = steps_per_epoch(n, bsz);
  std::int64_t total = per_epoch * config_.epochs;
  if (config_.max_steps > 0) total = std::min(total, config_.max_steps);

  const Rng shuffle_root(mix64(config_.seed ^ 0x73687566666c65ULL));
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  std::vector<LossReport> history;

  while (step_ < total) {
    const std::int64_t epoch = step_ / per_epoch;
    if (epoch != order_epoch) {
      order.resize(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      Rng r = shuffle_root.fork(static_cast<std::uint64_t>(epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[r.uniform_int(i)]);
      order_epoch = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(step_ % per_epoch) * bsz;
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(begin + bsz, n)));
    // Batch norm needs two rows; a lone trailing row borrows the epoch's first.
    if (idx.size() < 2) idx.push_back(order[0] == idx[0] ? order[1] : order[0]);

    std::vector<std::size_t> labels(idx.size());
    std::vector<std::uint32_t> rows(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      labels[i] = view.seen_index[idx[i]];
      rows[i] = view.rows[idx[i]];
    }
    if (hooks.on_batch) hooks.on_batch(rows);
    const auto report = train_step(view.semantics.rows_subset(idx), view.features.rows_subset(idx), labels);
    history.push_back(report);

    if (hooks.progress && config_.log_interval > 0 && (step_ % config_.log_interval == 0 || step_ == total)) {
      *hooks.progress << "step=" << report.step << " rec=" << report.rec << " noise=" << report.noise
                      << " cls=" << report.cls << " total=" << report.total << '\n';
    }
    if (config_.checkpoint_interval > 0 && !config_.checkpoint_dir.empty() &&
        step_ % config_.checkpoint_interval == 0) {
      std::filesystem::create_directories(config_.checkpoint_dir);
      save_checkpoint(std::filesystem::path(config_.checkpoint_dir) / ("step_" + std::to_string(step_) + ".ckpt"),
                      checkpoint());
    }
  }
  return history;
}

std::vector<NamedTensor> model_tensors(const Denoiser<float>& model) {
  std::vector<NamedTensor> out;
  const auto& p = model.params();
  for (std::size_t i = 0; i < p.size(); ++i) out.push_back({"param/" + p.name(i), p[i]});
  for (std::size_t i = 0; i < model.bn_stats().size(); ++i) {
    out.push_back({"bn/" + model.bn_names()[i] + "/mean", model.bn_stats()[i].running_mean});
    out.push_back({"bn/" + model.bn_names()[i] + "/var", model.bn_stats()[i].running_var});
  }
  return out;
}

namespace {

void copy_checked(Tensor<float>& dst, const Checkpoint& ckpt, const std::string& name) {
  if (!ckpt.contains(name)) throw ShapeError("checkpoint is missing tensor " + name);
  const auto& src = ckpt.at(name);
  if (src.dims() != dst.dims())
    throw ShapeError("shape mismatch for " + name + ": checkpoint has " + dims_to_string(src.dims()) +
                     ", model expects " + dims_to_string(dst.dims()));
  dst = src;
}

}  // namespace

void load_model_tensors(Denoiser<float>& model, const Checkpoint& ckpt) {
  auto& p = model.params();
  // Validate everything before touching the model so a failure leaves it intact.
  Denoiser<float> staged = model;
  for (std::size_t i = 0; i < p.size(); ++i) copy_checked(staged.params()[i], ckpt, "param/" + p.name(i));
  for (std::size_t i = 0; i < staged.bn_stats().size(); ++i) {
    copy_checked(staged.bn_stats()[i].running_mean, ckpt, "bn/" + model.bn_names()[i] + "/mean");
    copy_checked(staged.bn_stats()[i].running_var, ckpt, "bn/" + model.bn_names()[i] + "/var");
  }
  model = std::move(staged);
}

Denoiser<float> model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("model")) throw ValidationError("checkpoint config has no model section");
  DenoiserConfig cfg;
  try {
    cfg = denoiser_config_from_json(ckpt.config.at("model"));
  } catch (const ConfigError& e) {
    throw ValidationError(std::string("checkpoint model config: ") + e.what());
  }
  Denoiser<float> model(cfg, 0);
  load_model_tensors(model, ckpt);
  return model;
}

NoiseSchedule schedule_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("schedule")) throw ValidationError("checkpoint config has no schedule section");
  return schedule_config_from_json(ckpt.config.at("schedule")).build();
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config = {{"model", to_json(model_.config())}, {"schedule", to_json(config_.schedule)}};
  ckpt.tensors = model_tensors(model_);
  const auto& m = adam_.first_moments();
  const auto& v = adam_.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    ckpt.tensors.push_back({"adam/m/" + model_.params().name(i), m[i]});
    ckpt.tensors.push_back({"adam/v/" + model_.params().name(i), v[i]});
  }
  ckpt.rng = RngState{config_.seed, static_cast<std::uint64_t>(step_)};
  ckpt.step = step_;
  ckpt.extra = {{"adam_steps", adam_.steps()}};
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  if (ckpt.config.contains("model")) {
    const auto cfg = denoiser_config_from_json(ckpt.config.at("model"));
    const auto& mine = model_.config();
    if (cfg.d_s != mine.d_s || cfg.d_x != mine.d_x)
      throw ShapeError("shape mismatch: checkpoint was trained with d_s=" + std::to_string(cfg.d_s) +
                       ", d_x=" + std::to_string(cfg.d_x) + " but this model has d_s=" + std::to_string(mine.d_s) +
                       ", d_x=" + std::to_string(mine.d_x));
  }
  load_model_tensors(model_, ckpt);
  std::vector<Tensor<float>> m, v;
  const auto& p = model_.params();
  if (ckpt.contains("adam/m/" + p.name(0))) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      Tensor<float> mi(p[i].dims()), vi(p[i].dims());
      copy_checked(mi, ckpt, "adam/m/" + p.name(i));
      copy_checked(vi, ckpt, "adam/v/" + p.name(i));
      m.push_back(std::move(mi));
      v.push_back(std::move(vi));
    }
  }
  adam_.first_moments() = std::move(m);
  adam_.second_moments() = std::move(v);
  adam_.set_steps(ckpt.extra.value("adam_steps", std::int64_t{0}));
  step_ = ckpt.step;
}

#define REVCD_INSTANTIATE_TRAINING(T)                                                                            \
  template StepBatch<T> draw_step_batch(const Tensor<T>&, const Tensor<T>&, std::span<const std::size_t>,       \
                                        const NoiseSchedule&, double, Rng&);                                    \
  template LossTerms<T> forward_losses(Denoiser<T>&, const typename Denoiser<T>::Bound&, const StepBatch<T>&,    \
                                       const LossWeights&, const NoiseSchedule&, bool, Rng*);
REVCD_INSTANTIATE_TRAINING(float)
REVCD_INSTANTIATE_TRAINING(double)

}  // namespace revcd
