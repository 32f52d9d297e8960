#include "nbode/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include "nbode/kernels.hpp"

namespace nbode::training {

void TrainConfig::validate() const {
  if (batch_size == 0) throw TensorError("train: batch_size must be >= 1");
  // lr == 0 is a legal degenerate run (null update), used as a sanity check
  if (lr < 0.0) throw TensorError("train: lr must be >= 0");
  if (weight_decay < 0.0) throw TensorError("train: weight_decay must be >= 0");
}

Tensor position_loss(const Tensor& predicted, const Mat& target) {
  const Tensor target_tensor = Tensor::from_data({target.rows, target.cols}, target.values);
  if (predicted.shape() != target_tensor.shape()) {
    throw TensorError("position_loss: prediction " + shape_str(predicted.shape()) +
                      " vs target " + shape_str(target_tensor.shape()));
  }
  return mean(square(sub(predicted, target_tensor)));
}

double position_mse(const Mat& predicted, const Mat& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted.values[i] - target.values[i];
    acc += d * d;
  }
  return acc / static_cast<double>(predicted.size());
}

void apply_snapshot(const std::vector<Tensor>& params,
                    const std::vector<std::vector<double>>& snapshot) {
  if (params.size() != snapshot.size()) {
    throw TensorError("apply_snapshot: parameter count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (p.size() != snapshot[i].size()) {
      throw TensorError("apply_snapshot: size mismatch at parameter " + std::to_string(i));
    }
    std::memcpy(p.raw_data().data(), snapshot[i].data(), snapshot[i].size() * sizeof(double));
  }
}

std::vector<std::vector<double>> snapshot_params(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

namespace {

double evaluate_mse(const PredictFn& predict, const std::vector<TrainSample>& samples) {
  if (samples.empty()) return 0.0;
  NoGradGuard no_grad;
  double acc = 0.0;
  for (const TrainSample& sample : samples) {
    acc += position_loss(predict(sample), sample.target_positions).value();
  }
  return acc / static_cast<double>(samples.size());
}

}  // namespace

TrainResult fit(const PredictFn& predict, const std::vector<Tensor>& params,
                const std::vector<TrainSample>& train_set,
                const std::vector<TrainSample>& valid_set, const TrainConfig& config,
                const EpochCallback& on_epoch, const TrainerState* resume_from) {
  config.validate();
  if (train_set.empty()) throw TensorError("train: empty training set");

  TrainResult result;
  TrainerState& state = result.state;

  AdamConfig adam_config;
  adam_config.lr = config.lr;
  adam_config.weight_decay = config.weight_decay;
  Adam adam(params, adam_config);
  if (resume_from != nullptr && !resume_from->adam_m.empty()) {
    state = *resume_from;
    adam.restore(state.adam_step, state.adam_m, state.adam_v);
  }

  for (Tensor p : params) p.zero_grad();

  std::vector<std::size_t> indices(train_set.size());
  std::iota(indices.begin(), indices.end(), 0);

  for (std::size_t epoch = state.next_epoch; epoch < config.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();

    // Stateless per-epoch shuffle stream: resume replays the exact order.
    Rng shuffle_rng(config.seed, 0xe70c0000ULL + epoch);
    std::iota(indices.begin(), indices.end(), 0);
    shuffle_rng.shuffle(indices);

    // Per-sample losses land in original-index slots and reduce in fixed
    // order, so the logged MSE does not depend on the shuffle.
    std::vector<double> sample_losses(train_set.size(), 0.0);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < indices.size(); start += config.batch_size) {
      const std::size_t end = std::min(indices.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const TrainSample& sample = train_set[indices[i]];
        const Tensor loss = position_loss(predict(sample), sample.target_positions);
        const double loss_value = loss.value();
        if (!std::isfinite(loss_value)) throw TrainingDiverged(epoch, batch_index);
        sample_losses[indices[i]] = loss_value;
        scale(loss, inv_batch).backward();  // accumulate scaled grads over the batch
      }
      adam.step();
      ++batch_index;
    }
    const double train_mse = kernels::reduce_sum(sample_losses.data(), sample_losses.size()) /
                             static_cast<double>(train_set.size());
    const double valid_mse = evaluate_mse(predict, valid_set);
    if (!std::isfinite(valid_mse)) throw TrainingDiverged(epoch, batch_index);

    if (valid_mse < state.best_valid_mse) {
      state.best_valid_mse = valid_mse;
      state.best_epoch = epoch;
      state.best_params = snapshot_params(params);
    }
    state.next_epoch = epoch + 1;
    state.adam_step = adam.step_count();
    state.adam_m = adam.m();
    state.adam_v = adam.v();
    state.last_params = snapshot_params(params);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    const EpochRecord record{epoch, train_mse, valid_mse, wall};
    result.log.push_back(record);
    if (on_epoch) on_epoch(record, state);

    if (!valid_set.empty() && epoch >= state.best_epoch + config.patience) break;
  }

  if (state.best_params.empty()) state.best_params = snapshot_params(params);
  return result;
}

}  // namespace nbode::training
