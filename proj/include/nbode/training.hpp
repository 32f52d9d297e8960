#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "nbode/mat.hpp"
#include "nbode/nn.hpp"
#include "nbode/sim.hpp"
#include "nbode/tensor.hpp"

namespace nbode::training {

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t epochs = 1000;
  double lr = 5e-4;
  double weight_decay = 1e-10;
  std::uint64_t seed = 0;
  std::size_t patience = 50;  // early stop on stagnant validation MSE

  void validate() const;
};

struct TrainSample {
  sim::SystemState input;
  Mat target_positions;
  std::optional<Mat> target_velocities;
};

/// Mean over particles and coordinates of the squared position error; the
/// per-coordinate convention every reported MSE in this project uses.
Tensor position_loss(const Tensor& predicted, const Mat& target);

double position_mse(const Mat& predicted, const Mat& target);

struct EpochRecord {
  std::size_t epoch;
  double train_mse;
  double valid_mse;
  double wall_time_s;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch)
      : std::runtime_error("training diverged (non-finite loss) at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batch)),
        epoch(epoch),
        batch(batch) {}
  std::size_t epoch;
  std::size_t batch;
};

/// Full optimizer + model-selection state; saved alongside checkpoints so a
/// run can resume with epoch numbering, Adam moments, and the best-so-far
/// snapshot intact. Epoch shuffles derive from (seed, epoch), so a resumed
/// run replays exactly the same batches the unbroken run would have seen.
struct TrainerState {
  std::size_t next_epoch = 0;
  std::int64_t adam_step = 0;
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
  std::size_t best_epoch = 0;
  double best_valid_mse = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  // parameters after the most recent completed epoch (divergence recovery)
  std::vector<std::vector<double>> last_params;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  TrainerState state;
};

using PredictFn = std::function<Tensor(const TrainSample&)>;
using EpochCallback = std::function<void(const EpochRecord&, const TrainerState&)>;

/// Shuffled mini-batch training with Adam and validation-based model
/// selection. `predict` must return the predicted positions on the autodiff
/// graph of `params`. The returned state carries the best-validation
/// parameter snapshot; the live tensors hold the last epoch's values.
TrainResult fit(const PredictFn& predict, const std::vector<Tensor>& params,
                const std::vector<TrainSample>& train_set,
                const std::vector<TrainSample>& valid_set, const TrainConfig& config,
                const EpochCallback& on_epoch = nullptr,
                const TrainerState* resume_from = nullptr);

/// Copies a parameter snapshot (e.g. TrainerState::best_params) into live
/// tensors.
void apply_snapshot(const std::vector<Tensor>& params,
                    const std::vector<std::vector<double>>& snapshot);

std::vector<std::vector<double>> snapshot_params(const std::vector<Tensor>& params);

}  // namespace nbode::training
