#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nbode/experiment.hpp"
#include "nbode/gnn.hpp"
#include "nbode/ode.hpp"
#include "nbode/sim.hpp"
#include "nbode/training.hpp"

using namespace nbode;
using namespace nbode::training;
using nbode::sim::SystemKind;

namespace {

std::vector<TrainSample> gravity_samples(std::size_t n_traj, std::size_t n_bodies,
                                         std::uint64_t seed, std::size_t fine_steps = 100,
                                         double softening = 0.0) {
  sim::GenerationConfig config = sim::GenerationConfig::defaults(SystemKind::Gravity);
  config.n_bodies = n_bodies;
  std::vector<TrainSample> samples;
  for (std::size_t t = 0; t < n_traj; ++t) {
    Rng rng(seed, t);
    const sim::SystemState init = sim::sample_initial_gravity(config, rng);
    const sim::Trajectory trajectory = sim::generate_trajectory(
        init, SystemKind::Gravity, fine_steps, 1e-3, softening, 1.0, fine_steps);
    TrainSample sample;
    sample.input = trajectory.state_at(0);
    sample.target_positions = trajectory.positions.back();
    sample.target_velocities = trajectory.velocities.back();
    samples.push_back(std::move(sample));
  }
  return samples;
}

struct LogSummary {
  std::vector<double> train;
  std::vector<double> valid;
};

LogSummary summarize(const TrainResult& result) {
  LogSummary s;
  for (const EpochRecord& r : result.log) {
    s.train.push_back(r.train_mse);
    s.valid.push_back(r.valid_mse);
  }
  return s;
}

}  // namespace

TEST_CASE("position loss worked examples") {
  const Mat target(5, 3);
  Tensor exact = Tensor::zeros({5, 3});
  CHECK(position_loss(exact, target).value() == 0.0);

  Tensor ones = Tensor::full({5, 3}, 1.0);
  CHECK(position_loss(ones, target).value() == doctest::Approx(1.0));

  Tensor off = Tensor::zeros({5, 3});
  off.raw_data()[7] = 0.3;
  CHECK(position_loss(off, target).value() == doctest::Approx(0.09 / 15.0));

  const Mat wrong(4, 3);
  CHECK_THROWS_AS(position_loss(ones, wrong), TensorError);

  // non-negative, zero iff exact
  CHECK(position_loss(off, target).value() > 0.0);
}

TEST_CASE("lr zero is a null update with epoch-stable losses") {
  const auto samples = gravity_samples(12, 3, 1000);
  const std::vector<TrainSample> train_set(samples.begin(), samples.begin() + 8);
  const std::vector<TrainSample> valid_set(samples.begin() + 8, samples.end());

  Rng rng(5);
  ode::GraphOdeModel model = ode::GraphOdeModel::init(
      gnn::AccelEgnnConfig::standard(2, 8, 1), {4, 0.1}, ode::Variant::SecondOrder, rng);
  const auto before = snapshot_params(model.tensors());

  TrainConfig config;
  config.batch_size = 4;
  config.epochs = 3;
  config.lr = 0.0;
  config.weight_decay = 0.0;
  config.seed = 9;
  const TrainResult result =
      fit(experiment::graph_ode_predict_fn(model), model.tensors(), train_set, valid_set, config);

  REQUIRE(result.log.size() == 3);
  for (const EpochRecord& r : result.log) {
    CHECK(r.train_mse == result.log.front().train_mse);
    CHECK(r.valid_mse == result.log.front().valid_mse);
  }
  const auto after = snapshot_params(model.tensors());
  CHECK(before == after);
}

TEST_CASE("one parameter quadratic-correction model recovers the least-squares fit") {
  // Synthetic constant-acceleration data: q1 = q0 + v0 T + a T^2 / 2 with a
  // constant across coordinates. The model family q_hat = q + v T + theta T^2
  // has the closed-form least-squares solution theta* = a / 2.
  const double accel_value = 0.8;
  const double horizon = 1.0;
  const double theta_star = accel_value / 2.0;

  std::vector<TrainSample> train_set;
  Rng rng(2024);
  for (int s = 0; s < 40; ++s) {
    Mat q(3, 3), v(3, 3), h(3, 1);
    for (double& x : q.values) x = rng.normal();
    for (double& x : v.values) x = rng.normal();
    for (double& x : h.values) x = 1.0;
    TrainSample sample;
    sample.input = sim::make_complete_state(q, v, h);
    Mat target = q;
    for (std::size_t i = 0; i < target.size(); ++i) {
      target.values[i] += v.values[i] * horizon + 0.5 * accel_value * horizon * horizon;
    }
    sample.target_positions = target;
    train_set.push_back(std::move(sample));
  }

  Tensor theta = Tensor::scalar(0.0, true);
  const PredictFn predict = [&](const TrainSample& sample) {
    const Tensor q = Tensor::from_data({3, 3}, sample.input.positions.values);
    const Tensor v = Tensor::from_data({3, 3}, sample.input.velocities.values);
    const Tensor drift = add(q, scale(v, horizon));
    return add(drift, broadcast_to(scale(theta, horizon * horizon), {3, 3}));
  };

  TrainConfig config;
  config.batch_size = 40;
  config.epochs = 400;
  config.lr = 0.05;
  config.weight_decay = 0.0;
  config.seed = 3;
  fit(predict, {theta}, train_set, {}, config);
  CHECK(theta.value() == doctest::Approx(theta_star).epsilon(1e-3));
}

TEST_CASE("training log is deterministic and model selection is monotone") {
  const auto samples = gravity_samples(16, 3, 2000);
  const std::vector<TrainSample> train_set(samples.begin(), samples.begin() + 12);
  const std::vector<TrainSample> valid_set(samples.begin() + 12, samples.end());

  const auto run = [&] {
    Rng rng(17);
    ode::GraphOdeModel model = ode::GraphOdeModel::init(
        gnn::AccelEgnnConfig::standard(2, 8, 1), {4, 0.1}, ode::Variant::SecondOrder, rng);
    TrainConfig config;
    config.batch_size = 6;
    config.epochs = 5;
    config.lr = 1e-3;
    config.seed = 23;
    return fit(experiment::graph_ode_predict_fn(model), model.tensors(), train_set,
               valid_set, config);
  };

  const TrainResult a = run();
  const TrainResult b = run();
  const LogSummary sa = summarize(a), sb = summarize(b);
  CHECK(sa.train == sb.train);  // bit-identical across reruns
  CHECK(sa.valid == sb.valid);

  double min_valid = std::numeric_limits<double>::infinity();
  for (double v : sa.valid) min_valid = std::min(min_valid, v);
  CHECK(a.state.best_valid_mse == min_valid);
  CHECK(a.state.best_valid_mse == sa.valid[a.state.best_epoch]);
}

TEST_CASE("split-and-resume reproduces the unbroken run") {
  const auto samples = gravity_samples(10, 3, 3000);
  const std::vector<TrainSample> train_set(samples.begin(), samples.begin() + 8);
  const std::vector<TrainSample> valid_set(samples.begin() + 8, samples.end());

  TrainConfig config;
  config.batch_size = 4;
  config.epochs = 6;
  config.lr = 1e-3;
  config.seed = 31;

  const auto make_model = [] {
    Rng rng(37);
    return ode::GraphOdeModel::init(gnn::AccelEgnnConfig::standard(2, 8, 1), {4, 0.1},
                                    ode::Variant::SecondOrder, rng);
  };

  ode::GraphOdeModel full = make_model();
  const TrainResult unbroken =
      fit(experiment::graph_ode_predict_fn(full), full.tensors(), train_set, valid_set, config);

  ode::GraphOdeModel split = make_model();
  TrainConfig first_half = config;
  first_half.epochs = 3;
  const TrainResult part1 = fit(experiment::graph_ode_predict_fn(split), split.tensors(),
                                train_set, valid_set, first_half);
  const TrainResult part2 = fit(experiment::graph_ode_predict_fn(split), split.tensors(),
                                train_set, valid_set, config, nullptr, &part1.state);

  REQUIRE(part2.log.size() == 3);
  CHECK(part2.log.front().epoch == 3);  // epoch numbering continues
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(part2.log[e].train_mse == unbroken.log[e + 3].train_mse);
    CHECK(part2.log[e].valid_mse == unbroken.log[e + 3].valid_mse);
  }
  CHECK(snapshot_params(split.tensors()) == snapshot_params(full.tensors()));
}

TEST_CASE("non-finite loss aborts with epoch and batch") {
  const auto samples = gravity_samples(6, 3, 4000);
  Tensor theta = Tensor::scalar(1.0, true);
  std::size_t calls = 0;
  const PredictFn predict = [&](const TrainSample& sample) {
    ++calls;
    const double value = calls > 8 ? std::numeric_limits<double>::quiet_NaN() : 1.0;
    return broadcast_to(scale(theta, value), {sample.input.n_bodies(), 3});
  };
  TrainConfig config;
  config.batch_size = 3;
  config.epochs = 10;
  config.lr = 1e-3;
  try {
    fit(predict, {theta}, samples, {}, config);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch == 1);
    CHECK(e.batch == 0);  // 6 samples, batch 3: the NaN lands in call 9
  }
}

TEST_CASE("direct baseline trains past the linear extrapolation") {
  // 500 gravity trajectories; the oracle is the closed-form q + v T predictor.
  const auto samples = gravity_samples(500, 3, 6000, 500, 0.1);
  const std::vector<TrainSample> train_set(samples.begin(), samples.begin() + 400);
  const std::vector<TrainSample> valid_set(samples.begin() + 400, samples.end());

  double linear_mse = 0.0;
  for (const TrainSample& sample : valid_set) {
    Mat predicted = sample.input.positions;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      predicted.values[i] += sample.input.velocities.values[i] * 0.5;
    }
    linear_mse += position_mse(predicted, sample.target_positions);
  }
  linear_mse /= static_cast<double>(valid_set.size());

  Rng rng(71);
  const gnn::DirectEgnnConfig config = gnn::DirectEgnnConfig::standard(2, 16, 1);
  gnn::DirectEgnnParams params = gnn::DirectEgnnParams::init(config, rng);
  TrainConfig tc;
  tc.batch_size = 25;
  tc.epochs = 40;
  tc.lr = 2e-3;
  tc.seed = 73;
  tc.patience = 40;
  const TrainResult result = fit(experiment::direct_egnn_predict_fn(params, config),
                                 params.tensors(), train_set, valid_set, tc);
  CHECK(result.state.best_valid_mse < linear_mse);
}

TEST_CASE("short gravity run reduces the training loss by an order of magnitude") {
  // 200 trajectories, 200 epochs; configuration calibrated during bring-up.
  const auto samples = gravity_samples(200, 3, 5000, 1000, 0.1);
  const std::vector<TrainSample> train_set(samples.begin(), samples.begin() + 160);
  const std::vector<TrainSample> valid_set(samples.begin() + 160, samples.end());

  Rng rng(41);
  ode::GraphOdeModel model = ode::GraphOdeModel::init(
      gnn::AccelEgnnConfig::standard(2, 32, 1), {8, 1.0}, ode::Variant::SecondOrder, rng);

  TrainConfig config;
  config.batch_size = 10;
  config.epochs = 200;
  config.lr = 2e-3;
  config.seed = 47;
  config.patience = 200;
  const TrainResult result = fit(experiment::graph_ode_predict_fn(model), model.tensors(),
                                 train_set, valid_set, config);
  const double initial = result.log.front().train_mse;
  const double final_loss = result.log.back().train_mse;
  CHECK(final_loss * 10.0 < initial);
}
