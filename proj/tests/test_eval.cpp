#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "nbode/evaluation.hpp"
#include "nbode/experiment.hpp"
#include "nbode/gnn.hpp"
#include "nbode/ode.hpp"
#include "nbode/sim.hpp"

using namespace nbode;
using namespace nbode::evaluation;
using nbode::sim::SystemKind;

namespace {

/// Shared desk-scale gravity dataset: N=4, 1200 fine steps recorded every 25,
/// window = 100 fine steps (horizon 0.1), so 12 rollout windows fit.
const sim::Dataset& test_dataset() {
  static const sim::Dataset dataset = [] {
    sim::GenerationConfig config = sim::GenerationConfig::defaults(SystemKind::Gravity);
    config.n_bodies = 4;
    config.n_train = 4;
    config.n_valid = 2;
    config.n_test = 12;
    config.total_steps = 1200;
    config.record_every = 25;
    config.seed = 99;
    config.softening = 0.1;
    const auto dir = std::filesystem::temp_directory_path() / "nbode_eval_ds";
    std::filesystem::remove_all(dir);
    sim::build_dataset(config, dir, 2);
    sim::Dataset loaded = sim::load_dataset(dir);
    std::filesystem::remove_all(dir);
    return loaded;
  }();
  return dataset;
}

EvalContext make_context(std::size_t window_fine = 100) {
  EvalContext ctx;
  ctx.dataset = &test_dataset();
  ctx.split = "test";
  ctx.window_fine_steps = window_fine;
  ctx.horizon = static_cast<double>(window_fine) * 1e-3;
  ctx.n_threads = 2;
  return ctx;
}

ode::GraphOdeModel oracle_model(const EvalContext& ctx, std::size_t tau) {
  Rng rng(7);
  ode::GraphOdeModel model = ode::GraphOdeModel::init(
      gnn::AccelEgnnConfig::standard(1, 4, 1), {tau, ctx.horizon},
      ode::Variant::SecondOrder, rng);
  return model;
}

/// Window predictor driven by the true force field at the ground-truth step.
ode::DerivativeProvider oracle_backbone(const sim::SystemState& prototype) {
  const sim::GenerationConfig& config = test_dataset().config;
  const ForceField force =
      system_force(prototype, config.kind, config.softening, config.strength);
  return [force](const Tensor& q) {
    const Mat a = force(Mat(q.dim(0), 3, {q.data().begin(), q.data().end()}));
    return Tensor::from_data({a.rows, a.cols}, a.values);
  };
}

HorizonPredictor oracle_horizon_predictor(const EvalContext& ctx, std::size_t tau_per_window) {
  const double horizon = ctx.horizon;
  return [tau_per_window, horizon](const sim::SystemState& state, double h) {
    const auto tau = static_cast<std::size_t>(
        std::llround(static_cast<double>(tau_per_window) * h));
    const ode::PredictedPath path = ode::integrate_window(
        state, oracle_backbone(state), {tau, horizon * h}, ode::Variant::SecondOrder);
    return path.positions.back();
  };
}

ode::GraphOdeModel zero_backbone_model(const EvalContext& ctx, std::size_t tau) {
  ode::GraphOdeModel model = oracle_model(ctx, tau);
  for (auto& layer : model.params.layers) {
    const std::size_t last = layer.gate.n_layers() - 1;
    std::fill(layer.gate.weight(last).raw_data().begin(),
              layer.gate.weight(last).raw_data().end(), 0.0);
    std::fill(layer.gate.bias(last).raw_data().begin(),
              layer.gate.bias(last).raw_data().end(), 0.0);
  }
  return model;
}

}  // namespace

TEST_CASE("oracle-backbone prediction at the ground-truth step has zero error") {
  const EvalContext ctx = make_context();
  // tau = window_fine_steps reproduces the data-generating integrator exactly;
  // fractional horizons scale tau at fixed dt. At 1.0 the step is the same
  // double, so the replay is bit-exact; scaled horizons recompute dt and may
  // differ by one ulp, which compounds to ~1e-33 in MSE.
  const auto mses = eval_direct(ctx, oracle_horizon_predictor(ctx, 100), {1.0, 1.5, 2.0});
  CHECK(mses.front().mse == 0.0);
  for (const auto& point : mses) {
    CHECK(point.mse < 1e-30);
  }
}

TEST_CASE("linear baseline matches a hand-rolled mse computation") {
  const EvalContext ctx = make_context();
  const auto got = eval_direct(ctx, linear_horizon_predictor(ctx.horizon), {1.0, 2.0});

  // independent oracle: direct loops over the stored arrays
  for (const auto& point : got) {
    const auto truth_index = static_cast<std::size_t>(
        std::llround(point.horizon_multiple * 4));  // window_recorded = 4
    double acc = 0.0;
    std::size_t count = 0;
    for (const sim::Trajectory& t : ctx.trajectories()) {
      const Mat& q0 = t.positions.front();
      const Mat& v0 = t.velocities.front();
      const Mat& qt = t.positions[truth_index];
      double traj_acc = 0.0;
      for (std::size_t i = 0; i < q0.size(); ++i) {
        const double predicted =
            q0.values[i] + v0.values[i] * (ctx.horizon * point.horizon_multiple);
        const double d = predicted - qt.values[i];
        traj_acc += d * d;
      }
      acc += traj_acc / static_cast<double>(q0.size());
      ++count;
    }
    CHECK(point.mse == doctest::Approx(acc / count).epsilon(1e-14));
  }
}

TEST_CASE("misaligned horizon is rejected") {
  const EvalContext ctx = make_context();
  CHECK_THROWS_AS(eval_direct(ctx, linear_horizon_predictor(ctx.horizon), {1.3}), EvalError);
  EvalContext bad = ctx;
  bad.window_fine_steps = 37;  // not a multiple of record_every
  CHECK_THROWS_AS(bad.validate(), EvalError);
}

TEST_CASE("oracle-backbone intermediate states match stored fractions exactly") {
  const EvalContext ctx = make_context();
  // the true force at generation resolution stands in for a learned backbone
  const std::vector<Fraction> fractions = {{1, 4}, {1, 2}, {3, 4}, {1, 1}};

  const auto& trajectories = ctx.trajectories();
  for (const auto& [num, den] : fractions) {
    double acc = 0.0;
    for (const sim::Trajectory& t : trajectories) {
      const sim::SystemState state = t.state_at(0);
      const ode::PredictedPath path = ode::integrate_window(
          state, oracle_backbone(state), {100, ctx.horizon}, ode::Variant::SecondOrder);
      const auto [q, v] = ode::intermediate_at(path, num, den);
      acc += mse(q, t.positions[num * 4 / den]);
    }
    CHECK(acc / trajectories.size() < 1e-8);
  }
}

TEST_CASE("learned-model intermediate fraction one equals direct eval at the horizon") {
  const EvalContext ctx = make_context();
  Rng rng(11);
  const ode::GraphOdeModel model = ode::GraphOdeModel::init(
      gnn::AccelEgnnConfig::standard(2, 8, 1), {8, ctx.horizon}, ode::Variant::SecondOrder,
      rng);
  const auto intermediate = eval_intermediate(ctx, model, {{1, 2}, {1, 1}});
  const auto direct = eval_direct(ctx, graph_ode_horizon_predictor(model), {1.0});
  CHECK(intermediate.back().mse == doctest::Approx(direct.front().mse).epsilon(1e-12));
}

TEST_CASE("baseline hidden-layer extraction indexes layers by fraction") {
  const EvalContext ctx = make_context();
  Rng rng(13);
  const gnn::DirectEgnnConfig config = gnn::DirectEgnnConfig::standard(4, 8, 1);
  const gnn::DirectEgnnParams params = gnn::DirectEgnnParams::init(config, rng);
  const auto rows = eval_intermediate_baseline(ctx, params, config,
                                               {{1, 4}, {1, 2}, {3, 4}, {1, 1}});
  CHECK(rows.size() == 4);
  for (const auto& row : rows) CHECK(std::isfinite(row.mse));

  // fraction 1 reads the final layer: must equal direct prediction MSE
  const auto direct = eval_direct(
      ctx,
      [&](const sim::SystemState& state, double) {
        NoGradGuard no_grad;
        const auto prediction = gnn::direct_egnn_predict(state, params, config);
        return Mat(state.positions.rows, 3,
                   {prediction.positions.data().begin(), prediction.positions.data().end()});
      },
      {1.0});
  CHECK(rows.back().mse == doctest::Approx(direct.front().mse).epsilon(1e-12));
}

TEST_CASE("rollout window one equals direct eval and zero backbone matches closed form") {
  const EvalContext ctx = make_context();
  const ode::GraphOdeModel zero_model = zero_backbone_model(ctx, 4);

  const auto rollout_points = eval_rollout(ctx, ode::window_predictor(zero_model), 10);
  REQUIRE(rollout_points.size() == 10);
  const auto direct = eval_direct(ctx, graph_ode_horizon_predictor(zero_model), {1.0});
  CHECK(rollout_points.front().mse == doctest::Approx(direct.front().mse).epsilon(1e-9));

  // closed-form oracle: q0 + k T v0 against the stored ground truth
  const auto& trajectories = ctx.trajectories();
  for (std::size_t w = 0; w < 10; ++w) {
    double acc = 0.0;
    for (const sim::Trajectory& t : trajectories) {
      const Mat& q0 = t.positions.front();
      const Mat& v0 = t.velocities.front();
      const Mat& qt = t.positions[(w + 1) * 4];
      double traj_acc = 0.0;
      for (std::size_t i = 0; i < q0.size(); ++i) {
        const double predicted =
            q0.values[i] + v0.values[i] * (ctx.horizon * static_cast<double>(w + 1));
        const double d = predicted - qt.values[i];
        traj_acc += d * d;
      }
      acc += traj_acc / static_cast<double>(q0.size());
    }
    CHECK(rollout_points[w].mse ==
          doctest::Approx(acc / trajectories.size()).epsilon(1e-9));
    CHECK(rollout_points[w].n_alive == trajectories.size());
    CHECK_FALSE(rollout_points[w].diverged());
  }

  // extrapolation error compounds on gravity data
  for (std::size_t w = 1; w < 10; ++w) {
    CHECK(rollout_points[w].mse >= rollout_points[w - 1].mse);
  }
}

TEST_CASE("diverging predictor yields flags, not NaN propagation") {
  const EvalContext ctx = make_context();
  std::size_t window_count = 0;
  const ode::WindowPredictor wild = [&](const sim::SystemState& state) {
    ++window_count;
    Mat q = state.positions;
    if (window_count % 4 == 0) {
      for (double& v : q.values) v *= 1e7;
    }
    return ode::WindowPrediction{q, state.velocities, true};
  };
  const auto points = eval_rollout(ctx, wild, 6, 1e6);
  bool saw_divergence = false;
  for (const auto& point : points) {
    saw_divergence = saw_divergence || point.diverged();
    if (point.n_alive > 0) CHECK(std::isfinite(point.mse));
  }
  CHECK(saw_divergence);
}

TEST_CASE("numerical solver comparison is exact at the generating step") {
  const EvalContext ctx = make_context();
  const auto curves = compare_numerical(ctx, {1e-3}, 6);
  REQUIRE(curves.size() == 1);
  for (const auto& point : curves.front().points) {
    CHECK(point.mse == 0.0);
  }
}

TEST_CASE("coarser solver steps give monotonically worse rollouts and first-order slope") {
  const EvalContext ctx = make_context();
  const std::vector<double> dts = {0.1, 0.05, 0.025, 0.0125};
  const auto curves = compare_numerical(ctx, dts, 6);

  // monotone in dt at every window
  for (std::size_t w = 0; w < 6; ++w) {
    for (std::size_t c = 1; c < curves.size(); ++c) {
      CHECK(curves[c - 1].points[w].mse >= curves[c].points[w].mse);
    }
  }

  // the one-window error is the fixed-horizon global error; its RMSE decays
  // with slope about 1 in dt
  std::vector<double> rmse;
  for (const auto& curve : curves) rmse.push_back(std::sqrt(curve.points.front().mse));
  const double slope = fit_loglog_slope(dts, rmse);
  CHECK(slope > 0.8);
  CHECK(slope < 1.2);
}

TEST_CASE("equivariance audit on a random model stays at float-accumulation level") {
  const EvalContext ctx = make_context();
  Rng rng(17);
  const ode::GraphOdeModel model = ode::GraphOdeModel::init(
      gnn::AccelEgnnConfig::standard(2, 16, 1), {8, ctx.horizon},
      ode::Variant::SecondOrder, rng);
  std::vector<sim::SystemState> states;
  for (std::size_t t = 0; t < 3; ++t) states.push_back(ctx.trajectories()[t].state_at(0));

  const EquivarianceResult result = equivariance_audit(model, states, 20, 555);
  CHECK(result.max_deviation < 1e-6);
  CHECK(result.n_transforms == 20);
  CHECK(result.transform_seed == 555);

  // seeded audits replay exactly
  const EquivarianceResult again = equivariance_audit(model, states, 20, 555);
  CHECK(result.max_deviation == again.max_deviation);

  // the identity transform is the degenerate case: repeated evaluation of the
  // same state is bit-identical, so its deviation is exactly zero
  const ode::PredictedPath once = ode::integrate_window(states[0], model);
  const ode::PredictedPath twice = ode::integrate_window(states[0], model);
  for (std::size_t k = 0; k < once.positions.size(); ++k) {
    CHECK(once.positions[k] == twice.positions[k]);
    CHECK(once.velocities[k] == twice.velocities[k]);
  }
}

TEST_CASE("truncation scan recovers second-order local and first-order global slopes") {
  sim::GenerationConfig config = sim::GenerationConfig::defaults(SystemKind::Gravity);
  config.n_bodies = 3;
  Rng rng(19);
  const sim::SystemState state = sim::sample_initial_gravity(config, rng);
  const ForceField force = system_force(state, SystemKind::Gravity, 0.1, 1.0);

  const TruncationResult result =
      truncation_scan(force, state, {0.2, 0.1, 0.05, 0.025}, 1.0);
  CHECK(result.local_slope > 1.8);
  CHECK(result.local_slope < 2.2);
  CHECK(result.global_slope > 0.8);
  CHECK(result.global_slope < 1.2);

  CHECK_THROWS_AS(truncation_scan(force, state, {0.1, 0.05}, 1.0), EvalError);
}

TEST_CASE("constant force field admits an exact local-error formula") {
  // With constant f the flow is exactly quadratic and symplectic Euler at
  // step h lands on q0 + t v0 + f (t^2 + t h) / 2, so the single-step
  // residual against the fine reference (step h = dt_min / 64) is exactly
  // f dt (dt - h) / 2 -- the dt^2 term of the residual survives and the
  // fitted slope sits at 2 up to the h/dt correction.
  Mat q(2, 3), v(2, 3), h(2, 1);
  q.at(1, 0) = 1.0;
  v.at(0, 1) = 0.3;
  h.at(0, 0) = h.at(1, 0) = 1.0;
  const sim::SystemState state = sim::make_complete_state(q, v, h);

  Mat constant_accel(2, 3);
  for (std::size_t i = 0; i < constant_accel.size(); ++i) {
    constant_accel.values[i] = 0.1 * static_cast<double>(i + 1);
  }
  double f_norm = 0.0;
  for (double x : constant_accel.values) f_norm += x * x;
  f_norm = std::sqrt(f_norm);

  const ForceField force = [&](const Mat&) { return constant_accel; };
  const TruncationResult result = truncation_scan(force, state, {0.2, 0.1, 0.05}, 1.0);
  const double dt_ref = 0.05 / 64.0;
  for (std::size_t i = 0; i < result.dts.size(); ++i) {
    const double dt = result.dts[i];
    CHECK(result.local_errors[i] ==
          doctest::Approx(0.5 * f_norm * dt * (dt - dt_ref)).epsilon(1e-9));
  }
  CHECK(result.local_slope == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("tau scan tabulates the callback results") {
  const auto points = tau_scan([](std::size_t tau) { return 1.0 / tau; }, {1, 2, 8});
  REQUIRE(points.size() == 3);
  CHECK(points[0].tau == 1);
  CHECK(points[0].mse == 1.0);
  CHECK(points[2].mse == doctest::Approx(0.125));
}
