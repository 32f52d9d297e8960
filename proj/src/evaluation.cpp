#include "nbode/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "nbode/parallel.hpp"
#include "nbode/training.hpp"

namespace nbode::evaluation {

namespace {

std::size_t integral_index(double value, const char* what) {
  const double rounded = std::round(value);
  if (std::abs(value - rounded) > 1e-9 || rounded < 0.0) {
    throw EvalError(std::string(what) + ": " + std::to_string(value) +
                    " does not land on a stored state");
  }
  return static_cast<std::size_t>(rounded);
}

double frobenius_distance(const Mat& a, const Mat& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

double frobenius_norm(const Mat& a) {
  double acc = 0.0;
  for (double v : a.values) acc += v * v;
  return std::sqrt(acc);
}

struct FlowState {
  Mat q;
  Mat v;
};

FlowState step_flow(const FlowState& state, const ForceField& force, double dt) {
  const Mat accel = force(state.q);
  FlowState next = state;
  for (std::size_t i = 0; i < state.q.size(); ++i) {
    const double v_new = state.v.values[i] + accel.values[i] * dt;
    next.v.values[i] = v_new;
    next.q.values[i] = state.q.values[i] + v_new * dt;
  }
  return next;
}

FlowState integrate_flow(FlowState state, const ForceField& force, double dt,
                         std::size_t steps) {
  for (std::size_t s = 0; s < steps; ++s) state = step_flow(state, force, dt);
  return state;
}

/// Gram-Schmidt QR of a Gaussian 3x3; determinant sign chosen by a coin flip
/// so the audit covers reflections.
Mat random_orthogonal(Rng& rng) {
  for (;;) {
    double col[3][3];
    for (auto& v : col) {
      for (double& x : v) x = rng.normal();
    }
    Mat qmat(3, 3);
    bool ok = true;
    for (std::size_t c = 0; c < 3 && ok; ++c) {
      double v[3] = {col[c][0], col[c][1], col[c][2]};
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t r = 0; r < 3; ++r) dot += v[r] * qmat.at(r, p);
        for (std::size_t r = 0; r < 3; ++r) v[r] -= dot * qmat.at(r, p);
      }
      const double nrm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (nrm < 1e-6) {
        ok = false;
        break;
      }
      for (std::size_t r = 0; r < 3; ++r) qmat.at(r, c) = v[r] / nrm;
    }
    if (!ok) continue;
    const bool want_reflection = rng.uniform() < 0.5;
    const double det =
        qmat.at(0, 0) * (qmat.at(1, 1) * qmat.at(2, 2) - qmat.at(1, 2) * qmat.at(2, 1)) -
        qmat.at(0, 1) * (qmat.at(1, 0) * qmat.at(2, 2) - qmat.at(1, 2) * qmat.at(2, 0)) +
        qmat.at(0, 2) * (qmat.at(1, 0) * qmat.at(2, 1) - qmat.at(1, 1) * qmat.at(2, 0));
    if ((det < 0.0) != want_reflection) {
      for (std::size_t r = 0; r < 3; ++r) qmat.at(r, 2) = -qmat.at(r, 2);
    }
    return qmat;
  }
}

Mat apply_linear(const Mat& q3, const Mat& points) {
  Mat out(points.rows, 3);
  for (std::size_t i = 0; i < points.rows; ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      out.at(i, a) = q3.at(a, 0) * points.at(i, 0) + q3.at(a, 1) * points.at(i, 1) +
                     q3.at(a, 2) * points.at(i, 2);
    }
  }
  return out;
}

}  // namespace

std::size_t EvalContext::window_recorded() const {
  const sim::GenerationConfig& config = dataset->config;
  if (window_fine_steps % config.record_every != 0) {
    throw EvalError("eval: window of " + std::to_string(window_fine_steps) +
                    " steps does not land on recorded states (record_every=" +
                    std::to_string(config.record_every) + ")");
  }
  return window_fine_steps / config.record_every;
}

const std::vector<sim::Trajectory>& EvalContext::trajectories() const {
  return dataset->split(split);
}

void EvalContext::validate() const {
  if (dataset == nullptr) throw EvalError("eval: no dataset bound");
  if (trajectories().empty()) throw EvalError("eval: split '" + split + "' is empty");
  window_recorded();
}

double mse(const Mat& predicted, const Mat& target) {
  if (predicted.rows != target.rows || predicted.cols != target.cols) {
    throw EvalError("mse: shape mismatch");
  }
  return training::position_mse(predicted, target);
}

std::vector<HorizonMse> eval_direct(const EvalContext& ctx,
                                    const HorizonPredictor& predictor,
                                    const std::vector<double>& horizon_multiples) {
  ctx.validate();
  const auto& trajectories = ctx.trajectories();
  const std::size_t window = ctx.window_recorded();

  std::vector<HorizonMse> out;
  for (const double h : horizon_multiples) {
    const std::size_t truth_index =
        integral_index(h * static_cast<double>(window), "eval_direct horizon");
    if (truth_index >= trajectories.front().n_states()) {
      throw EvalError("eval_direct: horizon " + std::to_string(h) +
                      " exceeds the stored trajectory length");
    }
    std::vector<double> per_traj(trajectories.size());
    parallel_for(trajectories.size(), ctx.n_threads, [&](std::size_t t) {
      const sim::Trajectory& trajectory = trajectories[t];
      const Mat predicted = predictor(trajectory.state_at(0), h);
      per_traj[t] = mse(predicted, trajectory.positions[truth_index]);
    });
    double acc = 0.0;
    for (double v : per_traj) acc += v;
    out.push_back({h, acc / static_cast<double>(per_traj.size())});
  }
  return out;
}

HorizonPredictor graph_ode_horizon_predictor(const ode::GraphOdeModel& model) {
  return [&model](const sim::SystemState& state, double horizon_multiple) {
    ode::GraphOdeModel scaled = model;  // parameters are shared handles
    const double tau_scaled = static_cast<double>(model.integrator.tau) * horizon_multiple;
    scaled.integrator.tau = integral_index(tau_scaled, "tau scaling");
    scaled.integrator.horizon = model.integrator.horizon * horizon_multiple;
    NoGradGuard no_grad;
    return ode::integrate_window(state, scaled).positions.back();
  };
}

HorizonPredictor linear_horizon_predictor(double horizon) {
  return [horizon](const sim::SystemState& state, double horizon_multiple) {
    Mat q = state.positions;
    const double t = horizon * horizon_multiple;
    for (std::size_t i = 0; i < q.size(); ++i) q.values[i] += state.velocities.values[i] * t;
    return q;
  };
}

std::vector<FractionMse> eval_intermediate(const EvalContext& ctx,
                                           const ode::GraphOdeModel& model,
                                           const std::vector<Fraction>& fractions) {
  ctx.validate();
  const auto& trajectories = ctx.trajectories();
  const std::size_t window = ctx.window_recorded();

  std::vector<std::vector<double>> per_fraction(fractions.size(),
                                                std::vector<double>(trajectories.size()));
  parallel_for(trajectories.size(), ctx.n_threads, [&](std::size_t t) {
    NoGradGuard no_grad;
    const sim::Trajectory& trajectory = trajectories[t];
    const ode::PredictedPath path = ode::integrate_window(trajectory.state_at(0), model);
    for (std::size_t f = 0; f < fractions.size(); ++f) {
      const auto [num, den] = fractions[f];
      const auto [q, v] = ode::intermediate_at(path, num, den);
      const std::size_t truth_index = integral_index(
          static_cast<double>(num) * window / static_cast<double>(den), "fraction");
      per_fraction[f][t] = mse(q, trajectory.positions[truth_index]);
    }
  });

  std::vector<FractionMse> out;
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    double acc = 0.0;
    for (double v : per_fraction[f]) acc += v;
    out.push_back({fractions[f].first, fractions[f].second,
                   acc / static_cast<double>(trajectories.size())});
  }
  return out;
}

std::vector<FractionMse> eval_intermediate_baseline(
    const EvalContext& ctx, const gnn::DirectEgnnParams& params,
    const gnn::DirectEgnnConfig& config, const std::vector<Fraction>& fractions) {
  ctx.validate();
  const auto& trajectories = ctx.trajectories();
  const std::size_t window = ctx.window_recorded();

  std::vector<std::vector<double>> per_fraction(fractions.size(),
                                                std::vector<double>(trajectories.size()));
  parallel_for(trajectories.size(), ctx.n_threads, [&](std::size_t t) {
    NoGradGuard no_grad;
    const sim::Trajectory& trajectory = trajectories[t];
    const gnn::DirectPrediction prediction =
        gnn::direct_egnn_predict(trajectory.state_at(0), params, config);
    for (std::size_t f = 0; f < fractions.size(); ++f) {
      const auto [num, den] = fractions[f];
      const double depth = static_cast<double>(config.n_layers);
      const auto layer = static_cast<std::size_t>(
          std::llround(static_cast<double>(num) * depth / static_cast<double>(den)));
      const std::size_t truth_index = integral_index(
          static_cast<double>(num) * window / static_cast<double>(den), "fraction");
      per_fraction[f][t] =
          mse(prediction.layer_positions[layer], trajectory.positions[truth_index]);
    }
  });

  std::vector<FractionMse> out;
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    double acc = 0.0;
    for (double v : per_fraction[f]) acc += v;
    out.push_back({fractions[f].first, fractions[f].second,
                   acc / static_cast<double>(trajectories.size())});
  }
  return out;
}

std::vector<RolloutPoint> eval_rollout(const EvalContext& ctx,
                                       const ode::WindowPredictor& predictor,
                                       std::size_t n_windows, double position_cap) {
  ctx.validate();
  const auto& trajectories = ctx.trajectories();
  const std::size_t window = ctx.window_recorded();
  if (n_windows * window >= trajectories.front().n_states()) {
    throw EvalError("eval_rollout: " + std::to_string(n_windows) +
                    " windows exceed the stored trajectory length");
  }

  std::vector<ode::RolloutResult> results(trajectories.size());
  parallel_for(trajectories.size(), ctx.n_threads, [&](std::size_t t) {
    results[t] = ode::rollout(trajectories[t].state_at(0), predictor, n_windows,
                              ctx.horizon, position_cap);
  });

  std::vector<RolloutPoint> out;
  for (std::size_t w = 0; w < n_windows; ++w) {
    RolloutPoint point{w + 1, 0.0, 0, 0};
    double acc = 0.0;
    for (std::size_t t = 0; t < trajectories.size(); ++t) {
      if (results[t].positions.size() <= w) {
        ++point.n_diverged;
        continue;
      }
      acc += mse(results[t].positions[w], trajectories[t].positions[(w + 1) * window]);
      ++point.n_alive;
    }
    point.mse = point.n_alive > 0 ? acc / static_cast<double>(point.n_alive)
                                  : std::numeric_limits<double>::quiet_NaN();
    out.push_back(point);
  }
  return out;
}

std::vector<NumericalCurve> compare_numerical(const EvalContext& ctx,
                                              const std::vector<double>& dts,
                                              std::size_t n_windows) {
  ctx.validate();
  const sim::GenerationConfig& config = ctx.dataset->config;
  std::vector<NumericalCurve> curves;
  for (const double dt : dts) {
    const std::size_t steps_per_window =
        integral_index(ctx.horizon / dt, "compare_numerical steps per window");
    const ode::WindowPredictor predictor = [&, steps_per_window,
                                            dt](const sim::SystemState& state) {
      const ForceField force =
          system_force(state, config.kind, config.softening, config.strength);
      FlowState flow{state.positions, state.velocities};
      flow = integrate_flow(std::move(flow), force, dt, steps_per_window);
      return ode::WindowPrediction{std::move(flow.q), std::move(flow.v), true};
    };
    curves.push_back({dt, eval_rollout(ctx, predictor, n_windows)});
  }
  return curves;
}

std::vector<TauPoint> tau_scan(const std::function<double(std::size_t)>& train_and_eval,
                               const std::vector<std::size_t>& taus) {
  std::vector<TauPoint> out;
  for (const std::size_t tau : taus) out.push_back({tau, train_and_eval(tau)});
  return out;
}

EquivarianceResult equivariance_audit(const ode::GraphOdeModel& model,
                                      const std::vector<sim::SystemState>& states,
                                      std::size_t n_transforms, std::uint64_t seed) {
  NoGradGuard no_grad;
  Rng rng(seed, 0x03a7);

  std::vector<ode::PredictedPath> base_paths;
  base_paths.reserve(states.size());
  for (const sim::SystemState& state : states) {
    base_paths.push_back(ode::integrate_window(state, model));
  }

  double worst = 0.0;
  for (std::size_t t = 0; t < n_transforms; ++t) {
    const Mat q3 = random_orthogonal(rng);
    Mat shift(1, 3);
    for (double& v : shift.values) v = rng.normal();

    for (std::size_t s = 0; s < states.size(); ++s) {
      sim::SystemState transformed = states[s];
      transformed.positions = apply_linear(q3, states[s].positions);
      for (std::size_t i = 0; i < transformed.positions.rows; ++i) {
        for (std::size_t c = 0; c < 3; ++c) transformed.positions.at(i, c) += shift.values[c];
      }
      transformed.velocities = apply_linear(q3, states[s].velocities);

      const ode::PredictedPath moved = ode::integrate_window(transformed, model);
      const ode::PredictedPath& base = base_paths[s];
      for (std::size_t k = 0; k < base.positions.size(); ++k) {
        Mat expected_q = apply_linear(q3, base.positions[k]);
        for (std::size_t i = 0; i < expected_q.rows; ++i) {
          for (std::size_t c = 0; c < 3; ++c) expected_q.at(i, c) += shift.values[c];
        }
        const Mat expected_v = apply_linear(q3, base.velocities[k]);
        const double dq = frobenius_distance(moved.positions[k], expected_q) /
                          std::max(frobenius_norm(expected_q), 1e-12);
        const double dv = frobenius_distance(moved.velocities[k], expected_v) /
                          std::max(frobenius_norm(expected_v), 1e-12);
        worst = std::max(worst, std::max(dq, dv));
      }
    }
  }
  return {worst, n_transforms, seed};
}

ForceField system_force(const sim::SystemState& prototype, sim::SystemKind kind,
                        double softening, double strength) {
  return [prototype, kind, softening, strength](const Mat& positions) {
    sim::SystemState probe = prototype;
    probe.positions = positions;
    return sim::true_accel(probe, kind, softening, strength);
  };
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

TruncationResult truncation_scan(const ForceField& force,
                                 const sim::SystemState& initial,
                                 std::vector<double> dts, double horizon) {
  if (dts.size() < 3) {
    throw EvalError("truncation_scan: slope fit needs at least 3 step sizes");
  }
  std::sort(dts.begin(), dts.end());

  const double dt_ref = dts.front() / 64.0;
  const std::size_t total_ref_steps = integral_index(horizon / dt_ref, "reference steps");

  // one fine reference pass; snapshots at every multiple of the smallest dt
  std::vector<FlowState> reference;
  reference.reserve(total_ref_steps / 64 + 1);
  FlowState flow{initial.positions, initial.velocities};
  reference.push_back(flow);
  for (std::size_t s = 1; s <= total_ref_steps; ++s) {
    flow = step_flow(flow, force, dt_ref);
    if (s % 64 == 0) reference.push_back(flow);
  }

  TruncationResult result;
  result.dts = dts;
  const Mat accel0 = force(initial.positions);
  for (const double dt : dts) {
    // every dt must be an integer multiple of the smallest one
    const std::size_t ref_index = integral_index(dt / dts.front(), "dt ratio");
    const FlowState& ref_at_dt = reference[ref_index];
    // Eq.-style single-step residual: q(t+dt) - q - q_dot dt - f(q) dt^2
    Mat residual = ref_at_dt.q;
    for (std::size_t i = 0; i < residual.size(); ++i) {
      residual.values[i] -= initial.positions.values[i] +
                            initial.velocities.values[i] * dt +
                            accel0.values[i] * dt * dt;
    }
    result.local_errors.push_back(frobenius_norm(residual));

    const std::size_t coarse_steps = integral_index(horizon / dt, "coarse steps");
    const FlowState coarse =
        integrate_flow({initial.positions, initial.velocities}, force, dt, coarse_steps);
    result.global_errors.push_back(frobenius_distance(coarse.q, reference.back().q));
  }
  result.local_slope = fit_loglog_slope(result.dts, result.local_errors);
  result.global_slope = fit_loglog_slope(result.dts, result.global_errors);
  return result;
}

}  // namespace nbode::evaluation
