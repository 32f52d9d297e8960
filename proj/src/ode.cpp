#include "nbode/ode.hpp"

#include <cmath>
#include <ostream>

namespace nbode::ode {

namespace {

Tensor tensor_from_mat(const Mat& m) {
  return Tensor::from_data({m.rows, m.cols}, m.values);
}

Mat mat_from_tensor(const Tensor& t) {
  return Mat(t.dim(0), t.dim(1), {t.data().begin(), t.data().end()});
}

bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

void IntegratorConfig::validate() const {
  if (tau == 0) throw IntegrationError(0, "integrator: tau must be >= 1");
  if (!(horizon > 0.0)) throw IntegrationError(0, "integrator: horizon must be positive");
}

std::string variant_name(Variant variant) {
  return variant == Variant::FirstOrder ? "first-order" : "second-order";
}

Variant variant_from_name(const std::string& name) {
  if (name == "first-order") return Variant::FirstOrder;
  if (name == "second-order") return Variant::SecondOrder;
  throw IntegrationError(0, "unknown variant: " + name);
}

GraphOdeModel GraphOdeModel::init(const gnn::AccelEgnnConfig& backbone,
                                  const IntegratorConfig& integrator, Variant variant,
                                  Rng& rng) {
  integrator.validate();
  GraphOdeModel model;
  model.backbone = backbone;
  model.params = gnn::AccelEgnnParams::init(backbone, rng);
  model.integrator = integrator;
  model.variant = variant;
  return model;
}

PredictedPath integrate_window(const sim::SystemState& state,
                               const DerivativeProvider& backbone,
                               const IntegratorConfig& integrator, Variant variant) {
  integrator.validate();
  const double dt = integrator.dt();

  Tensor q = tensor_from_mat(state.positions);
  Tensor v = tensor_from_mat(state.velocities);

  PredictedPath path;
  path.positions.reserve(integrator.tau + 1);
  path.velocities.reserve(integrator.tau + 1);
  path.positions.push_back(state.positions);
  path.velocities.push_back(state.velocities);

  for (std::size_t k = 0; k < integrator.tau; ++k) {
    const Tensor derivative = backbone(q);
    if (variant == Variant::SecondOrder) {
      v = add(v, scale(derivative, dt));  // velocity first, then position
    } else {
      v = derivative;  // backbone models the first-order derivative
    }
    q = add(q, scale(v, dt));
    if (!all_finite(q) || !all_finite(v)) {
      throw IntegrationError(k, "integrate_window: non-finite state at iteration " +
                                    std::to_string(k));
    }
    path.positions.push_back(mat_from_tensor(q));
    path.velocities.push_back(mat_from_tensor(v));
  }
  path.q_final = q;
  path.v_final = v;
  return path;
}

PredictedPath integrate_window(const sim::SystemState& state, const GraphOdeModel& model) {
  const gnn::GraphInputs graph = gnn::GraphInputs::from_state(state);
  const DerivativeProvider backbone = [&](const Tensor& q) {
    return gnn::egnn_accel(q, graph, model.params, model.backbone);
  };
  return integrate_window(state, backbone, model.integrator, model.variant);
}

std::pair<Mat, Mat> intermediate_at(const PredictedPath& path, std::size_t numerator,
                                    std::size_t denominator) {
  if (denominator == 0 || numerator > denominator) {
    throw IntegrationError(0, "intermediate_at: fraction must lie in [0, 1]");
  }
  const std::size_t tau = path.tau();
  if ((numerator * tau) % denominator != 0) {
    throw IntegrationError(
        0, "intermediate_at: fraction " + std::to_string(numerator) + "/" +
               std::to_string(denominator) + " does not land on a stored snapshot; " +
               "choose tau divisible by the requested denominators");
  }
  const std::size_t index = numerator * tau / denominator;
  return {path.positions[index], path.velocities[index]};
}

RolloutResult rollout(const sim::SystemState& initial, const WindowPredictor& predictor,
                      std::size_t n_windows, double horizon, double position_cap) {
  RolloutResult result;
  sim::SystemState state = initial;
  Mat previous_positions = initial.positions;
  for (std::size_t window = 0; window < n_windows; ++window) {
    WindowPrediction prediction;
    try {
      prediction = predictor(state);
    } catch (const IntegrationError&) {
      result.diverged = true;
      result.diverged_at_window = window;
      break;
    }
    double worst = 0.0;
    for (double v : prediction.positions.values) {
      worst = std::max(worst, std::abs(v));
      if (!std::isfinite(v)) worst = position_cap + 1.0;
    }
    if (worst > position_cap) {
      result.diverged = true;
      result.diverged_at_window = window;
      break;
    }
    if (!prediction.has_velocity) {
      // finite-difference fallback for position-only models
      Mat fd(prediction.positions.rows, 3);
      for (std::size_t i = 0; i < fd.size(); ++i) {
        fd.values[i] =
            (prediction.positions.values[i] - previous_positions.values[i]) / horizon;
      }
      prediction.velocities = std::move(fd);
    }
    previous_positions = state.positions;
    state.positions = prediction.positions;
    state.velocities = prediction.velocities;
    result.positions.push_back(state.positions);
    result.velocities.push_back(state.velocities);
  }
  return result;
}

RolloutResult rollout(const sim::SystemState& initial, const GraphOdeModel& model,
                      std::size_t n_windows, double position_cap) {
  return rollout(initial, window_predictor(model), n_windows, model.integrator.horizon,
                 position_cap);
}

WindowPredictor window_predictor(const GraphOdeModel& model) {
  return [&model](const sim::SystemState& state) {
    NoGradGuard no_grad;
    const PredictedPath path = integrate_window(state, model);
    return WindowPrediction{path.positions.back(), path.velocities.back(), true};
  };
}

void write_path_csv(std::ostream& out, const std::vector<PredictedPath>& windows) {
  out << "window,step,particle,qx,qy,qz,vx,vy,vz\n";
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const PredictedPath& path = windows[w];
    for (std::size_t step = 0; step < path.positions.size(); ++step) {
      const Mat& q = path.positions[step];
      const Mat& v = path.velocities[step];
      for (std::size_t particle = 0; particle < q.rows; ++particle) {
        out << w << ',' << step << ',' << particle;
        for (std::size_t c = 0; c < 3; ++c) out << ',' << q.at(particle, c);
        for (std::size_t c = 0; c < 3; ++c) out << ',' << v.at(particle, c);
        out << '\n';
      }
    }
  }
}

}  // namespace nbode::ode
