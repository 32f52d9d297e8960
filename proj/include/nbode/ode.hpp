#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nbode/gnn.hpp"
#include "nbode/mat.hpp"
#include "nbode/sim.hpp"
#include "nbode/tensor.hpp"

namespace nbode::ode {

/// tau shared-parameter integrator iterations subdividing one prediction
/// window of length `horizon` into steps dt = horizon / tau.
struct IntegratorConfig {
  std::size_t tau = 8;
  double horizon = 1.0;

  double dt() const { return horizon / static_cast<double>(tau); }
  void validate() const;
};

/// SecondOrder: the backbone predicts accelerations and the window is
/// integrated by symplectic Euler. FirstOrder: the backbone output is taken
/// as the velocity directly (ablation variant).
enum class Variant { SecondOrder, FirstOrder };

std::string variant_name(Variant variant);
Variant variant_from_name(const std::string& name);

struct GraphOdeModel {
  gnn::AccelEgnnConfig backbone;
  gnn::AccelEgnnParams params;
  IntegratorConfig integrator;
  Variant variant = Variant::SecondOrder;

  static GraphOdeModel init(const gnn::AccelEgnnConfig& backbone,
                            const IntegratorConfig& integrator, Variant variant,
                            Rng& rng);
  std::vector<NamedParam> named_params() const { return params.named_params(); }
  std::vector<Tensor> tensors() const { return params.tensors(); }
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(std::size_t iteration, const std::string& what)
      : std::runtime_error(what), iteration(iteration) {}
  std::size_t iteration;
};

/// All tau+1 (q, q_dot) snapshots of one window, t0 first, plus the final
/// tensors still attached to the autodiff graph for training losses.
struct PredictedPath {
  std::vector<Mat> positions;
  std::vector<Mat> velocities;
  Tensor q_final;
  Tensor v_final;

  std::size_t tau() const { return positions.size() - 1; }
};

/// The backbone seen by the integrator: positions in, derivative out. Lets
/// tests and the numerical-comparison harness swap in the true force field.
using DerivativeProvider = std::function<Tensor(const Tensor& positions)>;

PredictedPath integrate_window(const sim::SystemState& state,
                               const DerivativeProvider& backbone,
                               const IntegratorConfig& integrator, Variant variant);

PredictedPath integrate_window(const sim::SystemState& state, const GraphOdeModel& model);

/// Snapshot at fraction numerator/denominator of the window; requires
/// fraction * tau to be an integer. Returns (positions, velocities).
std::pair<Mat, Mat> intermediate_at(const PredictedPath& path, std::size_t numerator,
                                    std::size_t denominator);

/// One window of any model during rollout. Models that do not predict a
/// velocity set has_velocity = false and the rollout substitutes the
/// finite-difference velocity (q_k - q_{k-1}) / (t_k - t_{k-1}).
struct WindowPrediction {
  Mat positions;
  Mat velocities;
  bool has_velocity = true;
};

using WindowPredictor = std::function<WindowPrediction(const sim::SystemState&)>;

struct RolloutResult {
  std::vector<Mat> positions;   // one entry per completed window
  std::vector<Mat> velocities;
  bool diverged = false;
  std::size_t diverged_at_window = 0;  // first window that failed, when diverged
};

RolloutResult rollout(const sim::SystemState& initial, const WindowPredictor& predictor,
                      std::size_t n_windows, double horizon,
                      double position_cap = 1e6);

RolloutResult rollout(const sim::SystemState& initial, const GraphOdeModel& model,
                      std::size_t n_windows, double position_cap = 1e6);

WindowPredictor window_predictor(const GraphOdeModel& model);

/// Exports a window-by-window path as CSV with columns
/// (window, step, particle, qx, qy, qz, vx, vy, vz).
void write_path_csv(std::ostream& out, const std::vector<PredictedPath>& windows);

}  // namespace nbode::ode
