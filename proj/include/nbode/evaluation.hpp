#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "nbode/dataset.hpp"
#include "nbode/gnn.hpp"
#include "nbode/mat.hpp"
#include "nbode/ode.hpp"
#include "nbode/sim.hpp"

namespace nbode::evaluation {

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& what) : std::runtime_error(what) {}
};

/// Binds a loaded dataset to the experiment clock: one model window of
/// length `horizon` (model time) spans `window_fine_steps` ground-truth
/// steps, which must land on stored states.
struct EvalContext {
  const sim::Dataset* dataset = nullptr;
  std::string split = "test";
  std::size_t window_fine_steps = 1000;
  double horizon = 1.0;
  std::size_t n_threads = 1;

  std::size_t window_recorded() const;
  const std::vector<sim::Trajectory>& trajectories() const;
  void validate() const;
};

/// Per-coordinate mean squared error (the reporting convention throughout).
double mse(const Mat& predicted, const Mat& target);

// --- direct prediction across horizons ------------------------------------

struct HorizonMse {
  double horizon_multiple;
  double mse;
};

using HorizonPredictor = std::function<Mat(const sim::SystemState&, double)>;

std::vector<HorizonMse> eval_direct(const EvalContext& ctx,
                                    const HorizonPredictor& predictor,
                                    const std::vector<double>& horizon_multiples);

/// Scales tau proportionally at fixed dt for horizons other than the
/// training window.
HorizonPredictor graph_ode_horizon_predictor(const ode::GraphOdeModel& model);

/// q + q_dot * (h * horizon): the Linear extrapolation baseline.
HorizonPredictor linear_horizon_predictor(double horizon);

// --- long-to-short intermediate generalization -----------------------------

struct FractionMse {
  std::size_t numerator;
  std::size_t denominator;
  double mse;
};

using Fraction = std::pair<std::size_t, std::size_t>;

std::vector<FractionMse> eval_intermediate(const EvalContext& ctx,
                                           const ode::GraphOdeModel& model,
                                           const std::vector<Fraction>& fractions);

/// Positions read out of the baseline's hidden layers at depth
/// round(fraction * n_layers).
std::vector<FractionMse> eval_intermediate_baseline(
    const EvalContext& ctx, const gnn::DirectEgnnParams& params,
    const gnn::DirectEgnnConfig& config, const std::vector<Fraction>& fractions);

// --- multi-window rollout ---------------------------------------------------

struct RolloutPoint {
  std::size_t window;       // 1-based boundary index
  double mse;               // over trajectories still alive at this window
  std::size_t n_alive;
  std::size_t n_diverged;
  bool diverged() const { return n_diverged > 0; }
};

std::vector<RolloutPoint> eval_rollout(const EvalContext& ctx,
                                       const ode::WindowPredictor& predictor,
                                       std::size_t n_windows,
                                       double position_cap = 1e6);

// --- pure numerical-solver comparison ---------------------------------------

struct NumericalCurve {
  double dt;  // model-time forward step
  std::vector<RolloutPoint> points;
};

std::vector<NumericalCurve> compare_numerical(const EvalContext& ctx,
                                              const std::vector<double>& dts,
                                              std::size_t n_windows);

// --- tau ablation ------------------------------------------------------------

struct TauPoint {
  std::size_t tau;
  double mse;
};

/// Runs `train_and_eval` (an identical training budget per tau) over the
/// list and tabulates the resulting test MSE.
std::vector<TauPoint> tau_scan(const std::function<double(std::size_t)>& train_and_eval,
                               const std::vector<std::size_t>& taus);

// --- equivariance audit ------------------------------------------------------

struct EquivarianceResult {
  double max_deviation;
  std::size_t n_transforms;
  std::uint64_t transform_seed;
};

/// Random O(3) transforms (QR-orthogonalized Gaussians, half reflected) plus
/// N(0, I) translations; reports the worst relative deviation between
/// transformed-then-predicted and predicted-then-transformed paths.
EquivarianceResult equivariance_audit(const ode::GraphOdeModel& model,
                                      const std::vector<sim::SystemState>& states,
                                      std::size_t n_transforms, std::uint64_t seed);

// --- truncation-order scan -----------------------------------------------------

using ForceField = std::function<Mat(const Mat& positions)>;

ForceField system_force(const sim::SystemState& prototype, sim::SystemKind kind,
                        double softening, double strength);

struct TruncationResult {
  std::vector<double> dts;
  std::vector<double> local_errors;   // single-step error per dt
  std::vector<double> global_errors;  // error at the fixed horizon per dt
  double local_slope;
  double global_slope;
};

/// Single-step error || q(t+dt) - q(t) - q_dot(t) dt - f(q(t)) dt^2 ||_2 and
/// k-step error against a fine-step reference, with log-log fitted slopes.
/// Requires at least 3 step sizes.
TruncationResult truncation_scan(const ForceField& force,
                                 const sim::SystemState& initial,
                                 std::vector<double> dts, double horizon);

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace nbode::evaluation
