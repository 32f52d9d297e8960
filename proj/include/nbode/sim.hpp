#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nbode/mat.hpp"
#include "nbode/rng.hpp"

namespace nbode::sim {

enum class SystemKind { Charged, Gravity };

std::string system_kind_name(SystemKind kind);
SystemKind system_kind_from_name(const std::string& name);

class SimError : public std::runtime_error {
 public:
  explicit SimError(const std::string& what) : std::runtime_error(what) {}
};

/// Coincident particles with zero softening.
class SingularityError : public SimError {
 public:
  SingularityError(std::size_t i, std::size_t j)
      : SimError("singular pair (" + std::to_string(i) + ", " + std::to_string(j) +
                 "): coincident particles with zero softening"),
        first(i),
        second(j) {}
  std::size_t first;
  std::size_t second;
};

/// One N-body snapshot: positions/velocities [N x 3], per-node attributes
/// [N x d] (charge or mass), and a directed edge list with scalar edge
/// attributes. Edge (i, j) means node i receives from neighbor j.
struct SystemState {
  Mat positions;
  Mat velocities;
  Mat attributes;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<double> edge_attrs;

  std::size_t n_bodies() const { return positions.rows; }
  void validate() const;  // shape agreement, no self-loops, all finite
};

/// Builds the complete directed graph with edge attribute attr_i * attr_j
/// (first attribute column).
SystemState make_complete_state(Mat positions, Mat velocities, Mat attributes);

/// Time-ordered snapshots with shared attributes and edge structure.
/// Consecutive stored states are dt_base * record_every time units apart.
struct Trajectory {
  SystemKind kind = SystemKind::Gravity;
  double dt_base = 1e-3;
  std::size_t record_every = 1;
  Mat attributes;
  std::vector<Mat> positions;   // each [N x 3]
  std::vector<Mat> velocities;  // each [N x 3]

  std::size_t n_states() const { return positions.size(); }
  std::size_t n_bodies() const { return attributes.rows; }
  double recorded_dt() const { return dt_base * static_cast<double>(record_every); }
  SystemState state_at(std::size_t index) const;
};

struct GenerationConfig {
  SystemKind kind = SystemKind::Gravity;
  std::size_t n_bodies = 5;
  std::size_t n_train = 0;
  std::size_t n_valid = 0;
  std::size_t n_test = 0;
  std::size_t total_steps = 1000;  // fine integration steps per trajectory
  std::size_t record_every = 1;    // stride of states kept
  std::uint64_t seed = 0;
  double dt = 1e-3;
  double softening = 0.0;  // 0.01 for charged by default (see defaults())
  double strength = 1.0;
  double position_cap = 1e3;  // reject-and-resample threshold

  static GenerationConfig defaults(SystemKind kind);
  void validate() const;
};

/// Positions ~ N(0, 0.5^2) per coordinate, velocity direction uniform with
/// norm 0.5, charges +-1. cycle_index walks the three charged-system types
/// (1, 3, or 0 positive charges out of five).
SystemState sample_initial_charged(const GenerationConfig& config, Rng& rng,
                                   std::size_t cycle_index = 0);

/// Positions ~ N(0, 1), velocity norm 1 with uniform direction, unit masses.
SystemState sample_initial_gravity(const GenerationConfig& config, Rng& rng);

/// Pairwise inverse-square accelerations; gravity attracts, like charges
/// repel. Throws SingularityError for coincident pairs at zero softening.
Mat true_accel(const SystemState& state, SystemKind kind, double softening,
               double strength);

/// Velocity update first, then position with the new velocity.
SystemState symplectic_euler_step(const SystemState& state, const Mat& accel, double dt);

/// Integrates `steps` fine steps from `init`, keeping every record_every-th
/// state (plus the initial one). steps must be divisible by record_every.
Trajectory generate_trajectory(const SystemState& init, SystemKind kind,
                               std::size_t steps, double dt, double softening,
                               double strength, std::size_t record_every = 1);

double max_position_magnitude(const Trajectory& trajectory);

}  // namespace nbode::sim
