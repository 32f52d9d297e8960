#include "nbode/sim.hpp"

#include <cmath>

namespace nbode::sim {

std::string system_kind_name(SystemKind kind) {
  return kind == SystemKind::Charged ? "charged" : "gravity";
}

SystemKind system_kind_from_name(const std::string& name) {
  if (name == "charged") return SystemKind::Charged;
  if (name == "gravity") return SystemKind::Gravity;
  throw SimError("unknown system kind: " + name);
}

void SystemState::validate() const {
  const std::size_t n = positions.rows;
  if (positions.cols != 3 || velocities.cols != 3 || velocities.rows != n) {
    throw SimError("state: positions and velocities must both be N x 3");
  }
  if (attributes.rows != n) throw SimError("state: attribute rows do not match N");
  if (edge_attrs.size() != edges.size()) {
    throw SimError("state: edge attribute count does not match edge count");
  }
  for (const auto& [i, j] : edges) {
    if (i == j) throw SimError("state: self-loop on node " + std::to_string(i));
    if (i >= n || j >= n) throw SimError("state: edge index out of range");
  }
  for (const Mat* m : {&positions, &velocities, &attributes}) {
    for (double v : m->values) {
      if (!std::isfinite(v)) throw SimError("state: non-finite entry");
    }
  }
}

SystemState make_complete_state(Mat positions, Mat velocities, Mat attributes) {
  SystemState state;
  const std::size_t n = positions.rows;
  state.positions = std::move(positions);
  state.velocities = std::move(velocities);
  state.attributes = std::move(attributes);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      state.edges.emplace_back(i, j);
      state.edge_attrs.push_back(state.attributes.at(i, 0) * state.attributes.at(j, 0));
    }
  }
  return state;
}

SystemState Trajectory::state_at(std::size_t index) const {
  return make_complete_state(positions.at(index), velocities.at(index), attributes);
}

GenerationConfig GenerationConfig::defaults(SystemKind kind) {
  GenerationConfig config;
  config.kind = kind;
  config.softening = kind == SystemKind::Charged ? 0.01 : 0.0;
  return config;
}

void GenerationConfig::validate() const {
  if (n_bodies < 2) throw SimError("config: need at least 2 bodies");
  if (n_train == 0 || n_valid == 0 || n_test == 0) {
    throw SimError("config: every split needs at least one trajectory");
  }
  if (total_steps == 0) throw SimError("config: total_steps must be positive");
  if (record_every == 0 || total_steps % record_every != 0) {
    throw SimError("config: total_steps must be a positive multiple of record_every");
  }
  if (dt <= 0.0) throw SimError("config: dt must be positive");
  if (softening < 0.0) throw SimError("config: softening must be >= 0");
  if (position_cap <= 0.0) throw SimError("config: position_cap must be positive");
}

SystemState sample_initial_charged(const GenerationConfig& config, Rng& rng,
                                   std::size_t cycle_index) {
  const std::size_t n = config.n_bodies;
  Mat q(n, 3), v(n, 3), h(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) q.at(i, c) = rng.normal(0.0, 0.5);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto dir = rng.unit3();
    for (std::size_t c = 0; c < 3; ++c) v.at(i, c) = 0.5 * dir[c];
  }
  // Three charged-system types, cycled: 1, 3, or 0 positive charges.
  static constexpr std::size_t kPositiveCounts[3] = {1, 3, 0};
  const std::size_t n_pos = std::min(n, kPositiveCounts[cycle_index % 3]);
  for (std::size_t i = 0; i < n; ++i) h.at(i, 0) = i < n_pos ? 1.0 : -1.0;
  return make_complete_state(std::move(q), std::move(v), std::move(h));
}

SystemState sample_initial_gravity(const GenerationConfig& config, Rng& rng) {
  const std::size_t n = config.n_bodies;
  Mat q(n, 3), v(n, 3), h(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) q.at(i, c) = rng.normal();
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto dir = rng.unit3();
    for (std::size_t c = 0; c < 3; ++c) v.at(i, c) = dir[c];
    h.at(i, 0) = 1.0;
  }
  return make_complete_state(std::move(q), std::move(v), std::move(h));
}

Mat true_accel(const SystemState& state, SystemKind kind, double softening,
               double strength) {
  const std::size_t n = state.n_bodies();
  const Mat& q = state.positions;
  Mat accel(n, 3);
  const double soft2 = softening * softening;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = q.at(j, 0) - q.at(i, 0);
      const double dy = q.at(j, 1) - q.at(i, 1);
      const double dz = q.at(j, 2) - q.at(i, 2);
      const double r2 = dx * dx + dy * dy + dz * dz + soft2;
      if (r2 == 0.0) throw SingularityError(i, j);
      const double inv_r3 = 1.0 / (r2 * std::sqrt(r2));
      if (kind == SystemKind::Gravity) {
        // attractive, toward j, scaled by m_j
        const double f = strength * state.attributes.at(j, 0) * inv_r3;
        accel.at(i, 0) += f * dx;
        accel.at(i, 1) += f * dy;
        accel.at(i, 2) += f * dz;
      } else {
        // like charges repel: force along q_i - q_j for c_i * c_j > 0
        const double f =
            strength * state.attributes.at(i, 0) * state.attributes.at(j, 0) * inv_r3;
        accel.at(i, 0) -= f * dx;
        accel.at(i, 1) -= f * dy;
        accel.at(i, 2) -= f * dz;
      }
    }
  }
  return accel;
}

SystemState symplectic_euler_step(const SystemState& state, const Mat& accel, double dt) {
  SystemState next = state;
  const std::size_t n = state.n_bodies();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v_new = state.velocities.at(i, c) + accel.at(i, c) * dt;
      next.velocities.at(i, c) = v_new;
      next.positions.at(i, c) = state.positions.at(i, c) + v_new * dt;
    }
  }
  return next;
}

Trajectory generate_trajectory(const SystemState& init, SystemKind kind,
                               std::size_t steps, double dt, double softening,
                               double strength, std::size_t record_every) {
  if (steps == 0) throw SimError("generate_trajectory: steps must be >= 1");
  if (record_every == 0 || steps % record_every != 0) {
    throw SimError("generate_trajectory: steps must be a multiple of record_every");
  }
  Trajectory trajectory;
  trajectory.kind = kind;
  trajectory.dt_base = dt;
  trajectory.record_every = record_every;
  trajectory.attributes = init.attributes;
  trajectory.positions.reserve(steps / record_every + 1);
  trajectory.velocities.reserve(steps / record_every + 1);
  trajectory.positions.push_back(init.positions);
  trajectory.velocities.push_back(init.velocities);

  SystemState state = init;
  for (std::size_t step = 0; step < steps; ++step) {
    Mat accel;
    try {
      accel = true_accel(state, kind, softening, strength);
    } catch (const SingularityError&) {
      throw SimError("generate_trajectory: singularity at step " + std::to_string(step));
    }
    state = symplectic_euler_step(state, accel, dt);
    if ((step + 1) % record_every == 0) {
      trajectory.positions.push_back(state.positions);
      trajectory.velocities.push_back(state.velocities);
    }
  }
  return trajectory;
}

double max_position_magnitude(const Trajectory& trajectory) {
  double worst = 0.0;
  for (const Mat& q : trajectory.positions) {
    for (double v : q.values) worst = std::max(worst, std::abs(v));
  }
  return worst;
}

}  // namespace nbode::sim
