#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "nbode/dataset.hpp"
#include "nbode/sim.hpp"

using namespace nbode;
using namespace nbode::sim;

namespace {

double velocity_norm(const SystemState& state, std::size_t i) {
  const double* v = state.velocities.row(i);
  return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

std::array<double, 3> total_momentum(const Mat& velocities, const Mat& attributes,
                                     SystemKind kind) {
  std::array<double, 3> p{0, 0, 0};
  for (std::size_t i = 0; i < velocities.rows; ++i) {
    const double m = kind == SystemKind::Gravity ? attributes.at(i, 0) : 1.0;
    for (std::size_t c = 0; c < 3; ++c) p[c] += m * velocities.at(i, c);
  }
  return p;
}

// Rodrigues rotation about a unit axis; orthogonal to machine precision.
Mat rotation_matrix(const std::array<double, 3>& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double x = axis[0], y = axis[1], z = axis[2];
  Mat r(3, 3);
  r.at(0, 0) = c + x * x * (1 - c);
  r.at(0, 1) = x * y * (1 - c) - z * s;
  r.at(0, 2) = x * z * (1 - c) + y * s;
  r.at(1, 0) = y * x * (1 - c) + z * s;
  r.at(1, 1) = c + y * y * (1 - c);
  r.at(1, 2) = y * z * (1 - c) - x * s;
  r.at(2, 0) = z * x * (1 - c) - y * s;
  r.at(2, 1) = z * y * (1 - c) + x * s;
  r.at(2, 2) = c + z * z * (1 - c);
  return r;
}

Mat apply_rotation(const Mat& r, const Mat& points) {
  Mat out(points.rows, 3);
  for (std::size_t i = 0; i < points.rows; ++i) {
    for (std::size_t a = 0; a < 3; ++a) {
      out.at(i, a) = r.at(a, 0) * points.at(i, 0) + r.at(a, 1) * points.at(i, 1) +
                     r.at(a, 2) * points.at(i, 2);
    }
  }
  return out;
}

SystemState two_body_on_x_axis(double separation, double vy, double attr) {
  Mat q(2, 3), v(2, 3), h(2, 1);
  q.at(0, 0) = -separation / 2;
  q.at(1, 0) = separation / 2;
  v.at(0, 1) = -vy;
  v.at(1, 1) = vy;
  h.at(0, 0) = attr;
  h.at(1, 0) = attr;
  return make_complete_state(q, v, h);
}

}  // namespace

TEST_CASE("charged sampler matches its stated distribution") {
  GenerationConfig config = GenerationConfig::defaults(SystemKind::Charged);
  config.n_bodies = 5;
  Rng rng(4);

  double sum = 0.0, sumsq = 0.0;
  std::size_t count = 0;
  bool charges_ok = true, norms_ok = true, attrs_ok = true;
  for (std::size_t s = 0; s < 20000; ++s) {
    const SystemState state = sample_initial_charged(config, rng, s);
    for (std::size_t i = 0; i < 5; ++i) {
      norms_ok = norms_ok && std::abs(velocity_norm(state, i) - 0.5) < 1e-12;
      const double c = state.attributes.at(i, 0);
      charges_ok = charges_ok && (c == 1.0 || c == -1.0);
      for (std::size_t a = 0; a < 3; ++a) {
        const double x = state.positions.at(i, a);
        sum += x;
        sumsq += x * x;
        ++count;
      }
    }
    attrs_ok = attrs_ok && state.edges.size() == 20;
  }
  CHECK(norms_ok);
  CHECK(charges_ok);
  CHECK(attrs_ok);
  const double mean = sum / count;
  const double stddev = std::sqrt(sumsq / count - mean * mean);
  CHECK(stddev > 0.49);
  CHECK(stddev < 0.51);
}

TEST_CASE("charged sampler cycles the three system types") {
  GenerationConfig config = GenerationConfig::defaults(SystemKind::Charged);
  config.n_bodies = 5;
  Rng rng(9);
  std::array<std::size_t, 3> expected_positive = {1, 3, 0};
  for (std::size_t cycle = 0; cycle < 6; ++cycle) {
    const SystemState state = sample_initial_charged(config, rng, cycle);
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < 5; ++i) n_pos += state.attributes.at(i, 0) > 0 ? 1 : 0;
    CHECK(n_pos == expected_positive[cycle % 3]);
  }
}

TEST_CASE("gravity sampler matches its stated distribution") {
  GenerationConfig config = GenerationConfig::defaults(SystemKind::Gravity);
  config.n_bodies = 5;
  Rng rng(5);

  double sum = 0.0, sumsq = 0.0;
  std::size_t count = 0;
  bool masses_ok = true, norms_ok = true, edge_attrs_ok = true;
  for (std::size_t s = 0; s < 20000; ++s) {
    const SystemState state = sample_initial_gravity(config, rng);
    for (std::size_t i = 0; i < 5; ++i) {
      masses_ok = masses_ok && state.attributes.at(i, 0) == 1.0;
      norms_ok = norms_ok && std::abs(velocity_norm(state, i) - 1.0) < 1e-12;
      for (std::size_t a = 0; a < 3; ++a) {
        const double x = state.positions.at(i, a);
        sum += x;
        sumsq += x * x;
        ++count;
      }
    }
    for (double ea : state.edge_attrs) edge_attrs_ok = edge_attrs_ok && ea == 1.0;
  }
  CHECK(masses_ok);
  CHECK(norms_ok);
  CHECK(edge_attrs_ok);
  const double mean = sum / count;
  const double stddev = std::sqrt(sumsq / count - mean * mean);
  CHECK(stddev > 0.99);
  CHECK(stddev < 1.01);
}

TEST_CASE("true_accel on a single body is zero") {
  Mat q(1, 3), v(1, 3), h(1, 1);
  h.at(0, 0) = 1.0;
  const SystemState state = make_complete_state(q, v, h);
  const Mat a = true_accel(state, SystemKind::Gravity, 0.0, 1.0);
  for (double x : a.values) CHECK(x == 0.0);
}

TEST_CASE("gravity pair at unit distance attracts with unit magnitude") {
  const SystemState state = two_body_on_x_axis(1.0, 0.0, 1.0);
  const Mat a = true_accel(state, SystemKind::Gravity, 0.0, 1.0);
  CHECK(a.at(0, 0) == doctest::Approx(1.0));   // toward +x
  CHECK(a.at(1, 0) == doctest::Approx(-1.0));  // toward -x
  CHECK(a.at(0, 1) == 0.0);
  CHECK(a.at(1, 2) == 0.0);
}

TEST_CASE("like charges repel with strength magnitude") {
  const SystemState state = two_body_on_x_axis(1.0, 0.0, 1.0);
  const double strength = 2.5;
  const Mat a = true_accel(state, SystemKind::Charged, 0.0, strength);
  CHECK(a.at(0, 0) == doctest::Approx(-strength));  // pushed apart
  CHECK(a.at(1, 0) == doctest::Approx(strength));
}

TEST_CASE("coincident particles raise a singularity error") {
  Mat q(2, 3), v(2, 3), h(2, 1);
  h.at(0, 0) = h.at(1, 0) = 1.0;
  const SystemState state = make_complete_state(q, v, h);
  CHECK_THROWS_AS(true_accel(state, SystemKind::Gravity, 0.0, 1.0), SingularityError);
  // softening removes the singularity
  CHECK_NOTHROW(true_accel(state, SystemKind::Gravity, 0.1, 1.0));
}

TEST_CASE("symplectic euler step hand cases") {
  Mat q(1, 3), v(1, 3), h(1, 1);
  v.at(0, 0) = 1.0;
  h.at(0, 0) = 1.0;
  SystemState state = make_complete_state(q, v, h);

  Mat zero_accel(1, 3);
  SystemState next = symplectic_euler_step(state, zero_accel, 0.1);
  CHECK(next.positions.at(0, 0) == doctest::Approx(0.1));
  CHECK(next.velocities.at(0, 0) == 1.0);

  // velocity update is applied before the position update
  state.velocities = Mat(1, 3);
  Mat accel(1, 3);
  accel.at(0, 2) = -1.0;
  next = symplectic_euler_step(state, accel, 0.1);
  CHECK(next.velocities.at(0, 2) == doctest::Approx(-0.1));
  CHECK(next.positions.at(0, 2) == doctest::Approx(-0.01));

  next = symplectic_euler_step(state, accel, 0.0);
  CHECK(next.positions == state.positions);
  CHECK(next.velocities == state.velocities);
}

TEST_CASE("two-body circular orbit stays on its Kepler radius") {
  // Analytic oracle: unit masses at separation r = 1, strength 1. Each body
  // orbits the barycenter at radius 1/2; force balance a = v^2 / (r/2) with
  // a = G m / r^2 = 1 gives speed sqrt(1/2) and angular rate omega = sqrt(2).
  const double speed = std::sqrt(0.5);
  const double period = 2.0 * M_PI / std::sqrt(2.0);
  const SystemState init = two_body_on_x_axis(1.0, speed, 1.0);

  const double dt = 1e-4;
  const auto steps = static_cast<std::size_t>(period / dt);
  const Trajectory orbit =
      generate_trajectory(init, SystemKind::Gravity, steps, dt, 0.0, 1.0, steps);
  const Mat& final_q = orbit.positions.back();
  const double dx = final_q.at(1, 0) - final_q.at(0, 0);
  const double dy = final_q.at(1, 1) - final_q.at(0, 1);
  const double dz = final_q.at(1, 2) - final_q.at(0, 2);
  const double separation = std::sqrt(dx * dx + dy * dy + dz * dz);
  CHECK(separation > 0.99);
  CHECK(separation < 1.01);
}

TEST_CASE("momentum is conserved over many steps") {
  for (const SystemKind kind : {SystemKind::Gravity, SystemKind::Charged}) {
    GenerationConfig config = GenerationConfig::defaults(kind);
    config.n_bodies = 5;
    Rng rng(21);
    const SystemState init = kind == SystemKind::Charged
                                 ? sample_initial_charged(config, rng, 0)
                                 : sample_initial_gravity(config, rng);
    const Trajectory t = generate_trajectory(init, kind, 1000, 1e-3, config.softening,
                                             config.strength, 1000);
    const auto p0 = total_momentum(t.velocities.front(), t.attributes, kind);
    const auto p1 = total_momentum(t.velocities.back(), t.attributes, kind);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(p1[c] - p0[c]) < 1e-10);
  }
}

TEST_CASE("one step trajectory equals a single symplectic step") {
  GenerationConfig config = GenerationConfig::defaults(SystemKind::Gravity);
  config.n_bodies = 3;
  Rng rng(33);
  const SystemState init = sample_initial_gravity(config, rng);
  const Trajectory t = generate_trajectory(init, SystemKind::Gravity, 1, 0.01, 0.0, 1.0);
  const SystemState expected =
      symplectic_euler_step(init, true_accel(init, SystemKind::Gravity, 0.0, 1.0), 0.01);
  CHECK(t.positions.back() == expected.positions);
  CHECK(t.velocities.back() == expected.velocities);
}

TEST_CASE("forces are antisymmetric, translation invariant, and rotation equivariant") {
  GenerationConfig config = GenerationConfig::defaults(SystemKind::Charged);
  config.n_bodies = 5;
  Rng rng(55);
  for (const SystemKind kind : {SystemKind::Gravity, SystemKind::Charged}) {
    SystemState state = kind == SystemKind::Charged ? sample_initial_charged(config, rng, 1)
                                                    : sample_initial_gravity(config, rng);
    const double softening = kind == SystemKind::Charged ? 0.01 : 0.0;
    const Mat a = true_accel(state, kind, softening, 1.0);

    // repeated call is bit-identical
    CHECK(a == true_accel(state, kind, softening, 1.0));

    // sum of m_i a_i vanishes
    for (std::size_t c = 0; c < 3; ++c) {
      double f = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        const double m = kind == SystemKind::Gravity ? state.attributes.at(i, 0) : 1.0;
        f += m * a.at(i, c);
      }
      CHECK(std::abs(f) < 1e-12);
    }

    // translation invariance
    SystemState shifted = state;
    for (std::size_t i = 0; i < 5; ++i) {
      shifted.positions.at(i, 0) += 1.25;
      shifted.positions.at(i, 1) -= 0.75;
      shifted.positions.at(i, 2) += 0.5;
    }
    const Mat a_shifted = true_accel(shifted, kind, softening, 1.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::abs(a_shifted.values[i] - a.values[i]) < 1e-12);
    }

    // rotation equivariance
    const Mat r = rotation_matrix({0.48, 0.6, 0.64}, 1.1);
    SystemState rotated = state;
    rotated.positions = apply_rotation(r, state.positions);
    rotated.velocities = apply_rotation(r, state.velocities);
    const Mat a_rotated = true_accel(rotated, kind, softening, 1.0);
    const Mat ra = apply_rotation(r, a);
    for (std::size_t i = 0; i < ra.size(); ++i) {
      CHECK(std::abs(a_rotated.values[i] - ra.values[i]) < 1e-10);
    }
  }
}

TEST_CASE("dataset round trip and determinism") {
  GenerationConfig config = GenerationConfig::defaults(SystemKind::Gravity);
  config.n_bodies = 4;
  config.n_train = 3;
  config.n_valid = 2;
  config.n_test = 2;
  config.total_steps = 60;
  config.record_every = 10;
  config.seed = 77;
  config.softening = 0.1;

  const auto dir_a = std::filesystem::temp_directory_path() / "nbode_ds_a";
  const auto dir_b = std::filesystem::temp_directory_path() / "nbode_ds_b";
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);

  build_dataset(config, dir_a, 1);
  build_dataset(config, dir_b, 2);  // thread count must not change output

  for (const char* name : {"manifest.json", "train.bin", "valid.bin", "test.bin"}) {
    std::ifstream fa(dir_a / name, std::ios::binary);
    std::ifstream fb(dir_b / name, std::ios::binary);
    const std::string ca((std::istreambuf_iterator<char>(fa)), {});
    const std::string cb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(ca == cb);
    CHECK_FALSE(ca.empty());
  }

  const Dataset loaded = load_dataset(dir_a);
  CHECK(loaded.config.n_bodies == 4);
  CHECK(loaded.config.dt == 1e-3);
  CHECK(loaded.config.n_train == 3);
  CHECK(loaded.recorded_steps == 6);
  CHECK(loaded.train.size() == 3);
  CHECK(loaded.valid.size() == 2);
  CHECK(loaded.test.size() == 2);

  // regenerate trajectory 0 of train and compare bit-exactly
  Rng rng(config.seed, (1ULL << 32) + 0);
  const SystemState init = sample_initial_gravity(config, rng);
  const Trajectory expected =
      generate_trajectory(init, config.kind, config.total_steps, config.dt,
                          config.softening, config.strength, config.record_every);
  CHECK(loaded.train[0].positions == expected.positions);
  CHECK(loaded.train[0].velocities == expected.velocities);
  CHECK(loaded.train[0].attributes == expected.attributes);

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}
