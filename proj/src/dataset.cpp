#include "nbode/dataset.hpp"

#include <fstream>

#include <json.hpp>

#include "nbode/checkpoint.hpp"
#include "nbode/parallel.hpp"

namespace nbode::sim {

namespace {

using nlohmann::json;

struct GeneratedTrajectory {
  Trajectory trajectory;
  std::size_t rejections = 0;
};

GeneratedTrajectory generate_one(const GenerationConfig& config, std::uint64_t stream,
                                 std::size_t cycle_index) {
  Rng rng(config.seed, stream);
  GeneratedTrajectory out;
  for (;;) {
    SystemState init = config.kind == SystemKind::Charged
                           ? sample_initial_charged(config, rng, cycle_index)
                           : sample_initial_gravity(config, rng);
    try {
      Trajectory trajectory =
          generate_trajectory(init, config.kind, config.total_steps, config.dt,
                              config.softening, config.strength, config.record_every);
      if (max_position_magnitude(trajectory) <= config.position_cap) {
        out.trajectory = std::move(trajectory);
        return out;
      }
    } catch (const SimError&) {
      // singular close approach: retry like a cap rejection
    }
    ++out.rejections;
  }
}

void write_split(const std::filesystem::path& path,
                 const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("dataset: cannot open " + path.string() + " for writing");
  for (const Trajectory& t : trajectories) {
    for (const Mat& q : t.positions) {
      out.write(reinterpret_cast<const char*>(q.values.data()),
                static_cast<std::streamsize>(q.values.size() * sizeof(double)));
    }
    for (const Mat& v : t.velocities) {
      out.write(reinterpret_cast<const char*>(v.values.data()),
                static_cast<std::streamsize>(v.values.size() * sizeof(double)));
    }
    out.write(reinterpret_cast<const char*>(t.attributes.values.data()),
              static_cast<std::streamsize>(t.attributes.values.size() * sizeof(double)));
    if (!out) throw IoError("dataset: write failed for " + path.string());
  }
}

std::vector<Trajectory> read_split(const std::filesystem::path& path,
                                   const GenerationConfig& config, std::size_t count,
                                   std::size_t recorded_steps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("dataset: cannot open " + path.string());
  const std::size_t n = config.n_bodies;
  const std::size_t n_states = recorded_steps + 1;
  std::vector<Trajectory> out;
  out.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    Trajectory trajectory;
    trajectory.kind = config.kind;
    trajectory.dt_base = config.dt;
    trajectory.record_every = config.record_every;
    trajectory.positions.resize(n_states, Mat(n, 3));
    trajectory.velocities.resize(n_states, Mat(n, 3));
    trajectory.attributes = Mat(n, 1);
    for (Mat& q : trajectory.positions) {
      in.read(reinterpret_cast<char*>(q.values.data()),
              static_cast<std::streamsize>(q.values.size() * sizeof(double)));
    }
    for (Mat& v : trajectory.velocities) {
      in.read(reinterpret_cast<char*>(v.values.data()),
              static_cast<std::streamsize>(v.values.size() * sizeof(double)));
    }
    in.read(reinterpret_cast<char*>(trajectory.attributes.values.data()),
            static_cast<std::streamsize>(trajectory.attributes.values.size() * sizeof(double)));
    if (!in) {
      throw IoError("dataset: truncated split file " + path.string() + " at trajectory " +
                    std::to_string(t));
    }
    out.push_back(std::move(trajectory));
  }
  return out;
}

}  // namespace

DatasetSummary build_dataset(const GenerationConfig& config,
                             const std::filesystem::path& dir, std::size_t n_threads) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("dataset: cannot create " + dir.string() + ": " + ec.message());

  DatasetSummary summary;
  summary.config = config;

  const std::size_t counts[3] = {config.n_train, config.n_valid, config.n_test};
  for (std::size_t split = 0; split < 3; ++split) {
    std::vector<Trajectory> trajectories(counts[split]);
    std::vector<std::size_t> rejections(counts[split], 0);
    parallel_for(counts[split], n_threads, [&](std::size_t index) {
      // Independent stream per (split, trajectory); resamples stay inside it.
      const std::uint64_t stream =
          (static_cast<std::uint64_t>(split + 1) << 32) + index;
      GeneratedTrajectory generated = generate_one(config, stream, index);
      trajectories[index] = std::move(generated.trajectory);
      rejections[index] = generated.rejections;
    });
    std::size_t total_rejections = 0;
    for (std::size_t r : rejections) total_rejections += r;
    summary.rejections[kSplitNames[split]] = total_rejections;
    write_split(dir / (std::string(kSplitNames[split]) + ".bin"), trajectories);
  }

  json manifest;
  manifest["format_version"] = 1;
  manifest["system"] = system_kind_name(config.kind);
  manifest["n_bodies"] = config.n_bodies;
  manifest["attr_dim"] = 1;
  manifest["dt"] = config.dt;
  manifest["total_steps"] = config.total_steps;
  manifest["record_every"] = config.record_every;
  manifest["recorded_steps"] = config.total_steps / config.record_every;
  manifest["counts"] = {{"train", config.n_train},
                        {"valid", config.n_valid},
                        {"test", config.n_test}};
  manifest["softening"] = config.softening;
  manifest["strength"] = config.strength;
  manifest["seed"] = config.seed;
  manifest["position_cap"] = config.position_cap;
  manifest["rejections"] = summary.rejections;

  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("dataset: cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
  return summary;
}

const std::vector<Trajectory>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw IoError("dataset: unknown split '" + name + "'");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("dataset: cannot open manifest in " + dir.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("dataset: bad manifest in " + dir.string() + ": " + e.what());
  }

  Dataset dataset;
  GenerationConfig& config = dataset.config;
  config.kind = system_kind_from_name(manifest.at("system").get<std::string>());
  config.n_bodies = manifest.at("n_bodies").get<std::size_t>();
  config.dt = manifest.at("dt").get<double>();
  config.total_steps = manifest.at("total_steps").get<std::size_t>();
  config.record_every = manifest.at("record_every").get<std::size_t>();
  config.softening = manifest.at("softening").get<double>();
  config.strength = manifest.at("strength").get<double>();
  config.seed = manifest.at("seed").get<std::uint64_t>();
  config.position_cap = manifest.value("position_cap", 1e3);
  config.n_train = manifest.at("counts").at("train").get<std::size_t>();
  config.n_valid = manifest.at("counts").at("valid").get<std::size_t>();
  config.n_test = manifest.at("counts").at("test").get<std::size_t>();
  dataset.recorded_steps = manifest.at("recorded_steps").get<std::size_t>();

  dataset.train = read_split(dir / "train.bin", config, config.n_train, dataset.recorded_steps);
  dataset.valid = read_split(dir / "valid.bin", config, config.n_valid, dataset.recorded_steps);
  dataset.test = read_split(dir / "test.bin", config, config.n_test, dataset.recorded_steps);
  return dataset;
}

std::string dataset_hash(const std::filesystem::path& dir) {
  std::string combined = file_hash_hex(dir / "manifest.json");
  for (const char* split : kSplitNames) {
    combined += file_hash_hex(dir / (std::string(split) + ".bin"));
  }
  // fold the concatenated hashes once more
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : combined) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(hex);
}

}  // namespace nbode::sim
