#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nbode/sim.hpp"

namespace nbode::sim {

inline constexpr std::array<const char*, 3> kSplitNames = {"train", "valid", "test"};

struct DatasetSummary {
  GenerationConfig config;
  std::map<std::string, std::size_t> rejections;  // resamples per split
};

/// Writes manifest.json plus {train,valid,test}.bin into `dir`. Per
/// trajectory each .bin holds little-endian float64 arrays
/// [steps+1][N][3] positions, [steps+1][N][3] velocities, [N][d] attributes,
/// concatenated in trajectory order. Trajectories exceeding the position cap
/// (or hitting a singularity) are resampled from the same per-trajectory RNG
/// stream, so output is independent of thread count.
DatasetSummary build_dataset(const GenerationConfig& config,
                             const std::filesystem::path& dir,
                             std::size_t n_threads = 1);

struct Dataset {
  GenerationConfig config;
  std::size_t recorded_steps = 0;  // stored states per trajectory minus one
  std::vector<Trajectory> train;
  std::vector<Trajectory> valid;
  std::vector<Trajectory> test;

  const std::vector<Trajectory>& split(const std::string& name) const;
};

Dataset load_dataset(const std::filesystem::path& dir);

/// Combined FNV-1a hash over the manifest and split files.
std::string dataset_hash(const std::filesystem::path& dir);

}  // namespace nbode::sim
