#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbode/nn.hpp"
#include "nbode/tensor.hpp"

namespace nbode {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Single-file parameter checkpoint: an 8-byte little-endian length, a JSON
/// manifest (parameter names, shapes, dtype, byte offsets, plus a free-form
/// "meta" block), then one blob of raw little-endian float64 values.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedParam>& params,
                     const nlohmann::json& meta);

struct LoadedCheckpoint {
  std::map<std::string, Tensor> params;  // loaded as requires_grad leaves
  nlohmann::json meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Copies loaded values into existing parameter tensors by name; throws
/// IoError on a missing name or shape mismatch.
void assign_params(const LoadedCheckpoint& loaded, const std::vector<NamedParam>& params);

/// FNV-1a over a file's bytes, hex-encoded; used for report provenance.
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace nbode
