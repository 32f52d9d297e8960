#include "nbode/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts are unsupported");

namespace nbode {

namespace {

void write_exact(std::ofstream& out, const void* data, std::size_t n,
                 const std::filesystem::path& path) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<NamedParam>& params, const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = "f64";
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const NamedParam& p : params) {
    entries.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += p.tensor.size() * sizeof(double);
  }
  manifest["params"] = entries;
  manifest["meta"] = meta;

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  const std::uint64_t len = text.size();
  write_exact(out, &len, sizeof(len), path);
  write_exact(out, text.data(), text.size(), path);
  for (const NamedParam& p : params) {
    write_exact(out, p.tensor.data().data(), p.tensor.size() * sizeof(double), path);
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw IoError("checkpoint: truncated header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint: truncated manifest in " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: bad manifest in " + path.string() + ": " + e.what());
  }
  if (manifest.value("dtype", "") != "f64") {
    throw IoError("checkpoint: unsupported dtype in " + path.string());
  }

  const auto blob_start = static_cast<std::streamoff>(sizeof(len) + len);
  LoadedCheckpoint loaded;
  loaded.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("params")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    std::vector<double> values(shape_size(shape));
    in.seekg(blob_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated blob for '" + name + "' in " + path.string());
    loaded.params.emplace(name, Tensor::from_data(shape, std::move(values), true));
  }
  return loaded;
}

void assign_params(const LoadedCheckpoint& loaded, const std::vector<NamedParam>& params) {
  for (const NamedParam& p : params) {
    const auto it = loaded.params.find(p.name);
    if (it == loaded.params.end()) {
      throw IoError("checkpoint: missing parameter '" + p.name + "'");
    }
    if (it->second.shape() != p.tensor.shape()) {
      throw IoError("checkpoint: shape mismatch for '" + p.name + "': stored " +
                    shape_str(it->second.shape()) + " vs model " + shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    std::memcpy(dst.raw_data().data(), it->second.data().data(),
                dst.size() * sizeof(double));
  }
}

std::string file_hash_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("hash: cannot open " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buffer[1 << 15];
  while (in) {
    in.read(buffer, sizeof(buffer));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buffer[i]);
      hash *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(hex);
}

}  // namespace nbode
