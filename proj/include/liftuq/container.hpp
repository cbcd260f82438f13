#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace liftuq {

/// Named dense tensor of doubles in row-major order.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  std::size_t element_count() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Directory bundle: `manifest.json` plus one `<name>.bin` blob per tensor.
///
/// Blobs hold little-endian IEEE-754 doubles with no header; the manifest
/// carries the schema version, ordered metadata and every tensor's shape.
/// Dataset files, checkpoints and prediction dumps all use this layout.
struct DatasetContainer {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<Tensor> tensors;

  const Tensor* find(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  std::optional<std::string> meta(const std::string& key) const;
  const std::string& require_meta(const std::string& key) const;
  void set_meta(const std::string& key, std::string value);
  void add(Tensor t);

  friend bool operator==(const DatasetContainer&, const DatasetContainer&) = default;
};

inline constexpr int kContainerSchemaVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";

void write_dataset(const std::filesystem::path& dir, const DatasetContainer& container);
DatasetContainer read_dataset(const std::filesystem::path& dir);

}  // namespace liftuq
