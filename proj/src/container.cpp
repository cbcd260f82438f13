#include "liftuq/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include <json.hpp>

#include "liftuq/errors.hpp"

namespace liftuq {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

void check_name(const std::string& name) {
  if (name.empty()) throw IoError("tensor name is empty");
  for (char c : name) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) throw IoError("tensor name '" + name + "' has characters not allowed in file names");
  }
}

std::vector<char> to_le_bytes(const std::vector<double>& data) {
  std::vector<char> bytes(data.size() * 8);
  if constexpr (std::endian::native == std::endian::little) {
    if (!data.empty()) std::memcpy(bytes.data(), data.data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(data[i]);
      for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  return bytes;
}

std::vector<double> from_le_bytes(const std::vector<char>& bytes) {
  std::vector<double> data(bytes.size() / 8);
  if constexpr (std::endian::native == std::endian::little) {
    if (!data.empty()) std::memcpy(data.data(), bytes.data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
      }
      data[i] = std::bit_cast<double>(bits);
    }
  }
  return data;
}

}  // namespace

std::size_t Tensor::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

const Tensor* DatasetContainer::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor& DatasetContainer::get(const std::string& name) const {
  const Tensor* t = find(name);
  if (t == nullptr) throw IoError("container has no tensor '" + name + "'");
  return *t;
}

std::optional<std::string> DatasetContainer::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& DatasetContainer::require_meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  throw IoError("container manifest is missing key '" + key + "'");
}

void DatasetContainer::set_meta(const std::string& key, std::string value) {
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  metadata.emplace_back(key, std::move(value));
}

void DatasetContainer::add(Tensor t) {
  check_name(t.name);
  if (find(t.name) != nullptr) throw IoError("duplicate tensor name '" + t.name + "'");
  if (t.element_count() != t.data.size()) {
    throw IoError("tensor '" + t.name + "' data length does not match its shape");
  }
  tensors.push_back(std::move(t));
}

void write_dataset(const fs::path& dir, const DatasetContainer& container) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  ordered_json manifest;
  manifest["format"] = "liftuq-container";
  manifest["schema_version"] = kContainerSchemaVersion;
  ordered_json meta = ordered_json::array();
  for (const auto& [k, v] : container.metadata) meta.push_back(ordered_json::array({k, v}));
  manifest["metadata"] = meta;
  ordered_json tensors = ordered_json::array();
  for (const auto& t : container.tensors) {
    check_name(t.name);
    if (t.element_count() != t.data.size()) {
      throw IoError("tensor '" + t.name + "' data length does not match its shape");
    }
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"file", t.name + ".bin"}});
  }
  manifest["tensors"] = tensors;

  for (const auto& t : container.tensors) {
    const fs::path blob = dir / (t.name + ".bin");
    std::ofstream out(blob, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + blob.string() + " for writing");
    const auto bytes = to_le_bytes(t.data);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + blob.string());
  }
  const fs::path mpath = dir / kManifestFile;
  std::ofstream mout(mpath, std::ios::trunc);
  if (!mout) throw IoError("cannot open " + mpath.string() + " for writing");
  mout << manifest.dump(2) << '\n';
  if (!mout) throw IoError("failed writing " + mpath.string());
}

DatasetContainer read_dataset(const fs::path& dir) {
  const fs::path mpath = dir / kManifestFile;
  std::ifstream min(mpath);
  if (!min) throw IoError("cannot open " + mpath.string());
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }

  DatasetContainer c;
  try {
    if (manifest.value("format", std::string()) != "liftuq-container") {
      throw IoError("unrecognised container format in " + mpath.string());
    }
    const int version = manifest.at("schema_version").get<int>();
    if (version != kContainerSchemaVersion) {
      throw IoError("unknown container schema version " + std::to_string(version) + " in " +
                    mpath.string());
    }
    for (const auto& kv : manifest.at("metadata")) {
      c.metadata.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
    for (const auto& entry : manifest.at("tensors")) {
      Tensor t;
      t.name = entry.at("name").get<std::string>();
      check_name(t.name);
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const fs::path blob = dir / entry.at("file").get<std::string>();
      std::ifstream in(blob, std::ios::binary);
      if (!in) throw IoError("tensor '" + t.name + "': cannot open " + blob.string());
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      const std::size_t expected = 8 * t.element_count();
      if (bytes.size() != expected) {
        throw IoError("tensor '" + t.name + "': blob has " + std::to_string(bytes.size()) +
                      " bytes, manifest shape requires " + std::to_string(expected));
      }
      t.data = from_le_bytes(bytes);
      c.add(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  return c;
}

}  // namespace liftuq
