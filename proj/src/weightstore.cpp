#include "yoloret/weightstore.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "yoloret/common.hpp"

namespace yoloret {
namespace weightstore {
namespace {

constexpr char kMagic[4] = {'Y', 'R', 'W', '1'};
constexpr uint32_t kVersion = 1;
constexpr size_t kAlign = 64;

size_t align_up(size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const std::string& buf, size_t at) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  }
  return v;
}

uint64_t get_u64(const std::string& buf, size_t at) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  }
  return v;
}

struct ManifestEntry {
  std::string name;
  Shape shape;
  uint64_t offset = 0;
};

std::string manifest_json(const std::vector<ManifestEntry>& entries) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const ManifestEntry& e : entries) {
    tensors.push_back({{"name", e.name},
                       {"shape", {e.shape.n, e.shape.c, e.shape.h, e.shape.w}},
                       {"offset", e.offset}});
  }
  return nlohmann::json{{"tensors", tensors}}.dump();
}

// Offsets are absolute file positions, but the manifest's own length shifts
// where the blob section starts, so iterate until the layout stops moving.
std::string resolve_layout(std::vector<ManifestEntry>& entries) {
  std::string text = manifest_json(entries);
  for (int pass = 0; pass < 8; ++pass) {
    uint64_t at = align_up(4 + 4 + 8 + text.size());
    for (ManifestEntry& e : entries) {
      e.offset = at;
      at = align_up(at + e.shape.numel() * 4);
    }
    std::string next = manifest_json(entries);
    if (next == text) return text;
    text = std::move(next);
  }
  throw IoError("weights: manifest layout failed to settle");
}

}  // namespace

void WeightStore::add(const std::string& name, Tensor value) {
  if (name.empty()) throw ValidationError("weights: tensor name must be non-empty");
  if (values_.count(name)) {
    throw ValidationError("weights: duplicate tensor name " + name);
  }
  order_.push_back(name);
  values_.emplace(name, std::move(value));
}

const Tensor& WeightStore::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ValidationError("weights: no tensor named " + name);
  return it->second;
}

WeightStore WeightStore::from_params(const ParamStore& params) {
  WeightStore out;
  for (const auto& e : params.entries()) out.add(e.name, e.value);
  return out;
}

void WeightStore::apply_to(ParamStore& params) const {
  for (const auto& e : params.entries()) {
    if (!contains(e.name)) {
      throw ValidationError("weights: file is missing parameter " + e.name);
    }
  }
  for (const std::string& name : order_) {
    if (!params.contains(name)) {
      throw ValidationError("weights: file has unexpected parameter " + name);
    }
    const Tensor& v = values_.at(name);
    if (!(v.shape() == params.get(name).shape())) {
      throw ValidationError("weights: shape mismatch for " + name + ": model " +
                            params.get(name).shape().str() + " vs file " +
                            v.shape().str());
    }
    params.set(name, v);
  }
}

void weights_save(const WeightStore& store, const std::string& path) {
  std::vector<ManifestEntry> entries;
  for (const std::string& name : store.names()) {
    entries.push_back(ManifestEntry{name, store.get(name).shape(), 0});
  }
  const std::string manifest = resolve_layout(entries);

  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u64(buf, manifest.size());
  buf += manifest;
  buf.resize(align_up(buf.size()), '\0');

  for (size_t i = 0; i < entries.size(); ++i) {
    if (buf.size() != entries[i].offset) {
      throw IoError("weights: layout drifted while writing");
    }
    const Tensor& t = store.get(entries[i].name);
    for (int64_t j = 0; j < t.numel(); ++j) {
      put_u32(buf, std::bit_cast<uint32_t>(t.data()[j]));
    }
    buf.resize(align_up(buf.size()), '\0');
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("weights: cannot open " + path + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("weights: short write to " + path);
}

WeightStore weights_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("weights: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 16) throw IoError("weights: truncated file (no header)");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw IoError("weights: bad magic, not a weight container");
  }
  const uint32_t version = get_u32(buf, 4);
  if (version != kVersion) {
    throw IoError("weights: unsupported format version " + std::to_string(version));
  }
  const uint64_t manifest_len = get_u64(buf, 8);
  if (16 + manifest_len > buf.size()) {
    throw IoError("weights: truncated file (manifest extends past end)");
  }

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(buf.substr(16, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("weights: malformed manifest: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("tensors") ||
      !manifest["tensors"].is_array()) {
    throw IoError("weights: malformed manifest: missing tensor list");
  }

  struct Span {
    uint64_t begin;
    uint64_t end;
    std::string name;
  };
  std::vector<Span> spans;
  WeightStore out;
  for (const auto& item : manifest["tensors"]) {
    if (!item.is_object() || !item.contains("name") || !item.contains("shape") ||
        !item.contains("offset") || !item["name"].is_string() ||
        !item["shape"].is_array() || item["shape"].size() != 4) {
      throw IoError("weights: malformed manifest entry");
    }
    const std::string name = item["name"].get<std::string>();
    const Shape shape{item["shape"][0].get<int>(), item["shape"][1].get<int>(),
                      item["shape"][2].get<int>(), item["shape"][3].get<int>()};
    if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
      throw IoError("weights: malformed manifest entry: bad shape for " + name);
    }
    const uint64_t offset = item["offset"].get<uint64_t>();
    if (offset % kAlign != 0) {
      throw IoError("weights: misaligned offset for " + name);
    }
    const uint64_t bytes = static_cast<uint64_t>(shape.numel()) * 4;
    if (offset + bytes > buf.size()) {
      throw IoError("weights: truncated file (tensor " + name + " extends past end)");
    }

    std::vector<float> data(static_cast<size_t>(shape.numel()));
    for (size_t j = 0; j < data.size(); ++j) {
      data[j] = std::bit_cast<float>(get_u32(buf, offset + 4 * j));
    }
    if (out.contains(name)) throw IoError("weights: duplicate tensor name " + name);
    out.add(name, Tensor(shape, std::move(data)));
    spans.push_back(Span{offset, offset + bytes, name});
  }

  std::sort(spans.begin(), spans.end(),
            [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].begin < spans[i - 1].end) {
      throw IoError("weights: overlapping offsets for " + spans[i - 1].name + " and " +
                    spans[i].name);
    }
  }
  return out;
}

}  // namespace weightstore
}  // namespace yoloret
