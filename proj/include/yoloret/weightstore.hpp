// Binary weight container: a JSON manifest naming each tensor plus a blob of
// little-endian float32 payloads at 64-byte-aligned offsets. Byte-order
// stable: files written anywhere load identically everywhere.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "yoloret/params.hpp"
#include "yoloret/tensor.hpp"

namespace yoloret {
namespace weightstore {

class WeightStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }  // save order
  size_t size() const { return order_.size(); }

  // Snapshot every parameter and buffer of a live store.
  static WeightStore from_params(const ParamStore& params);

  // Copy values into an existing parameter store. The name sets must match
  // exactly and shapes must agree; trainable/frozen flags are untouched.
  void apply_to(ParamStore& params) const;

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> values_;
};

// Layout: magic "YRW1", format version u32 LE, manifest byte length u64 LE,
// UTF-8 JSON manifest, zero padding to a 64-byte boundary, float32 LE blobs.
void weights_save(const WeightStore& store, const std::string& path);

// Validates magic, version, manifest, and offsets (aligned, in bounds,
// non-overlapping, unique names); each failure carries its own diagnostic.
WeightStore weights_load(const std::string& path);

}  // namespace weightstore
}  // namespace yoloret
