// Flat, insertion-ordered parameter registry. Names are dotted paths
// ("backbone.stage3.block1.expand.weight"); values are immutable tensors that
// get swapped wholesale on update. Trainable distinguishes weights from
// buffers like batchnorm running statistics; frozen marks parameters the
// optimizer must leave alone during the first training phase.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "yoloret/tensor.hpp"

namespace yoloret {

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
    bool frozen = false;
  };

  void add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor value);

  void set_frozen(const std::string& name, bool frozen);
  bool is_frozen(const std::string& name) const;
  bool is_trainable(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::string> names() const;
  // Scalars across all entries (trainable or not).
  int64_t count_values() const;
  int64_t count_trainable_values() const;

 private:
  const Entry& lookup(const std::string& name) const;
  Entry& lookup(const std::string& name);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace yoloret
