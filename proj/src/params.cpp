#include "yoloret/params.hpp"

#include "yoloret/common.hpp"

namespace yoloret {

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (name.empty()) throw ValidationError("param store: empty parameter name");
  if (index_.count(name)) throw ValidationError("param store: duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(value), trainable, false});
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

const ParamStore::Entry& ParamStore::lookup(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("param store: unknown parameter " + name);
  return entries_[it->second];
}

ParamStore::Entry& ParamStore::lookup(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("param store: unknown parameter " + name);
  return entries_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const { return lookup(name).value; }

void ParamStore::set(const std::string& name, Tensor value) {
  Entry& e = lookup(name);
  if (!(e.value.shape() == value.shape())) {
    throw ValidationError("param store: shape mismatch for " + name + ": stored " +
                          e.value.shape().str() + " vs new " + value.shape().str());
  }
  e.value = std::move(value);
}

void ParamStore::set_frozen(const std::string& name, bool frozen) {
  lookup(name).frozen = frozen;
}

bool ParamStore::is_frozen(const std::string& name) const { return lookup(name).frozen; }

bool ParamStore::is_trainable(const std::string& name) const { return lookup(name).trainable; }

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

int64_t ParamStore::count_values() const {
  int64_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

int64_t ParamStore::count_trainable_values() const {
  int64_t total = 0;
  for (const auto& e : entries_) {
    if (e.trainable) total += e.value.numel();
  }
  return total;
}

}  // namespace yoloret
