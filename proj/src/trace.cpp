#include "yoloret/trace.hpp"

#include <algorithm>

#include "yoloret/common.hpp"

namespace yoloret {

void Trace::enter(const std::string& name) { stack_.push_back(name); }

void Trace::leave() {
  if (stack_.empty()) throw ValidationError("trace: leave() without matching enter()");
  stack_.pop_back();
}

std::string Trace::section() const {
  std::string joined;
  for (const auto& s : stack_) {
    if (!joined.empty()) joined += '/';
    joined += s;
  }
  return joined;
}

void Trace::record(const std::string& kind, const std::string& label, const Shape& in,
                   const Shape& out, int64_t macs) {
  entries_.push_back(TraceEntry{section(), label, kind, in, out, macs});
}

int64_t Trace::total_macs() const {
  int64_t total = 0;
  for (const auto& e : entries_) total += e.macs;
  return total;
}

namespace {
bool in_section(const std::string& section, const std::string& prefix) {
  if (prefix.empty()) return true;
  if (section == prefix) return true;
  return section.size() > prefix.size() && section.compare(0, prefix.size(), prefix) == 0 &&
         section[prefix.size()] == '/';
}
}  // namespace

int64_t Trace::section_macs(const std::string& prefix) const {
  int64_t total = 0;
  for (const auto& e : entries_) {
    if (in_section(e.section, prefix)) total += e.macs;
  }
  return total;
}

std::vector<std::string> Trace::top_sections() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    std::string top = e.section.substr(0, e.section.find('/'));
    if (std::find(out.begin(), out.end(), top) == out.end()) out.push_back(top);
  }
  return out;
}

int Trace::count_kind(const std::string& kind, const std::string& section_prefix) const {
  int n = 0;
  for (const auto& e : entries_) {
    if (e.kind == kind && in_section(e.section, section_prefix)) ++n;
  }
  return n;
}

}  // namespace yoloret
