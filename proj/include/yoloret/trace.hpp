// Structured record of every op executed during a forward pass. Each entry
// carries the section path it ran under plus its MAC count, so the same log
// serves both the compute accounting report and structural assertions about
// what a model actually executed.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "yoloret/tensor.hpp"

namespace yoloret {

struct TraceEntry {
  std::string section;  // slash-joined path, e.g. "backbone/stage3"
  std::string label;
  std::string kind;  // op family: conv2d, batchnorm, ...
  Shape in_shape{0, 0, 0, 0};
  Shape out_shape{0, 0, 0, 0};
  int64_t macs = 0;  // multiply-accumulate count; zero for non-conv ops
};

class Trace {
 public:
  void enter(const std::string& name);
  void leave();
  std::string section() const;

  void record(const std::string& kind, const std::string& label, const Shape& in,
              const Shape& out, int64_t macs);

  const std::vector<TraceEntry>& entries() const { return entries_; }
  int64_t total_macs() const;
  // Sum over entries whose section equals the prefix or lies under it.
  int64_t section_macs(const std::string& prefix) const;
  std::vector<std::string> top_sections() const;
  int count_kind(const std::string& kind, const std::string& section_prefix = "") const;

 private:
  std::vector<std::string> stack_;
  std::vector<TraceEntry> entries_;
};

// RAII section scope; tolerates a null trace so forward code can stay unconditional.
class TraceSection {
 public:
  TraceSection(Trace* t, const std::string& name) : t_(t) {
    if (t_) t_->enter(name);
  }
  ~TraceSection() {
    if (t_) t_->leave();
  }
  TraceSection(const TraceSection&) = delete;
  TraceSection& operator=(const TraceSection&) = delete;

 private:
  Trace* t_;
};

}  // namespace yoloret
