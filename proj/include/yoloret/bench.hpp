// Latency harness: strictly serial batch-1 forward passes on a synthetic
// input, timed with a monotonic clock, warmup iterations excluded.
#pragma once

#include <vector>

#include "yoloret/model.hpp"

namespace yoloret {
namespace bench {

struct BenchStats {
  int warmup = 0;
  int iters = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  double fps = 0.0;  // 1000 / mean_ms
};

// Pure statistics over per-iteration durations, separated from timing so the
// arithmetic is testable. Median averages the two middle values for even
// counts; p95 is nearest-rank.
BenchStats summarize_latencies(const std::vector<double>& durations_ms);

BenchStats benchmark_run(model::DetectionModel& m, int warmup, int iters);

}  // namespace bench
}  // namespace yoloret
