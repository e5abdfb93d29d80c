#include "yoloret/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "yoloret/common.hpp"

namespace yoloret {
namespace bench {

BenchStats summarize_latencies(const std::vector<double>& durations_ms) {
  if (durations_ms.empty()) throw ValidationError("benchmark needs at least one sample");
  std::vector<double> sorted = durations_ms;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();

  BenchStats s;
  s.iters = static_cast<int>(n);
  s.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
  s.median_ms = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = sorted[std::max<size_t>(rank, 1) - 1];
  s.fps = 1000.0 / s.mean_ms;
  return s;
}

BenchStats benchmark_run(model::DetectionModel& m, int warmup, int iters) {
  if (iters < 1) throw ValidationError("benchmark needs at least one iteration");
  if (warmup < 0) throw ValidationError("warmup must be non-negative");

  const int res = m.spec().resolution;
  Rng rng(7);
  const Tensor input = random_uniform(Shape{1, 3, res, res}, rng);

  auto once = [&]() {
    autodiff::Ctx ctx(m.params(), nullptr, nullptr, false);
    volatile float sink = m.forward(ctx, ctx.input(input))[0].value.data()[0];
    (void)sink;
  };

  for (int i = 0; i < warmup; ++i) once();

  using clock = std::chrono::steady_clock;
  std::vector<double> durations_ms;
  durations_ms.reserve(static_cast<size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    once();
    const auto t1 = clock::now();
    durations_ms.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }

  BenchStats s = summarize_latencies(durations_ms);
  s.warmup = warmup;
  return s;
}

}  // namespace bench
}  // namespace yoloret
