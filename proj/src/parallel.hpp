#pragma once

#include <omp.h>

#include <algorithm>
#include <cstddef>
#include <vector>

#include "lightplane/common.hpp"

namespace lightplane::detail {

// Runs body(state, begin, end) over [0, n) and folds the per-worker states.
//
// Deterministic mode splits [0, n) into min(partitions, n) contiguous
// ranges, creates every state up front, and merges the partials pairwise in
// a fixed tree order, so the result does not depend on thread count or
// scheduling. Fast mode uses one state per OpenMP thread and dynamic chunks.
//
// make() -> State, body(State&, size_t, size_t), merge(State& into, State& from).
template <class Make, class Body, class Merge>
auto parallel_reduce(std::size_t n, const ExecPolicy& policy, Make make, Body body, Merge merge) {
  using State = decltype(make());
  std::vector<State> states;

  if (policy.deterministic) {
    const std::size_t parts =
        std::max<std::size_t>(1, std::min<std::size_t>(std::max(policy.partitions, 1), n));
    states.reserve(parts);
    for (std::size_t p = 0; p < parts; ++p) states.push_back(make());
    const auto count = static_cast<long long>(parts);
#pragma omp parallel for schedule(dynamic, 1)
    for (long long p = 0; p < count; ++p) {
      const std::size_t begin = n * std::size_t(p) / parts;
      const std::size_t end = n * std::size_t(p + 1) / parts;
      body(states[std::size_t(p)], begin, end);
    }
    for (std::size_t stride = 1; stride < parts; stride *= 2)
      for (std::size_t p = 0; p + stride < parts; p += 2 * stride) merge(states[p], states[p + stride]);
    return std::move(states.front());
  }

  const int threads = std::max(1, omp_get_max_threads());
  states.reserve(std::size_t(threads));
  for (int t = 0; t < threads; ++t) states.push_back(make());
  constexpr std::size_t kChunk = 64;
  const auto chunks = static_cast<long long>((n + kChunk - 1) / kChunk);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (long long c = 0; c < chunks; ++c) {
    const std::size_t begin = std::size_t(c) * kChunk;
    const std::size_t end = std::min(n, begin + kChunk);
    body(states[std::size_t(omp_get_thread_num())], begin, end);
  }
  for (int t = 1; t < threads; ++t) merge(states.front(), states[std::size_t(t)]);
  return std::move(states.front());
}

}  // namespace lightplane::detail
