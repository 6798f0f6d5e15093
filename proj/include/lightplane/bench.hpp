#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightplane/common.hpp"
#include "lightplane/hash3d.hpp"

namespace lightplane::bench {

enum class Target { renderer, splatter };
enum class Sweep { image_size, samples, views };
enum class Mode { fused, naive };

struct BenchSpec {
  Target target = Target::renderer;
  Sweep sweep = Sweep::samples;
  std::vector<int> values{16, 64, 256};

  // Fixed parameters; the swept one is overridden per row.
  int image_size = 16;       // rays per view = image_size^2
  int samples = 64;          // R
  int views = 1;             // N, splatter only
  StructureKind kind = StructureKind::triplane;
  int grid_resolution = 32;  // rendered structure or splat target
  int channels_k = 16;       // K
  int channels_c = 3;        // C
  int mlp_width = 16;
  int mlp_layers = 3;
  int direnc_frequencies = 2;

  int repetitions = 3;
  std::vector<Mode> modes{Mode::fused, Mode::naive};
  // Naive runs whose predicted scratch exceeds this are refused.
  std::uint64_t byte_budget = 1ull << 30;
  std::uint64_t seed = 0;

  void validate() const;
};

BenchSpec bench_spec_from_json(const std::string& text);

struct BenchRow {
  int sweep_value = 0;
  Mode mode = Mode::fused;
  bool backward = false;
  bool refused = false;
  std::uint64_t scratch_bytes = 0;  // predicted bytes when refused
  std::uint64_t flops = 0;
  double time_ms_median = 0.0;
  double time_ms_min = 0.0;
};

// Runs every (sweep value, mode) pair forward and backward. Counters come
// from a deterministic run and must agree across repetitions; fused and
// naive outputs are compared wherever both run.
std::vector<BenchRow> run_bench(const BenchSpec& spec, const ExecPolicy& timing_policy = {});

std::string to_csv(const std::vector<BenchRow>& rows);

// Store-everything renderer footprint: one K-float feature per sample per layer.
constexpr std::uint64_t naive_render_bytes(std::uint64_t M, std::uint64_t R, std::uint64_t L,
                                           std::uint64_t K) {
  return M * R * L * K * 4;
}
// Fused renderer auxiliary state: one K-float working feature per ray.
constexpr std::uint64_t fused_render_bytes(std::uint64_t M, std::uint64_t K) { return M * K * 4; }
// A dense FP32 voxel grid of side n with K channels.
constexpr std::uint64_t dense_grid_bytes(std::uint64_t n, std::uint64_t K) { return n * n * n * K * 4; }

}  // namespace lightplane::bench
