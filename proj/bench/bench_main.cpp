// Fused (OpenMP) vs store-everything (serial) kernels on the shipped sweeps.
// Prints each CSV and the naive/fused scratch ratio per sweep point.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "lightplane/bench.hpp"
#include "lightplane/io.hpp"

using namespace lightplane;

int main(int argc, char** argv) {
  CLI::App app{"Memory, FLOP and timing sweeps"};
  std::vector<std::string> specs{std::string(LIGHTPLANE_CONFIG_DIR) + "/bench_renderer.json",
                                 std::string(LIGHTPLANE_CONFIG_DIR) + "/bench_splatter.json"};
  std::string out_dir;
  bool fast = false;
  app.add_option("specs", specs, "Bench spec JSON files");
  app.add_option("--out-dir", out_dir, "Also write <spec stem>.csv here");
  app.add_flag("--fast", fast, "Time with per-thread accumulators instead of fixed partitions");
  CLI11_PARSE(app, argc, argv);

  ExecPolicy timing;
  timing.deterministic = !fast;
  for (const auto& path : specs) {
    const auto spec = bench::bench_spec_from_json(io::read_file(path));
    const auto rows = bench::run_bench(spec, timing);
    const auto csv = bench::to_csv(rows);
    std::cout << "# " << path << "\n" << csv;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      io::write_file_atomic(std::filesystem::path(out_dir) / (std::filesystem::path(path).stem().string() + ".csv"),
                            csv);
    }
    std::map<std::pair<int, bool>, std::pair<const bench::BenchRow*, const bench::BenchRow*>> pairs;
    for (const auto& r : rows) {
      auto& slot = pairs[{r.sweep_value, r.backward}];
      (r.mode == bench::Mode::fused ? slot.first : slot.second) = &r;
    }
    for (const auto& [key, p] : pairs) {
      if (!p.first || !p.second) continue;
      std::printf("# %s %d: naive/fused scratch %.1fx, time %.2fx\n", key.second ? "bw" : "fw", key.first,
                  double(p.second->scratch_bytes) / double(p.first->scratch_bytes),
                  p.second->refused ? 0.0 : p.second->time_ms_median / p.first->time_ms_median);
    }
  }
  return 0;
}
