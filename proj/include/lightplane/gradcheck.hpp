#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightplane/renderer.hpp"
#include "lightplane/splatter.hpp"

namespace lightplane::gradcheck {

struct GradcheckConfig {
  int instances = 2;            // per structure kind
  int params_per_check = 200;
  double epsilon = 1e-3;        // central difference step
  double tolerance = 1e-2;      // max relative error
  int rays = 16;
  int samples = 32;
  int grid_resolution = 8;
  int channels_k = 4;
  int channels_c = 3;
  int mlp_width = 16;
  int mlp_layers = 3;
  std::uint64_t seed = 0;
  // Test hook: perturbs the analytic gradients so every check must fail.
  bool corrupt_backward = false;

  void validate() const;
};

GradcheckConfig gradcheck_config_from_json(const std::string& text);

struct CheckResult {
  std::string name;
  int params = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Finite differences against the fused backward passes in double precision.
// Decoders use softplus hidden layers: central differences across ReLU kinks
// are not meaningful at the configured step.
// Relative error is |a - n| / max(|a|, |n|, 1e-6).
std::vector<CheckResult> run_gradchecks(const GradcheckConfig& config);

std::string format_table(const std::vector<CheckResult>& results, double tolerance);

// Seeded random instances shared with the benchmarks' style of setup.
RadianceField<double> random_field(StructureKind kind, int resolution, int K, int C, int width,
                                   int layers, std::uint64_t seed,
                                   Activation hidden = Activation::relu);
RaySamples<double> random_rays(std::size_t count, int samples, std::uint64_t seed);

}  // namespace lightplane::gradcheck
