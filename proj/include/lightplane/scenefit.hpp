#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lightplane/io.hpp"
#include "lightplane/renderer.hpp"

namespace lightplane {

// Closed-form scene: a Gaussian spherical shell of density
//   sigma(x) = scale * exp(-(|x| - radius)^2 / width^2)
// colored by position, rgb = clamp(0.5 + 0.5 * x, 0, 1).
struct AnalyticScene {
  double density_scale = 15.0;
  double radius = 0.5;
  double width = 0.1;

  static AnalyticScene sphere_shell() { return {}; }
  static AnalyticScene empty() { return {0.0, 0.5, 0.1}; }

  double density(const Vec3<double>& x) const;
  Vec3<double> color(const Vec3<double>& x) const;
};

// Renders the analytic fields with the emission-absorption quadrature at
// `samples` intervals per ray, composited over black.
std::vector<io::Image> make_ground_truth(const AnalyticScene& scene,
                                         const std::vector<Camera>& cameras, int samples);

// Cameras on a sphere around the origin looking at it. Directions follow a
// Fibonacci lattice, shuffled by seed.
std::vector<Camera> orbit_cameras(int count, std::uint64_t seed, int image_size, double distance,
                                  double focal, double near, double far);

enum class FitLoss { mse, mse_plus_tv };

struct FitConfig {
  int image_size = 64;
  int samples = 64;           // R used while fitting
  int oracle_samples = 256;   // R for ground truth, at least 4x samples
  int iterations = 2000;
  int train_views = 20;
  int test_views = 4;

  StructureKind kind = StructureKind::voxel;
  int grid_resolution = 32;
  int grid_channels = 8;
  float grid_init = 0.1f;     // grid values start uniform in +-grid_init
  // Added to the opacity decoder's output bias at init; negative values
  // start from a nearly empty scene.
  float sigma_bias_init = -7.0f;
  int mlp_width = 16;
  int mlp_layers = 2;
  int direnc_frequencies = 4;

  double lr_grid = 1e-2;
  double lr_mlp = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;

  FitLoss loss = FitLoss::mse;
  double tv_weight = 0.01;

  double camera_distance = 2.4;
  double focal_scale = 1.2;   // focal length in units of image size
  double near = 1.4;
  double far = 3.4;

  std::uint64_t seed = 0;
  AnalyticScene scene = AnalyticScene::sphere_shell();

  void validate() const;
};

FitConfig fit_config_from_json(const std::string& text);

struct FitReport {
  std::vector<double> loss_curve;
  std::vector<double> test_psnr;  // per held-out view
  double mean_test_psnr = 0.0;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

struct FitResult {
  FitReport report;
  RadianceField<float> field;
  std::vector<Camera> test_cameras;
  std::vector<io::Image> test_renders;
  std::vector<io::Image> test_targets;
};

// PSNR = 10 log10(1 / MSE) over all channels of [0, 1] images.
double psnr(const io::Image& a, const io::Image& b);

// Adam-style optimization of grid and decoders against full-image losses on
// every pixel of one training view per iteration. Throws Error if the loss
// becomes non-finite.
FitResult fit(const FitConfig& config, const ExecContext& ctx = {});

}  // namespace lightplane
