#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lightplane/common.hpp"
#include "lightplane/hash3d.hpp"

namespace lightplane {

// Pinhole camera. world_from_camera maps camera coordinates (x right,
// y down, z forward) to world: X_w = rotation * X_c + center.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Vec3<double> center{};
  double near = 0.0, far = 1.0;

  void validate() const;
  // Pixel coordinates (u, v) of a world point in front of the camera.
  std::array<double, 2> project(const Vec3<double>& world) const;
};

// Camera at `eye` looking at `target`, with `up` giving the image's upward
// direction (image y grows downward).
Camera look_at(const Vec3<double>& eye, const Vec3<double>& target, const Vec3<double>& up,
               int width, int height, double focal, double near, double far);

template <class Real>
struct RayBundle {
  std::vector<Vec3<Real>> origins;
  std::vector<Vec3<Real>> directions;
  Real near = 0, far = 1;

  std::size_t size() const { return origins.size(); }
  void validate() const;
};

// One ray through each pixel center, pixels in row-major order.
template <class Real>
RayBundle<Real> rays_from_camera(const Camera& camera, double near, double far);
template <class Real>
RayBundle<Real> rays_from_camera(const Camera& camera) {
  return rays_from_camera<Real>(camera, camera.near, camera.far);
}

// R + 1 equispaced points per ray, x_ij = o_i + (near + j * delta) * d_i with
// delta = (far - near) / R. Points are generated on demand; nothing per
// sample is stored. With jitter, every ray's samples shift by one per-ray
// offset in [-delta/2, delta/2), keeping the spacing exactly delta.
template <class Real>
class RaySamples {
 public:
  RaySamples(RayBundle<Real> bundle, int intervals, ContractConfig contract = {});

  // Enables seeded per-ray jitter.
  void set_jitter(std::uint64_t seed);

  const RayBundle<Real>& bundle() const { return bundle_; }
  std::size_t num_rays() const { return bundle_.size(); }
  int intervals() const { return intervals_; }
  int points_per_ray() const { return intervals_ + 1; }
  Real delta() const { return delta_; }
  const ContractConfig& contraction() const { return contract_; }

  Real t(std::size_t ray, int j) const;
  // Sample point before contraction.
  Vec3<Real> raw_point(std::size_t ray, int j) const;
  // Sample point as seen by the hash structures (contracted when enabled).
  Vec3<Real> point(std::size_t ray, int j) const;
  const Vec3<Real>& direction(std::size_t ray) const { return bundle_.directions[ray]; }

  // Same geometry with rays reordered: result ray i is this bundle's ray perm[i].
  RaySamples permuted(std::span<const std::size_t> perm) const;

 private:
  RayBundle<Real> bundle_;
  int intervals_ = 1;
  Real delta_ = 1;
  ContractConfig contract_{};
  std::vector<Real> jitter_;  // per-ray offset in units of delta; empty when disabled
};

template <class Real>
RaySamples<Real> sample_points(const RayBundle<Real>& bundle, int intervals,
                               const ContractConfig& contract = {}) {
  return RaySamples<Real>(bundle, intervals, contract);
}

}  // namespace lightplane
