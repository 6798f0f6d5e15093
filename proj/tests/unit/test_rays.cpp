#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lightplane/rays.hpp"
#include "oracles.hpp"

using namespace lightplane;

namespace {

Camera simple_camera(int w, int h) {
  Camera c;
  c.width = w;
  c.height = h;
  c.fx = c.fy = 10.0;
  c.cx = w / 2.0;
  c.cy = h / 2.0;
  c.near = 0.5;
  c.far = 2.5;
  return c;
}

}  // namespace

TEST(Rays, PrincipalPointLooksDownOpticalAxis) {
  // Odd size so pixel (1, 1) has its center on the principal point.
  const auto b = rays_from_camera<double>(simple_camera(3, 3));
  const auto d = b.directions[4];
  EXPECT_NEAR(d.x, 0.0, 1e-15);
  EXPECT_NEAR(d.y, 0.0, 1e-15);
  EXPECT_NEAR(d.z, 1.0, 1e-15);
}

TEST(Rays, OneUnitRayPerPixel) {
  const auto b = rays_from_camera<float>(simple_camera(7, 5));
  ASSERT_EQ(b.size(), 35u);
  for (const auto& d : b.directions) EXPECT_NEAR(d.norm(), 1.0f, 1e-6f);
}

TEST(Rays, PointsReprojectToTheirPixel) {
  const auto cam = look_at({1.5, -0.7, 2.0}, {0, 0, 0}, {0, 1, 0}, 9, 6, 8.0, 0.5, 4.0);
  const auto s = sample_points(rays_from_camera<double>(cam), 8);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t r = std::size_t(y) * cam.width + x;
      for (int j = 0; j <= 8; ++j) {
        const auto uv = cam.project(s.raw_point(r, j));
        EXPECT_NEAR(uv[0], x + 0.5, 1e-3);
        EXPECT_NEAR(uv[1], y + 0.5, 1e-3);
      }
    }
}

TEST(Rays, LookAtFacesTarget) {
  const auto cam = look_at({0, 0, -3}, {0, 0, 0}, {0, 1, 0}, 5, 5, 4.0, 1.0, 5.0);
  const auto b = rays_from_camera<double>(cam);
  EXPECT_NEAR(b.directions[12].z, 1.0, 1e-12);
  // Image y grows downward, so the top row looks up.
  EXPECT_GT(b.directions[2].y, 0.0);
}

TEST(Rays, EquispacedDepths) {
  RayBundle<double> b;
  b.origins = {{0, 0, 0}};
  b.directions = {{0, 0, 1}};
  b.near = 0.0;
  b.far = 1.0;
  const auto s = sample_points(b, 4);
  ASSERT_EQ(s.points_per_ray(), 5);
  for (int j = 0; j <= 4; ++j) {
    EXPECT_DOUBLE_EQ(s.t(0, j), 0.25 * j);
    EXPECT_DOUBLE_EQ(s.point(0, j).z, 0.25 * j);
  }
  EXPECT_DOUBLE_EQ(s.delta(), 0.25);
}

TEST(Rays, JitterKeepsSpacingAndIsSeeded) {
  RayBundle<double> b;
  b.origins = {{0, 0, 0}, {0, 0, 0}};
  b.directions = {{0, 0, 1}, {1, 0, 0}};
  b.near = 1.0;
  b.far = 3.0;
  auto a = sample_points(b, 8), c = sample_points(b, 8);
  a.set_jitter(5);
  c.set_jitter(5);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_LE(std::abs(a.t(r, 0) - 1.0), 0.125 + 1e-12);
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(a.t(r, j + 1) - a.t(r, j), 0.25, 1e-12);
    for (int j = 0; j <= 8; ++j) EXPECT_EQ(a.t(r, j), c.t(r, j));
  }
}

TEST(Rays, ContractedSamplesStayInside) {
  const auto cam = look_at({0, 0, -5}, {0, 0, 0}, {0, 1, 0}, 8, 8, 3.0, 0.1, 1000.0);
  ContractConfig cc;
  cc.enabled = true;
  for (auto mode : {ContractMode::per_axis, ContractMode::radial}) {
    cc.mode = mode;
    const auto s = sample_points(rays_from_camera<float>(cam), 64, cc);
    for (std::size_t r = 0; r < s.num_rays(); ++r)
      for (int j = 0; j <= 64; ++j) EXPECT_TRUE(oracle::inside(s.point(r, j).cast<double>()));
  }
}

TEST(Rays, ZeroIntervalsRejected) {
  RayBundle<double> b;
  b.origins = {{0, 0, 0}};
  b.directions = {{0, 0, 1}};
  EXPECT_THROW(sample_points(b, 0), DomainError);
}

TEST(Rays, BadBundlesRejected) {
  RayBundle<double> b;
  b.origins = {{0, 0, 0}};
  b.directions = {{0, 0, 2}};
  EXPECT_THROW(b.validate(), DomainError);
  b.directions = {{0, 0, 1}};
  b.near = 2.0;
  b.far = 1.0;
  EXPECT_THROW(b.validate(), DomainError);
  b.far = 3.0;
  b.origins.push_back({0, 0, 0});
  EXPECT_THROW(b.validate(), DimensionError);
}

TEST(Rays, PermutedReordersRays) {
  const auto s = sample_points(rays_from_camera<double>(simple_camera(2, 2)), 4);
  const std::vector<std::size_t> perm{3, 1, 0, 2};
  const auto p = s.permuted(perm);
  for (std::size_t i = 0; i < 4; ++i)
    for (int j = 0; j <= 4; ++j) EXPECT_EQ(p.point(i, j), s.point(perm[i], j));
}
