#include <gtest/gtest.h>

#include <cmath>

#include "lightplane/scenefit.hpp"

using namespace lightplane;

namespace {

std::vector<Camera> front_back(int size) {
  return {look_at({0, 0, -2.4}, {0, 0, 0}, {0, 1, 0}, size, size, 1.2 * size, 1.4, 3.4),
          look_at({0, 0, 2.4}, {0, 0, 0}, {0, 1, 0}, size, size, 1.2 * size, 1.4, 3.4)};
}

double mean(const io::Image& img) {
  double s = 0.0;
  for (float v : img.data) s += v;
  return s / double(img.data.size());
}

}  // namespace

TEST(SceneFit, AnalyticSceneRanges) {
  const auto scene = AnalyticScene::sphere_shell();
  EXPECT_DOUBLE_EQ(scene.density({0.5, 0, 0}), 15.0);
  EXPECT_NEAR(scene.density({0, 0.6, 0}), 15.0 * std::exp(-1.0), 1e-12);
  EXPECT_GE(scene.density({0, 0, 0}), 0.0);
  const auto c = scene.color({-3, 0.2, 1});
  EXPECT_EQ(c.x, 0.0);
  EXPECT_DOUBLE_EQ(c.y, 0.6);
  EXPECT_EQ(c.z, 1.0);
}

TEST(SceneFit, ZeroSceneRendersBlack) {
  const auto imgs = make_ground_truth(AnalyticScene::empty(), front_back(8), 64);
  for (const auto& img : imgs)
    for (float v : img.data) EXPECT_EQ(v, 0.0f);
}

TEST(SceneFit, GroundTruthQuadratureConverges) {
  const auto cams = front_back(16);
  const auto a = make_ground_truth(AnalyticScene::sphere_shell(), cams, 256);
  const auto b = make_ground_truth(AnalyticScene::sphere_shell(), cams, 512);
  for (std::size_t v = 0; v < a.size(); ++v)
    for (std::size_t i = 0; i < a[v].data.size(); ++i) EXPECT_NEAR(a[v].data[i], b[v].data[i], 1e-3);
}

TEST(SceneFit, FrontBackSymmetry) {
  // Rotating by pi about y maps the front view onto the back view. Green
  // (from y) is invariant; red and blue flip sign around half the opacity.
  const auto imgs = make_ground_truth(AnalyticScene::sphere_shell(), front_back(16), 128);
  const auto &A = imgs[0], &B = imgs[1];
  double lit = 0.0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      EXPECT_NEAR(A.at(1, y, x), B.at(1, y, x), 1e-5);
      EXPECT_NEAR(A.at(0, y, x) + B.at(0, y, x), A.at(2, y, x) + B.at(2, y, x), 1e-5);
      lit += A.at(1, y, x);
    }
  EXPECT_GT(lit, 1.0);
}

TEST(SceneFit, GroundTruthIsDeterministic) {
  const auto cams = front_back(8);
  EXPECT_EQ(make_ground_truth(AnalyticScene::sphere_shell(), cams, 64)[0].data,
            make_ground_truth(AnalyticScene::sphere_shell(), cams, 64)[0].data);
}

TEST(SceneFit, OrbitCamerasLookAtOrigin) {
  const auto cams = orbit_cameras(24, 3, 8, 2.4, 9.6, 1.4, 3.4);
  ASSERT_EQ(cams.size(), 24u);
  for (const auto& c : cams) {
    EXPECT_NEAR(c.center.norm(), 2.4, 1e-12);
    const auto uv = c.project({0, 0, 0});
    EXPECT_NEAR(uv[0], 4.0, 1e-9);
    EXPECT_NEAR(uv[1], 4.0, 1e-9);
  }
  EXPECT_EQ(orbit_cameras(24, 3, 8, 2.4, 9.6, 1.4, 3.4)[5].center, cams[5].center);
}

TEST(SceneFit, PsnrDefinition) {
  io::Image a(2, 2, 3), b(2, 2, 3);
  for (auto& v : b.data) v = 0.1f;
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-5);
  EXPECT_THROW(psnr(a, io::Image(1, 2, 3)), DimensionError);
}

TEST(SceneFit, ConfigValidation) {
  FitConfig c;
  EXPECT_NO_THROW(c.validate());
  c.oracle_samples = 4 * c.samples - 1;
  EXPECT_THROW(c.validate(), DomainError);
  c = FitConfig{};
  c.iterations = 0;
  EXPECT_THROW(c.validate(), DomainError);
  EXPECT_THROW(fit_config_from_json(R"({"itertions": 3})"), FormatError);
  EXPECT_THROW(fit_config_from_json("[1"), FormatError);
  const auto j = fit_config_from_json(R"({"iterations": 7, "kind": "triplane", "loss": "mse_plus_tv", "seed": 9})");
  EXPECT_EQ(j.iterations, 7);
  EXPECT_EQ(j.kind, StructureKind::triplane);
  EXPECT_EQ(j.loss, FitLoss::mse_plus_tv);
  EXPECT_EQ(j.seed, 9u);
}

TEST(SceneFit, ZeroSceneFitsToBlack) {
  FitConfig c;
  c.scene = AnalyticScene::empty();
  c.image_size = 16;
  c.samples = 16;
  c.oracle_samples = 64;
  c.iterations = 100;
  c.train_views = 4;
  c.test_views = 2;
  c.grid_resolution = 8;
  c.mlp_width = 16;
  c.mlp_layers = 2;
  const auto r = fit(c);
  ASSERT_EQ(r.test_renders.size(), 2u);
  for (const auto& img : r.test_renders) EXPECT_LT(mean(img), 1e-3);
  ASSERT_EQ(r.report.loss_curve.size(), 100u);
  EXPECT_LT(r.report.loss_curve.back(), 0.5 * r.report.loss_curve.front());
}

TEST(SceneFit, ShortFitReducesLossAndIsReproducible) {
  FitConfig c;
  c.image_size = 16;
  c.samples = 16;
  c.oracle_samples = 64;
  c.iterations = 300;
  c.train_views = 6;
  c.test_views = 1;
  c.grid_resolution = 12;
  c.mlp_width = 16;
  c.mlp_layers = 2;
  c.loss = FitLoss::mse_plus_tv;
  const auto a = fit(c);
  const auto& l = a.report.loss_curve;
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 50; ++i) {
    first += l[i];
    last += l[l.size() - 1 - i];
  }
  EXPECT_LT(last, 0.5 * first);
  const auto b = fit(c);
  EXPECT_EQ(a.report.loss_curve, b.report.loss_curve);
  EXPECT_EQ(a.test_renders[0].data, b.test_renders[0].data);
}
