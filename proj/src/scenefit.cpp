#include "lightplane/scenefit.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "json.hpp"

namespace lightplane {

double AnalyticScene::density(const Vec3<double>& x) const {
  const double d = (x.norm() - radius) / width;
  return density_scale * std::exp(-d * d);
}

Vec3<double> AnalyticScene::color(const Vec3<double>& x) const {
  auto c = [](double v) { return std::clamp(0.5 + 0.5 * v, 0.0, 1.0); };
  return {c(x.x), c(x.y), c(x.z)};
}

std::vector<io::Image> make_ground_truth(const AnalyticScene& scene,
                                         const std::vector<Camera>& cameras, int samples) {
  if (samples < 1) throw DomainError("ground truth needs at least one interval per ray");
  std::vector<io::Image> images;
  for (const auto& cam : cameras) {
    const auto bundle = rays_from_camera<double>(cam);
    const RaySamples<double> rs(bundle, samples);
    const double delta = rs.delta();
    io::Image img(cam.width, cam.height, 3);
    const auto M = static_cast<long long>(rs.num_rays());
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < M; ++r) {
      const auto i = std::size_t(r);
      double T = 1.0;
      Vec3<double> acc{};
      for (int j = 0; j <= samples; ++j) {
        const auto x = rs.point(i, j);
        const double T_prev = T;
        T *= std::exp(-delta * scene.density(x));
        if (j >= 1) acc = acc + (T_prev - T) * scene.color(x);
      }
      const int y = int(i / cam.width), xpix = int(i % cam.width);
      img.at(0, y, xpix) = float(acc.x);
      img.at(1, y, xpix) = float(acc.y);
      img.at(2, y, xpix) = float(acc.z);
    }
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<Camera> orbit_cameras(int count, std::uint64_t seed, int image_size, double distance,
                                  double focal, double near, double far) {
  std::vector<Vec3<double>> dirs;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < count; ++k) {
    const double z = 1.0 - 2.0 * (k + 0.5) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    dirs.push_back({r * std::cos(golden * k), r * std::sin(golden * k), z});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(dirs.begin(), dirs.end(), rng);
  std::vector<Camera> cams;
  for (const auto& d : dirs) {
    const Vec3<double> up = std::abs(d.z) > 0.95 ? Vec3<double>{0, 1, 0} : Vec3<double>{0, 0, 1};
    cams.push_back(look_at(distance * d, {0, 0, 0}, up, image_size, image_size, focal, near, far));
  }
  return cams;
}

void FitConfig::validate() const {
  if (image_size <= 0 || samples <= 0 || iterations <= 0 || train_views <= 0 || test_views <= 0 ||
      grid_resolution <= 1 || grid_channels <= 0 || mlp_width <= 0 || mlp_layers <= 0 ||
      direnc_frequencies < 0)
    throw DomainError("fit config sizes must be positive");
  if (oracle_samples < 4 * samples)
    throw DomainError("ground truth needs at least 4x the fitting samples");
  if (!(lr_grid > 0) || !(lr_mlp > 0) || !(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1) ||
      !(adam_eps > 0))
    throw DomainError("invalid optimizer settings");
  if (!(near >= 0) || !(far > near)) throw DomainError("fit needs 0 <= near < far");
}

FitConfig fit_config_from_json(const std::string& text) {
  FitConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [key, v] : j.items()) {
      if (key == "image_size") c.image_size = v.get<int>();
      else if (key == "samples") c.samples = v.get<int>();
      else if (key == "oracle_samples") c.oracle_samples = v.get<int>();
      else if (key == "iterations") c.iterations = v.get<int>();
      else if (key == "train_views") c.train_views = v.get<int>();
      else if (key == "test_views") c.test_views = v.get<int>();
      else if (key == "kind") {
        const auto s = v.get<std::string>();
        if (s == "voxel") c.kind = StructureKind::voxel;
        else if (s == "triplane") c.kind = StructureKind::triplane;
        else throw FormatError("kind must be voxel or triplane");
      } else if (key == "grid_resolution") c.grid_resolution = v.get<int>();
      else if (key == "grid_channels") c.grid_channels = v.get<int>();
      else if (key == "grid_init") c.grid_init = v.get<float>();
      else if (key == "sigma_bias_init") c.sigma_bias_init = v.get<float>();
      else if (key == "mlp_width") c.mlp_width = v.get<int>();
      else if (key == "mlp_layers") c.mlp_layers = v.get<int>();
      else if (key == "direnc_frequencies") c.direnc_frequencies = v.get<int>();
      else if (key == "lr_grid") c.lr_grid = v.get<double>();
      else if (key == "lr_mlp") c.lr_mlp = v.get<double>();
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "loss") {
        const auto s = v.get<std::string>();
        if (s == "mse") c.loss = FitLoss::mse;
        else if (s == "mse_plus_tv") c.loss = FitLoss::mse_plus_tv;
        else throw FormatError("loss must be mse or mse_plus_tv");
      } else if (key == "tv_weight") c.tv_weight = v.get<double>();
      else if (key == "camera_distance") c.camera_distance = v.get<double>();
      else if (key == "focal_scale") c.focal_scale = v.get<double>();
      else if (key == "near") c.near = v.get<double>();
      else if (key == "far") c.far = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "scene") {
        if (v.is_string()) {
          const auto s = v.get<std::string>();
          if (s == "sphere_shell") c.scene = AnalyticScene::sphere_shell();
          else if (s == "empty") c.scene = AnalyticScene::empty();
          else throw FormatError("scene must be sphere_shell or empty");
        } else {
          c.scene.density_scale = v.value("density_scale", c.scene.density_scale);
          c.scene.radius = v.value("radius", c.scene.radius);
          c.scene.width = v.value("width", c.scene.width);
        }
      } else throw FormatError("unknown fit config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("fit config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string FitReport::to_json() const {
  nlohmann::json j;
  j["loss_curve"] = loss_curve;
  j["test_psnr"] = test_psnr;
  j["mean_test_psnr"] = mean_test_psnr;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

double psnr(const io::Image& a, const io::Image& b) {
  if (a.data.size() != b.data.size()) throw DimensionError("psnr on images of different sizes");
  double se = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    se += d * d;
  }
  const double mse = se / double(a.data.size());
  return 10.0 * std::log10(1.0 / std::max(mse, 1e-20));
}

namespace {

class Adam {
 public:
  Adam(std::size_t n, double lr, const FitConfig& c)
      : m_(n, 0.0f), v_(n, 0.0f), lr_(lr), b1_(c.beta1), b2_(c.beta2), eps_(c.adam_eps) {}

  // param[i] and grad[i] are reached through accessor callables.
  template <class Param, class Grad>
  void step(int t, Param param, Grad grad) {
    const double c1 = 1.0 - std::pow(b1_, t), c2 = 1.0 - std::pow(b2_, t);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double g = grad(i);
      m_[i] = float(b1_ * m_[i] + (1.0 - b1_) * g);
      v_[i] = float(b2_ * v_[i] + (1.0 - b2_) * g * g);
      const double mh = m_[i] / c1, vh = v_[i] / c2;
      param(i) -= float(lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }

 private:
  std::vector<float> m_, v_;
  double lr_, b1_, b2_, eps_;
};

RadianceField<float> init_field(const FitConfig& c) {
  RadianceField<float> f;
  const int n = c.grid_resolution;
  f.grid = HashStructure<float>(GridShape{c.kind, n, n, n, c.grid_channels});
  std::mt19937_64 rng(c.seed ^ 0x5eedULL);
  std::uniform_real_distribution<float> u(-c.grid_init, c.grid_init);
  for (auto& v : f.grid.data()) v = u(rng);
  f.direnc = DirEncConfig{c.direnc_frequencies, true};
  f.sigma_mlp = init_mlp<float>(sigma_mlp_shape(c.grid_channels, c.mlp_width, c.mlp_layers), c.seed + 1);
  f.sigma_mlp.layers.back().bias[0] += c.sigma_bias_init;
  f.feature_mlp = init_mlp<float>(
      feature_mlp_shape(c.grid_channels + f.direnc.length(), 3, c.mlp_width, c.mlp_layers), c.seed + 2);
  return f;
}

// Image loss and its gradient w.r.t. the per-ray features (ray-major, 3 channels).
double image_loss(const FitConfig& c, std::span<const float> pred, std::span<const float> target,
                  std::span<float> grad) {
  const std::size_t n = pred.size();
  double loss = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = double(pred[k]) - double(target[k]);
    loss += d * d;
    grad[k] = float(2.0 * d / double(n));
  }
  loss /= double(n);
  if (c.loss == FitLoss::mse_plus_tv) {
    const int s = c.image_size;
    const double pairs = 2.0 * s * (s - 1) * 3;
    double tv = 0.0;
    auto pair = [&](std::size_t a, std::size_t b) {
      const double d = double(pred[a]) - double(pred[b]);
      tv += d * d;
      const float g = float(c.tv_weight * 2.0 * d / pairs);
      grad[a] += g;
      grad[b] -= g;
    };
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          const std::size_t p = (std::size_t(y) * s + x) * 3 + ch;
          if (x + 1 < s) pair(p, p + 3);
          if (y + 1 < s) pair(p, p + std::size_t(s) * 3);
        }
    loss += c.tv_weight * tv / pairs;
  }
  return loss;
}

}  // namespace

FitResult fit(const FitConfig& config, const ExecContext& ctx) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const int S = config.image_size;
  const double focal = config.focal_scale * S;
  auto cams = orbit_cameras(config.train_views + config.test_views, config.seed, S,
                            config.camera_distance, focal, config.near, config.far);
  std::vector<Camera> train(cams.begin(), cams.begin() + config.train_views);
  std::vector<Camera> test(cams.begin() + config.train_views, cams.end());

  const auto train_gt = make_ground_truth(config.scene, train, config.oracle_samples);
  const auto test_gt = make_ground_truth(config.scene, test, config.oracle_samples);
  std::vector<std::vector<float>> train_targets;
  std::vector<RaySamples<float>> train_rays;
  for (std::size_t v = 0; v < train.size(); ++v) {
    train_targets.push_back(io::rays_from_image(train_gt[v]));
    train_rays.emplace_back(rays_from_camera<float>(train[v]), config.samples);
  }

  FitResult result;
  auto& field = result.field;
  field = init_field(config);
  Adam adam_grid(field.grid.size(), config.lr_grid, config);
  Adam adam_sigma(field.sigma_mlp.param_count(), config.lr_mlp, config);
  Adam adam_feature(field.feature_mlp.param_count(), config.lr_mlp, config);

  std::mt19937_64 rng(config.seed ^ 0xf17ULL);
  std::vector<int> view_order;
  std::vector<float> grad(std::size_t(S) * S * 3);
  for (int it = 0; it < config.iterations; ++it) {
    if (view_order.empty()) {
      view_order.resize(train.size());
      std::iota(view_order.begin(), view_order.end(), 0);
      std::shuffle(view_order.begin(), view_order.end(), rng);
    }
    const int v = view_order.back();
    view_order.pop_back();

    const auto out = render_forward_fused(field, train_rays[v], {}, ctx);
    const double loss = image_loss(config, out.features, train_targets[v], grad);
    if (!std::isfinite(loss))
      throw Error("fit diverged at iteration " + std::to_string(it) + ": loss is not finite");
    result.report.loss_curve.push_back(loss);
    auto g = render_backward_fused(field, train_rays[v], std::span<const float>(grad),
                                   std::span<const double>(out.final_transmittance), {}, ctx);

    const int t = it + 1;
    auto grid = field.grid.data();
    auto ggrid = g.grid.data();
    adam_grid.step(t, [&](std::size_t i) -> float& { return grid[i]; },
                   [&](std::size_t i) { return double(ggrid[i]); });
    auto ps = field.sigma_mlp.parameter_pointers();
    auto gs = g.sigma_mlp.parameter_pointers();
    adam_sigma.step(t, [&](std::size_t i) -> float& { return *ps[i]; },
                    [&](std::size_t i) { return double(*gs[i]); });
    auto pf = field.feature_mlp.parameter_pointers();
    auto gf = g.feature_mlp.parameter_pointers();
    adam_feature.step(t, [&](std::size_t i) -> float& { return *pf[i]; },
                      [&](std::size_t i) { return double(*gf[i]); });
  }
  if (!field.grid.all_finite()) throw Error("fit produced non-finite grid values");

  double sum = 0.0;
  for (std::size_t v = 0; v < test.size(); ++v) {
    const RaySamples<float> rs(rays_from_camera<float>(test[v]), config.samples);
    const auto out = render_forward_fused(field, rs, {}, ctx);
    auto img = io::image_from_rays(std::span<const float>(out.features), S, S, 3);
    const double p = psnr(img, test_gt[v]);
    result.report.test_psnr.push_back(p);
    sum += p;
    result.test_renders.push_back(std::move(img));
  }
  result.report.mean_test_psnr = test.empty() ? 0.0 : sum / double(test.size());
  result.test_cameras = std::move(test);
  result.test_targets = test_gt;
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace lightplane
