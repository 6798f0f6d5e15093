#include "lightplane/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "json.hpp"

namespace lightplane::gradcheck {

void GradcheckConfig::validate() const {
  if (instances <= 0 || params_per_check <= 0 || rays <= 0 || samples <= 0 || grid_resolution <= 1 ||
      channels_k <= 0 || channels_c <= 0 || mlp_width <= 0 || mlp_layers <= 0)
    throw DomainError("gradcheck sizes must be positive");
  if (!(epsilon > 0) || !(tolerance > 0)) throw DomainError("epsilon and tolerance must be positive");
}

GradcheckConfig gradcheck_config_from_json(const std::string& text) {
  GradcheckConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [key, v] : j.items()) {
      if (key == "instances") c.instances = v.get<int>();
      else if (key == "params_per_check") c.params_per_check = v.get<int>();
      else if (key == "epsilon") c.epsilon = v.get<double>();
      else if (key == "tolerance") c.tolerance = v.get<double>();
      else if (key == "rays") c.rays = v.get<int>();
      else if (key == "samples") c.samples = v.get<int>();
      else if (key == "grid_resolution") c.grid_resolution = v.get<int>();
      else if (key == "K") c.channels_k = v.get<int>();
      else if (key == "C") c.channels_c = v.get<int>();
      else if (key == "mlp_width") c.mlp_width = v.get<int>();
      else if (key == "mlp_layers") c.mlp_layers = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "corrupt_backward") c.corrupt_backward = v.get<bool>();
      else throw FormatError("unknown gradcheck config key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("gradcheck config: ") + e.what());
  }
  c.validate();
  return c;
}

RadianceField<double> random_field(StructureKind kind, int resolution, int K, int C, int width,
                                   int layers, std::uint64_t seed, Activation hidden) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  RadianceField<double> f;
  f.grid = HashStructure<double>(GridShape{kind, resolution, resolution, resolution, K});
  for (auto& v : f.grid.data()) v = u(rng);
  f.direnc = DirEncConfig{2, true};
  auto ss = sigma_mlp_shape(K, width, layers);
  auto fs = feature_mlp_shape(K + f.direnc.length(), C, width, layers);
  ss.hidden = fs.hidden = hidden;
  f.sigma_mlp = init_mlp<double>(ss, rng());
  f.feature_mlp = init_mlp<double>(fs, rng());
  return f;
}

RaySamples<double> random_rays(std::size_t count, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  RayBundle<double> b;
  b.near = 0.8;
  b.far = 3.2;
  for (std::size_t i = 0; i < count; ++i) {
    Vec3<double> o{n(rng), n(rng), n(rng)};
    o = (2.0 / o.norm()) * o;
    auto d = Vec3<double>{u(rng), u(rng), u(rng)} - o;
    b.origins.push_back(o);
    b.directions.push_back((1.0 / d.norm()) * d);
  }
  return RaySamples<double>(std::move(b), samples);
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Compares analytic gradients of a parameter group against central
// differences of loss(). Three quarters of the probes go to parameters with
// a nonzero analytic gradient, the rest are uniform.
CheckResult check_group(const std::string& name, std::vector<double*> params,
                        std::vector<double> analytic, const std::function<double()>& loss,
                        const GradcheckConfig& c, std::mt19937_64& rng) {
  if (c.corrupt_backward)
    for (auto& a : analytic) a = 1.5 * a + 1e-3;
  std::vector<std::size_t> nonzero;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    if (analytic[i] != 0.0) nonzero.push_back(i);
  std::uniform_int_distribution<std::size_t> any(0, params.size() - 1);
  CheckResult r{name, 0, 0.0, true};
  for (int p = 0; p < c.params_per_check; ++p) {
    std::size_t idx;
    if (!nonzero.empty() && p % 4 != 3) {
      idx = nonzero[std::uniform_int_distribution<std::size_t>(0, nonzero.size() - 1)(rng)];
    } else {
      idx = any(rng);
    }
    double& x = *params[idx];
    const double x0 = x;
    x = x0 + c.epsilon;
    const double lp = loss();
    x = x0 - c.epsilon;
    const double lm = loss();
    x = x0;
    const double numeric = (lp - lm) / (2.0 * c.epsilon);
    const double a = analytic[idx];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    r.max_rel_error = std::max(r.max_rel_error, err);
    ++r.params;
  }
  r.passed = r.max_rel_error < c.tolerance;
  return r;
}

std::vector<double*> grid_pointers(HashStructure<double>& g) {
  std::vector<double*> p;
  for (auto& v : g.data()) p.push_back(&v);
  return p;
}

std::vector<double> values(const std::vector<double*>& p) {
  std::vector<double> v;
  for (auto* x : p) v.push_back(*x);
  return v;
}

const char* kind_name(StructureKind k) { return k == StructureKind::voxel ? "voxel" : "triplane"; }

void renderer_checks(StructureKind kind, std::uint64_t seed, const GradcheckConfig& c,
                     std::vector<CheckResult>& out) {
  std::mt19937_64 rng(seed);
  auto field = random_field(kind, c.grid_resolution, c.channels_k, c.channels_c, c.mlp_width,
                            c.mlp_layers, rng(), Activation::softplus);
  const auto rays = random_rays(std::size_t(c.rays), c.samples, rng());
  std::vector<double> upstream(std::size_t(c.rays) * c.channels_c);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : upstream) v = u(rng);

  const auto fw = render_forward_fused(field, rays);
  auto g = render_backward_fused(field, rays, std::span<const double>(upstream),
                                 std::span<const double>(fw.final_transmittance));
  auto loss = [&] { return dot(render_forward_fused(field, rays).features, upstream); };
  const std::string tag = std::string("renderer/") + kind_name(kind) + "/";
  out.push_back(check_group(tag + "grid", grid_pointers(field.grid),
                            std::vector<double>(g.grid.data().begin(), g.grid.data().end()), loss, c,
                            rng));
  out.push_back(check_group(tag + "sigma_mlp", field.sigma_mlp.parameter_pointers(),
                            values(g.sigma_mlp.parameter_pointers()), loss, c, rng));
  out.push_back(check_group(tag + "feature_mlp", field.feature_mlp.parameter_pointers(),
                            values(g.feature_mlp.parameter_pointers()), loss, c, rng));
}

void splatter_checks(StructureKind kind, std::uint64_t seed, const GradcheckConfig& c,
                     std::vector<CheckResult>& out) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = c.grid_resolution;
  auto prior = HashStructure<double>(GridShape{kind, n, n, n, c.channels_k});
  for (auto& v : prior.data()) v = u(rng);
  const auto rays = random_rays(std::size_t(c.rays), c.samples, rng());
  std::vector<double> features(std::size_t(c.rays) * c.channels_c);
  for (auto& v : features) v = u(rng);
  const DirEncConfig enc{2, true};
  const int din = c.channels_c + c.channels_k + enc.length() + 3;
  auto shape = splat_mlp_shape(din, c.channels_k, c.mlp_width, c.mlp_layers);
  shape.hidden = Activation::softplus;
  auto mlp = init_mlp<double>(shape, rng());
  const GridShape target{kind, n, n, n, c.channels_k};
  auto upstream = HashStructure<double>(target);
  for (auto& v : upstream.data()) v = u(rng);

  const SplatInputs<double> inputs{features, c.channels_c, rays, &prior, &mlp, enc, true};
  const auto fw = splat_forward_fused(inputs, target);
  auto g = splat_backward_fused(inputs, target, upstream, fw.theta_weight);
  auto loss = [&] { return dot(splat_forward_fused(inputs, target).normalized.data(), upstream.data()); };
  const std::string tag = std::string("splatter/") + kind_name(kind) + "/";
  std::vector<double*> fp;
  for (auto& v : features) fp.push_back(&v);
  out.push_back(check_group(tag + "features", fp, g.features, loss, c, rng));
  out.push_back(check_group(tag + "prior", grid_pointers(prior),
                            std::vector<double>(g.prior.data().begin(), g.prior.data().end()), loss, c, rng));
  out.push_back(check_group(tag + "splat_mlp", mlp.parameter_pointers(),
                            values(g.splat_mlp.parameter_pointers()), loss, c, rng));
}

}  // namespace

std::vector<CheckResult> run_gradchecks(const GradcheckConfig& config) {
  config.validate();
  std::vector<CheckResult> out;
  for (int i = 0; i < config.instances; ++i)
    for (auto kind : {StructureKind::voxel, StructureKind::triplane}) {
      const std::uint64_t s = config.seed * 1000003ull + std::uint64_t(i) * 2 + std::uint64_t(kind);
      renderer_checks(kind, s, config, out);
      splatter_checks(kind, s + 0x9e37ull, config, out);
    }
  return out;
}

std::string format_table(const std::vector<CheckResult>& results, double tolerance) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-30s %7s %14s %10s  %s\n", "check", "params", "max_rel_error",
                "threshold", "result");
  os << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-30s %7d %14.3e %10.1e  %s\n", r.name.c_str(), r.params,
                  r.max_rel_error, tolerance, r.passed ? "PASS" : "FAIL");
    os << line;
  }
  return os.str();
}

}  // namespace lightplane::gradcheck
