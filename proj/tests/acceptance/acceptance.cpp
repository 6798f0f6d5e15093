// One PASS/FAIL line per acceptance criterion. Exit status is nonzero if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "lightplane/bench.hpp"
#include "lightplane/gradcheck.hpp"
#include "lightplane/io.hpp"
#include "lightplane/reference.hpp"
#include "lightplane/scenefit.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace lightplane;
namespace fs = std::filesystem;

namespace {

const std::string kConfigs = LIGHTPLANE_CONFIG_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

RaySamples<float> to_float(const RaySamples<double>& s) {
  RayBundle<float> b;
  for (std::size_t i = 0; i < s.num_rays(); ++i) {
    b.origins.push_back(s.bundle().origins[i].cast<float>());
    b.directions.push_back(s.bundle().directions[i].cast<float>());
  }
  b.near = float(s.bundle().near);
  b.far = float(s.bundle().far);
  return RaySamples<float>(b, s.intervals());
}

template <class Real>
std::vector<Real> flat(RenderGrads<Real>& g, int part) {
  if (part == 0) return {g.grid.data().begin(), g.grid.data().end()};
  std::vector<Real> v;
  for (Real* p : (part == 1 ? g.sigma_mlp : g.feature_mlp).parameter_pointers()) v.push_back(*p);
  return v;
}

// Instances shared by the forward and backward equivalence criteria.
struct Instance {
  RadianceField<float> field;
  RaySamples<float> samples;
};

std::vector<Instance> equivalence_instances() {
  std::vector<Instance> out;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const bool tri = seed % 2 == 1;
    const auto f = gradcheck::random_field(tri ? StructureKind::triplane : StructureKind::voxel, tri ? 16 : 8, 8, 3,
                                           16, 3, seed);
    out.push_back({f.cast<float>(), to_float(gradcheck::random_rays(16, 32, seed + 1000))});
  }
  return out;
}

Outcome forward_equivalence() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const auto& in : equivalence_instances()) {
    const auto fused = render_forward_fused(in.field, in.samples);
    const auto naive = reference::render_forward_naive(in.field, in.samples);
    worst = std::max(worst, oracle::max_abs_diff(fused.features, naive.output.features));
    worst = std::max(worst, oracle::max_abs_diff(fused.final_transmittance, naive.output.final_transmittance));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-5 && t < 10.0, fmt("max_abs_diff %.3e over 20 instances, %.2f s", worst, t)};
}

Outcome backward_equivalence() {
  const auto t0 = Clock::now();
  double worst[3] = {0, 0, 0};
  std::mt19937_64 rng(77);
  std::normal_distribution<float> n;
  for (const auto& in : equivalence_instances()) {
    const auto fused = render_forward_fused(in.field, in.samples);
    const auto naive = reference::render_forward_naive(in.field, in.samples);
    std::vector<float> up(fused.features.size());
    for (auto& u : up) u = n(rng);
    auto gf = render_backward_fused(in.field, in.samples, std::span<const float>(up),
                                    std::span<const double>(fused.final_transmittance));
    auto gn = reference::render_backward_naive(in.field, in.samples, naive, std::span<const float>(up));
    for (int p = 0; p < 3; ++p) worst[p] = std::max(worst[p], oracle::max_rel_diff(flat(gf, p), flat(gn, p)));
  }
  const double t = seconds_since(t0);
  const double w = *std::max_element(worst, worst + 3);
  return {w < 1e-4 && t < 30.0,
          fmt("max_rel_err grid %.2e, sigma decoder %.2e, feature decoder %.2e", worst[0], worst[1], worst[2]) +
              fmt(", %.2f s", t)};
}

Outcome finite_differences() {
  const auto t0 = Clock::now();
  const auto cfg = gradcheck::gradcheck_config_from_json(io::read_file(kConfigs + "/gradcheck_default.json"));
  const auto results = gradcheck::run_gradchecks(cfg);
  bool ok = !results.empty();
  double worst = 0.0;
  int params = 0;
  for (const auto& r : results) {
    ok = ok && r.passed && r.params == cfg.params_per_check;
    worst = std::max(worst, r.max_rel_error);
    params += r.params;
  }
  const double t = seconds_since(t0);
  std::printf("%s", gradcheck::format_table(results, cfg.tolerance).c_str());
  return {ok && t < 120.0, fmt("%.0f checks, %.0f parameters, worst rel err %.3e", double(results.size()),
                               double(params), worst) +
                               fmt(", %.2f s", t)};
}

Outcome adjointness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> dim(2, 9), kk(1, 4), npts(1, 64);
  std::uniform_real_distribution<double> u(-1.05, 1.05), val(-1, 1), wt(0, 1);
  double worst = 0.0;
  for (auto kind : {StructureKind::voxel, StructureKind::triplane})
    for (int inst = 0; inst < 50; ++inst) {
      const GridShape shape{kind, dim(rng), dim(rng), dim(rng), kk(rng)};
      const int N = npts(rng);
      std::vector<Vec3<double>> X(N);
      for (auto& x : X) x = {u(rng), u(rng), u(rng)};
      std::vector<double> V(std::size_t(N) * shape.K), W(N);
      for (auto& v : V) v = val(rng);
      for (auto& w : W) w = wt(rng);
      HashStructure<double> theta(shape);
      for (auto& t : theta.data()) t = val(rng);
      const auto S = splat_plain<double>(X, V, W, shape);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < S.size(); ++i) lhs += S.data()[i] * theta.data()[i];
      for (int p = 0; p < N; ++p) {
        const auto h = theta.sample(X[p]);
        for (int k = 0; k < shape.K; ++k) rhs += W[p] * V[std::size_t(p) * shape.K + k] * h[k];
      }
      worst = std::max(worst, oracle::rel_error(lhs, rhs, 1e-12));
    }
  const double t = seconds_since(t0);
  return {worst < 1e-5 && t < 5.0, fmt("max rel diff %.3e over 100 instances, %.2f s", worst, t)};
}

Outcome transmittance_reconstruction() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  RayBundle<float> b;
  b.origins = {{0, 0, -1}, {0.2f, -0.3f, -1}};
  b.directions = {{0, 0, 1}, {0, 0, 1}};
  b.near = 0.0f;
  b.far = 2.0f;
  // Constant opacity at sigma * delta in {0.01, 0.1, 1}.
  for (int R : {16, 64, 256, 512})
    for (double sd : {0.01, 0.1, 1.0}) {
      RadianceField<float> f;
      f.grid = HashStructure<float>::voxel(4, 4, 4, 1);
      f.direnc = DirEncConfig{0, false};
      const RaySamples<float> s(b, R);
      f.sigma_mlp.output_activation = Activation::identity;
      f.sigma_mlp.layers.push_back({1, 1, {0.0f}, {float(sd / s.delta())}});
      f.feature_mlp.output_activation = Activation::sigmoid;
      f.feature_mlp.layers.push_back({1, 1, {1.0f}, {0.0f}});
      const auto out = render_forward_fused(f, s);
      worst = std::max(worst, reconstruct_transmittance_check(f, s, std::span<const double>(out.final_transmittance)));
    }
  // Random decoded opacities, clamped so that sigma * delta <= 1.
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto f = gradcheck::random_field(seed % 2 ? StructureKind::triplane : StructureKind::voxel, 8, 4, 3, 16, 3, seed)
                 .cast<float>();
    f.sigma_mlp.layers.back().bias[0] += 20.0f;
    const auto s = to_float(gradcheck::random_rays(16, 512, seed + 9));
    RenderOptions opt;
    opt.sigma_max = 1.0 / s.delta();
    const auto out = render_forward_fused(f, s, opt);
    worst = std::max(worst,
                     reconstruct_transmittance_check(f, s, std::span<const double>(out.final_transmittance), opt));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-5 && t < 5.0, fmt("max |T_fw - T_rec| %.3e for R <= 512, %.2f s", worst, t)};
}

// Sum of layer widths after the input: everything one decoder evaluation produces.
int footprint(const MlpShape& s) { return std::accumulate(s.widths.begin() + 1, s.widths.end(), 0); }

Outcome memory_contract() {
  const auto t0 = Clock::now();
  const auto spec = bench::bench_spec_from_json(io::read_file(kConfigs + "/bench_renderer.json"));
  const auto rows = bench::run_bench(spec);
  auto bytes = [&](int v, bench::Mode m, bool bw) -> double {
    for (const auto& r : rows)
      if (r.sweep_value == v && r.mode == m && r.backward == bw && !r.refused) return double(r.scratch_bytes);
    throw Error("missing bench row");
  };
  bool ok = spec.sweep == bench::Sweep::samples;
  const int lo = spec.values.front(), hi = spec.values.back();
  for (bool bw : {false, true})
    for (int v : spec.values) ok = ok && bytes(v, bench::Mode::fused, bw) == bytes(lo, bench::Mode::fused, bw);

  const double M = double(spec.image_size) * spec.image_size;
  const int E = DirEncConfig{spec.direnc_frequencies, true}.length();
  const int acts = footprint(sigma_mlp_shape(spec.channels_k, spec.mlp_width, spec.mlp_layers)) +
                   footprint(feature_mlp_shape(spec.channels_k + E, spec.channels_c, spec.mlp_width, spec.mlp_layers));
  const double predicted = M * (spec.channels_k + acts) * 4.0;
  const double slope = (bytes(hi, bench::Mode::naive, false) - bytes(lo, bench::Mode::naive, false)) / double(hi - lo);
  const double slope_err = std::abs(slope - predicted) / predicted;
  ok = ok && slope_err < 0.10;

  const auto big = bench::naive_render_bytes(256ull * 256, 128, 6, 64);
  const auto lift = bench::dense_grid_bytes(128, 64);
  ok = ok && big == 12'884'901'888ull && std::abs(double(big) / 1e9 - 12.9) < 0.05 && lift == 536'870'912ull;
  const double t = seconds_since(t0);
  ok = ok && t < 60.0;
  std::ostringstream os;
  os << "fused fw/bw bytes " << std::uint64_t(bytes(lo, bench::Mode::fused, false)) << "/"
     << std::uint64_t(bytes(lo, bench::Mode::fused, true)) << " at R = ";
  for (int v : spec.values) os << v << ' ';
  os << fmt("; naive slope %.0f B/sample-step vs M(K+acts)4 = %.0f (%.1f%%)", slope, predicted, 100 * slope_err)
     << "; formulas " << big << " and " << lift << fmt(", %.2f s", t);
  return {ok, os.str()};
}

Outcome flop_contract() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  bool stable = true;
  for (auto kind : {StructureKind::voxel, StructureKind::triplane})
    for (int R : {32, 128}) {
      const auto f = gradcheck::random_field(kind, 16, 16, 3, 32, 3, R).cast<float>();
      const auto s = to_float(gradcheck::random_rays(64, R, 3));
      FlopCounter last_fw, last_bw;
      for (int rep = 0; rep < 2; ++rep) {
        FlopCounter fw, bw;
        ExecContext cf, cb;
        cf.flops = &fw;
        cb.flops = &bw;
        const auto out = render_forward_fused(f, s, {}, cf);
        const std::vector<float> up(out.features.size(), 1.0f);
        render_backward_fused(f, s, std::span<const float>(up), std::span<const double>(out.final_transmittance), {},
                              cb);
        if (rep == 1)
          stable = stable && fw.mlp_forward == last_fw.mlp_forward && bw.mlp_forward == last_bw.mlp_forward &&
                   bw.mlp_backward == last_bw.mlp_backward;
        last_fw = fw;
        last_bw = bw;
      }
      worst = std::max(worst, double(last_bw.mlp_forward) / double(last_fw.mlp_forward));
    }
  const double t = seconds_since(t0);
  return {worst <= 1.5 && stable && t < 60.0,
          fmt("backward recompute / forward MLP FLOPs max %.3f, counters ", worst) + (stable ? "stable" : "UNSTABLE") +
              fmt(", %.2f s", t)};
}

Outcome scene_fit() {
  const auto t0 = Clock::now();
  const auto cfg = fit_config_from_json(io::read_file(kConfigs + "/fit_sphere.json"));
  const auto golden = nlohmann::json::parse(io::read_file(kConfigs + "/fit_golden.json"));
  const double threshold = golden.at("min_test_psnr").get<double>();
  const bool setup = cfg.image_size == 64 && cfg.train_views == 20 && cfg.test_views == 4 &&
                     cfg.kind == StructureKind::voxel && cfg.grid_resolution == 32 && cfg.samples == 64 &&
                     cfg.iterations == 2000;
  const auto r = fit(cfg);
  const double t = seconds_since(t0);
  std::string per_view;
  for (double p : r.report.test_psnr) per_view += fmt(" %.2f", p);
  return {setup && r.report.mean_test_psnr >= threshold && t < 900.0,
          fmt("held-out PSNR %.2f dB (threshold %.1f), %.0f s; per view", r.report.mean_test_psnr, threshold, t) +
              per_view};
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int rc = cli::run_cli(args, out, err);
  if (rc != 0) std::fprintf(stderr, "cli failed (%d): %s\n", rc, err.str().c_str());
  return rc;
}

Outcome determinism() {
  const auto t0 = Clock::now();
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  // Kernels: repeated and across thread counts.
  {
    const auto f = gradcheck::random_field(StructureKind::triplane, 16, 8, 3, 16, 3, 5).cast<float>();
    const auto s = to_float(gradcheck::random_rays(200, 64, 6));
    std::vector<float> feat[2];
    std::vector<float> grads[2];
    for (int t = 0; t < 2; ++t) {
      set_num_threads(t == 0 ? 1 : 3);
      const auto out = render_forward_fused(f, s);
      const std::vector<float> up(out.features.size(), 0.25f);
      auto g = render_backward_fused(f, s, std::span<const float>(up), std::span<const double>(out.final_transmittance));
      feat[t] = out.features;
      for (int p = 0; p < 3; ++p) {
        const auto v = flat(g, p);
        grads[t].insert(grads[t].end(), v.begin(), v.end());
      }
    }
    set_num_threads(0);
    check(feat[0] == feat[1], "render forward");
    check(grads[0] == grads[1], "render backward");
  }

  // Splatting with permuted rays, with and without a decoder.
  {
    const auto s = to_float(gradcheck::random_rays(128, 32, 7));
    std::mt19937 rng(8);
    std::uniform_real_distribution<float> u(-1, 1);
    std::vector<float> feat(128 * 3);
    for (auto& v : feat) v = u(rng);
    std::vector<std::size_t> perm(128);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto sp = s.permuted(perm);
    std::vector<float> fp(feat.size());
    for (std::size_t i = 0; i < 128; ++i) std::copy_n(feat.begin() + perm[i] * 3, 3, fp.begin() + i * 3);
    const auto mlp = init_mlp<float>(splat_mlp_shape(3 + DirEncConfig{2, true}.length(), 4, 16, 2), 9);
    for (bool decoder : {false, true}) {
      const GridShape target{StructureKind::voxel, 12, 12, 12, decoder ? 4 : 3};
      SplatInputs<float> a{feat, 3, s}, b{fp, 3, sp};
      if (decoder) {
        a.splat_mlp = b.splat_mlp = &mlp;
        a.direnc = b.direnc = DirEncConfig{2, true};
      }
      const auto ra = splat_forward_fused(a, target), rb = splat_forward_fused(b, target);
      check(std::equal(ra.normalized.data().begin(), ra.normalized.data().end(), rb.normalized.data().begin()),
            "splat forward under permutation");
      HashStructure<float> g(target);
      for (auto& v : g.data()) v = u(rng);
      const auto ga = splat_backward_fused(a, target, g, ra.theta_weight);
      const auto gb = splat_backward_fused(b, target, g, rb.theta_weight);
      bool same = true;
      for (std::size_t i = 0; i < 128; ++i)
        for (int c = 0; c < 3; ++c) same = same && ga.features[perm[i] * 3 + c] == gb.features[i * 3 + c];
      check(same, "splat backward under permutation");
    }
  }

  // Commands.
  const auto dir = fs::temp_directory_path() / "lightplane_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const std::string& n) { return (dir / n).string(); };
  {
    auto grid = HashStructure<float>::triplane(12, 12, 12, 4);
    std::mt19937 rng(10);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto& v : grid.data()) v = u(rng);
    io::write_file_atomic(p("grid.lpg"), io::encode_grid(grid));
    io::write_file_atomic(p("mlp.lpm"), io::encode_mlps({init_mlp<float>(sigma_mlp_shape(4, 16, 2), 1),
                                                         init_mlp<float>(feature_mlp_shape(4 + 15, 3, 16, 2), 2)}));
    io::write_file_atomic(p("cam.json"),
                          io::camera_to_json(look_at({0.5, 1.0, -2.2}, {0, 0, 0}, {0, 1, 0}, 16, 16, 19.2, 1.0, 3.8)));
    for (const char* name : {"r1.lpi", "r2.lpi"})
      check(cli({"--seed", "3", "--deterministic", "render", "--grid", p("grid.lpg"), "--mlp", p("mlp.lpm"),
                 "--camera", p("cam.json"), "--samples", "48", "--jitter", "--out", p(name)}) == 0,
            "render command");
    check(io::read_file(p("r1.lpi")) == io::read_file(p("r2.lpi")), "render command output");
    for (const char* name : {"s1.lpg", "s2.lpg"})
      check(cli({"--seed", "3", "splat", "--features", p("r1.lpi"), "--camera", p("cam.json"), "--grid-out", p(name),
                 "--resolution", "12"}) == 0,
            "splat command");
    check(io::read_file(p("s1.lpg")) == io::read_file(p("s2.lpg")), "splat command output");

    io::write_file_atomic(p("fit.json"), R"({"image_size": 16, "samples": 16, "oracle_samples": 64,
      "iterations": 20, "train_views": 4, "test_views": 1, "grid_resolution": 8})");
    for (const char* name : {"f1", "f2"})
      check(cli({"--seed", "4", "fit", "--config", p("fit.json"), "--out", p(name)}) == 0, "fit command");
    auto curve = [&](const std::string& d) {
      return nlohmann::json::parse(io::read_file(p(d) + "/report.json")).at("loss_curve").dump();
    };
    check(curve("f1") == curve("f2"), "fit loss curve");
    check(io::read_file(p("f1") + "/grid.lpg") == io::read_file(p("f2") + "/grid.lpg"), "fit grid");
    check(io::read_file(p("f1") + "/test_0.ppm") == io::read_file(p("f2") + "/test_0.ppm"), "fit render");

    io::write_file_atomic(p("bench.json"), R"({"sweep": "R", "values": [4, 8, 16], "image_size": 4,
      "grid_resolution": 8, "K": 4, "mlp_width": 8, "mlp_layers": 2})");
    for (const char* name : {"b1.csv", "b2.csv"})
      check(cli({"--seed", "4", "bench", "--spec", p("bench.json"), "--out", p(name)}) == 0, "bench command");
    // Timings differ run to run; counters may not.
    auto counters = [&](const std::string& f) {
      std::istringstream in(io::read_file(p(f)));
      std::string line, all;
      while (std::getline(in, line)) {
        int commas = 0;
        std::size_t cut = line.size();
        for (std::size_t i = 0; i < line.size(); ++i)
          if (line[i] == ',' && ++commas == 5) cut = i;
        all += line.substr(0, cut) + "\n";
      }
      return all;
    };
    check(counters("b1.csv") == counters("b2.csv"), "bench counters");

    std::ostringstream o1, o2, e;
    cli::run_cli({"--seed", "2", "gradcheck", "--config", kConfigs + "/gradcheck_default.json"}, o1, e);
    cli::run_cli({"--seed", "2", "gradcheck", "--config", kConfigs + "/gradcheck_default.json"}, o2, e);
    check(o1.str() == o2.str(), "gradcheck report");
  }
  fs::remove_all(dir);
  const double t = seconds_since(t0);
  std::string detail = failures.empty() ? "kernels, permuted splats and all five commands bit-identical"
                                        : "differs: ";
  for (const auto& f : failures) detail += f + "; ";
  return {failures.empty(), detail + fmt(", %.1f s", t)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"forward equivalence", forward_equivalence},
      {"backward equivalence", backward_equivalence},
      {"finite differences", finite_differences},
      {"adjointness", adjointness},
      {"transmittance reconstruction", transmittance_reconstruction},
      {"memory contract", memory_contract},
      {"flop contract", flop_contract},
      {"scene fit", scene_fit},
      {"determinism", determinism},
  };
  // Optional argument: a comma-free list of criterion numbers to run, e.g. "1279".
  const std::string only = argc > 1 ? argv[1] : "";
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && only.find(char('1' + i)) == std::string::npos) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %zu (%s): %s  %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
