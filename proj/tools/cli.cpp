#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>

#include "CLI11.hpp"
#include "lightplane/bench.hpp"
#include "lightplane/gradcheck.hpp"
#include "lightplane/io.hpp"
#include "lightplane/renderer.hpp"
#include "lightplane/scenefit.hpp"
#include "lightplane/splatter.hpp"

namespace lightplane::cli {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  bool deterministic = true;

  ExecContext context() const {
    ExecContext ctx;
    ctx.policy.deterministic = deterministic;
    return ctx;
  }
};

ContractConfig contract_from(double a, const std::string& mode) {
  ContractConfig c;
  if (a > 0) {
    c.enabled = true;
    c.scale_a = float(a);
    if (mode == "radial") c.mode = ContractMode::radial;
    else if (mode != "per_axis") throw FormatError("contract mode must be per_axis or radial");
  }
  c.validate();
  return c;
}

// The feature decoder's input is [grid feature | direction encoding]; the
// encoding's layout follows from its length.
DirEncConfig direnc_for_length(int E) {
  if (E < 0) throw DimensionError("feature decoder input is narrower than the grid features");
  if (E % 6 == 3) return {(E - 3) / 6, true};
  if (E % 6 == 0) return {E / 6, false};
  throw DimensionError("feature decoder input does not match any direction encoding");
}

bool has_ppm_extension(const fs::path& p) { return p.extension() == ".ppm" || p.extension() == ".PPM"; }

int cmd_render(const Globals& g, const std::string& grid_path, const std::string& mlp_path,
               const std::string& camera_path, int samples, const std::string& out_path,
               double contract_a, const std::string& contract_mode, bool jitter, std::ostream& out) {
  RadianceField<float> field;
  field.grid = io::decode_grid(io::read_file(grid_path));
  auto mlps = io::decode_mlps(io::read_file(mlp_path));
  if (mlps.size() != 2) throw DimensionError("expected an opacity and a feature decoder record");
  field.sigma_mlp = std::move(mlps[0]);
  field.feature_mlp = std::move(mlps[1]);
  field.direnc = direnc_for_length(field.feature_mlp.in_dim() - field.grid.channels());
  field.validate();
  const auto cam = io::camera_from_json(io::read_file(camera_path));
  cam.validate();
  if (samples < 1) throw DomainError("--samples must be at least 1");

  RaySamples<float> rs(rays_from_camera<float>(cam), samples, contract_from(contract_a, contract_mode));
  if (jitter) rs.set_jitter(g.seed);
  const auto ctx = g.context();
  const auto res = render_forward_fused(field, rs, {}, ctx);
  const auto img = io::image_from_rays(std::span<const float>(res.features), cam.width, cam.height,
                                       field.channels());
  if (has_ppm_extension(out_path)) {
    io::write_file_atomic(out_path, io::encode_ppm(img));
  } else {
    io::write_file_atomic(out_path, io::encode_lpi(img));
  }
  double sum = 0.0, lo = 1.0, hi = 0.0;
  for (double t : res.final_transmittance) {
    sum += t;
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  char line[128];
  std::snprintf(line, sizeof line, "mean_T_R %.6f\nmin_T_R %.6f\nmax_T_R %.6f\n",
                sum / double(res.final_transmittance.size()), lo, hi);
  out << line;
  return kOk;
}

int cmd_splat(const Globals& g, const std::string& features_path, const std::string& camera_path,
              const std::string& grid_out, int samples, int resolution, const std::string& kind,
              double contract_a, const std::string& contract_mode, std::ostream& out) {
  const auto img = io::decode_lpi(io::read_file(features_path));
  const auto cam = io::camera_from_json(io::read_file(camera_path));
  cam.validate();
  if (img.width != cam.width || img.height != cam.height)
    throw DimensionError("feature image size does not match the camera");
  if (samples < 1) throw DomainError("--samples must be at least 1");
  if (resolution < 2) throw DomainError("--resolution must be at least 2");
  StructureKind k;
  if (kind == "voxel") k = StructureKind::voxel;
  else if (kind == "triplane") k = StructureKind::triplane;
  else throw FormatError("--kind must be voxel or triplane");

  const RaySamples<float> rs(rays_from_camera<float>(cam), samples,
                             contract_from(contract_a, contract_mode));
  const auto features = io::rays_from_image(img);
  const SplatInputs<float> inputs{features, img.channels, rs};
  const GridShape target{k, resolution, resolution, resolution, img.channels};
  const auto res = splat_forward_fused(inputs, target, g.context());
  io::write_file_atomic(grid_out, io::encode_grid(res.normalized));
  std::size_t touched = 0;
  for (float w : res.theta_weight.data()) touched += w > 0.0f;
  out << "cells_touched " << touched << " of " << res.theta_weight.data().size() << "\n";
  return kOk;
}

int cmd_fit(const Globals& g, const std::string& config_path, const std::string& out_dir,
            std::ostream& out) {
  auto config = fit_config_from_json(io::read_file(config_path));
  if (g.seed_given) config.seed = g.seed;
  const auto result = fit(config, g.context());
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  io::write_file_atomic(dir / "report.json", result.report.to_json());
  io::write_file_atomic(dir / "grid.lpg", io::encode_grid(result.field.grid));
  io::write_file_atomic(dir / "mlp.lpm",
                        io::encode_mlps({result.field.sigma_mlp, result.field.feature_mlp}));
  for (std::size_t v = 0; v < result.test_renders.size(); ++v) {
    const auto stem = "test_" + std::to_string(v);
    io::write_file_atomic(dir / (stem + ".ppm"), io::encode_ppm(result.test_renders[v]));
    io::write_file_atomic(dir / (stem + "_target.ppm"), io::encode_ppm(result.test_targets[v]));
    io::write_file_atomic(dir / (stem + "_camera.json"), io::camera_to_json(result.test_cameras[v]));
  }
  char line[96];
  std::snprintf(line, sizeof line, "mean_test_psnr %.3f\nwall_seconds %.1f\n",
                result.report.mean_test_psnr, result.report.wall_seconds);
  out << line;
  return kOk;
}

int cmd_bench(const Globals& g, const std::string& spec_path, const std::string& csv_path,
              std::ostream& out) {
  auto spec = bench::bench_spec_from_json(io::read_file(spec_path));
  if (g.seed_given) spec.seed = g.seed;
  const auto rows = bench::run_bench(spec, g.context().policy);
  io::write_file_atomic(csv_path, bench::to_csv(rows));
  out << "rows " << rows.size() << "\n";
  return kOk;
}

int cmd_gradcheck(const Globals& g, const std::string& config_path, std::ostream& out) {
  auto config = config_path.empty() ? gradcheck::GradcheckConfig{}
                                    : gradcheck::gradcheck_config_from_json(io::read_file(config_path));
  if (g.seed_given) config.seed = g.seed;
  const auto results = gradcheck::run_gradchecks(config);
  out << gradcheck::format_table(results, config.tolerance);
  for (const auto& r : results)
    if (!r.passed) return kFailure;
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Differentiable rendering and splatting over hashed 3D structures"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic component");
  app.add_option("--threads", g.threads, "Worker threads (default: LIGHTPLANE_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--deterministic,!--no-deterministic", g.deterministic,
               "Thread-count independent reductions (default on)");

  std::string grid, mlp, camera, out_path, contract_mode = "per_axis", features, grid_out, kind = "voxel",
                                           config, spec;
  int samples = 64, resolution = 32;
  double contract_a = 0.0;
  bool jitter = false;

  auto* render = app.add_subcommand("render", "Render a grid and decoders from a camera");
  render->add_option("--grid", grid, "LPG1 grid")->required();
  render->add_option("--mlp", mlp, "LPM1 file: opacity decoder, then feature decoder")->required();
  render->add_option("--camera", camera, "Camera JSON")->required();
  render->add_option("--samples", samples, "Intervals per ray")->required();
  render->add_option("--out", out_path, "Output image (.ppm for 8-bit RGB, otherwise LPI1)")->required();
  render->add_option("--contract", contract_a, "Enable coordinate contraction with scale a");
  render->add_option("--contract-mode", contract_mode, "per_axis or radial");
  render->add_flag("--jitter", jitter, "Seeded per-ray sample jitter");

  auto* splat = app.add_subcommand("splat", "Lift a feature image into a grid");
  splat->add_option("--features", features, "LPI1 feature image")->required();
  splat->add_option("--camera", camera, "Camera JSON")->required();
  splat->add_option("--grid-out", grid_out, "Output LPG1 grid")->required();
  splat->add_option("--samples", samples, "Intervals per ray");
  splat->add_option("--resolution", resolution, "Grid side length");
  splat->add_option("--kind", kind, "voxel or triplane");
  splat->add_option("--contract", contract_a, "Enable coordinate contraction with scale a");
  splat->add_option("--contract-mode", contract_mode, "per_axis or radial");

  auto* fitc = app.add_subcommand("fit", "Fit a grid and decoders to an analytic scene");
  fitc->add_option("--config", config, "Fit config JSON")->required();
  fitc->add_option("--out", out_path, "Output directory")->required();

  auto* benchc = app.add_subcommand("bench", "Memory, FLOP and timing sweep");
  benchc->add_option("--spec", spec, "Bench spec JSON")->required();
  benchc->add_option("--out", out_path, "Output CSV")->required();

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of the backward passes");
  grad->add_option("--config", config, "Gradcheck config JSON");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kParseError;
  }
  g.seed_given = app.count("--seed") > 0;
  if (app.count("--threads") == 0) {
    if (const char* env = std::getenv("LIGHTPLANE_THREADS")) {
      try {
        g.threads = std::stoi(env);
      } catch (const std::exception&) {
        err << "error: LIGHTPLANE_THREADS is not a number\n";
        return kParseError;
      }
    }
  }
  if (g.threads > 0) set_num_threads(g.threads);

  try {
    if (*render)
      return cmd_render(g, grid, mlp, camera, samples, out_path, contract_a, contract_mode, jitter, out);
    if (*splat)
      return cmd_splat(g, features, camera, grid_out, samples, resolution, kind, contract_a,
                       contract_mode, out);
    if (*fitc) return cmd_fit(g, config, out_path, out);
    if (*benchc) return cmd_bench(g, spec, out_path, out);
    if (*grad) return cmd_gradcheck(g, config, out);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kParseError;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kShapeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace lightplane::cli
