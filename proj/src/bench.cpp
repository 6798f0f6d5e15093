#include "lightplane/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"
#include "lightplane/reference.hpp"

namespace lightplane::bench {

void BenchSpec::validate() const {
  if (values.size() < 3) throw DomainError("a sweep needs at least 3 points");
  if (repetitions < 3) throw DomainError("at least 3 repetitions are required");
  if (modes.empty()) throw DomainError("no modes to run");
  for (int v : values)
    if (v <= 0) throw DomainError("sweep values must be positive");
  if (image_size <= 0 || samples <= 0 || views <= 0 || grid_resolution <= 1 || channels_k <= 0 ||
      channels_c <= 0 || mlp_width <= 0 || mlp_layers <= 0 || direnc_frequencies < 0)
    throw DomainError("bench sizes must be positive");
  if (sweep == Sweep::views && target != Target::splatter)
    throw DomainError("the view sweep applies to the splatter only");
}

BenchSpec bench_spec_from_json(const std::string& text) {
  BenchSpec s;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [key, v] : j.items()) {
      if (key == "target") {
        const auto t = v.get<std::string>();
        if (t == "renderer") s.target = Target::renderer;
        else if (t == "splatter") s.target = Target::splatter;
        else throw FormatError("target must be renderer or splatter");
      } else if (key == "sweep") {
        const auto t = v.get<std::string>();
        if (t == "image_size" || t == "M") s.sweep = Sweep::image_size;
        else if (t == "samples" || t == "R") s.sweep = Sweep::samples;
        else if (t == "views" || t == "N") s.sweep = Sweep::views;
        else throw FormatError("sweep must be image_size, samples or views");
      } else if (key == "values") s.values = v.get<std::vector<int>>();
      else if (key == "image_size") s.image_size = v.get<int>();
      else if (key == "samples") s.samples = v.get<int>();
      else if (key == "views") s.views = v.get<int>();
      else if (key == "kind") {
        const auto t = v.get<std::string>();
        if (t == "voxel") s.kind = StructureKind::voxel;
        else if (t == "triplane") s.kind = StructureKind::triplane;
        else throw FormatError("kind must be voxel or triplane");
      } else if (key == "grid_resolution") s.grid_resolution = v.get<int>();
      else if (key == "K") s.channels_k = v.get<int>();
      else if (key == "C") s.channels_c = v.get<int>();
      else if (key == "mlp_width") s.mlp_width = v.get<int>();
      else if (key == "mlp_layers") s.mlp_layers = v.get<int>();
      else if (key == "direnc_frequencies") s.direnc_frequencies = v.get<int>();
      else if (key == "repetitions") s.repetitions = v.get<int>();
      else if (key == "modes") {
        s.modes.clear();
        for (const auto& m : v.get<std::vector<std::string>>()) {
          if (m == "fused") s.modes.push_back(Mode::fused);
          else if (m == "naive") s.modes.push_back(Mode::naive);
          else throw FormatError("mode must be fused or naive");
        }
      } else if (key == "byte_budget") s.byte_budget = v.get<std::uint64_t>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw FormatError("unknown bench spec key: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bench spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Sizes {
  int image_size, samples, views;
};

Sizes sizes_for(const BenchSpec& s, int value) {
  Sizes z{s.image_size, s.samples, s.views};
  switch (s.sweep) {
    case Sweep::image_size: z.image_size = value; break;
    case Sweep::samples: z.samples = value; break;
    case Sweep::views: z.views = value; break;
  }
  return z;
}

// Rays from a sphere of radius 2 aimed at random points inside the unit cube.
RaySamples<float> random_samples(std::size_t M, int R, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  RayBundle<float> b;
  b.near = 0.8f;
  b.far = 3.2f;
  for (std::size_t i = 0; i < M; ++i) {
    Vec3<double> o{n(rng), n(rng), n(rng)};
    o = (2.0 / o.norm()) * o;
    const Vec3<double> aim{u(rng), u(rng), u(rng)};
    auto d = aim - o;
    d = (1.0 / d.norm()) * d;
    b.origins.push_back(o.cast<float>());
    b.directions.push_back(d.cast<float>());
  }
  return RaySamples<float>(std::move(b), R);
}

HashStructure<float> random_grid(const GridShape& shape, std::mt19937_64& rng) {
  HashStructure<float> g(shape);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  for (auto& v : g.data()) v = u(rng);
  return g;
}

struct Measure {
  std::uint64_t bytes = 0, flops = 0;
  std::vector<double> ms;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

BenchRow to_row(int value, Mode mode, bool backward, const Measure& m) {
  BenchRow r;
  r.sweep_value = value;
  r.mode = mode;
  r.backward = backward;
  r.scratch_bytes = m.bytes;
  r.flops = m.flops;
  r.time_ms_median = median(m.ms);
  r.time_ms_min = *std::min_element(m.ms.begin(), m.ms.end());
  return r;
}

// Records counters for one repetition, insisting they match earlier ones.
void record(Measure& m, int rep, const ScratchTracker& scratch, std::int64_t base,
            const FlopCounter& flops, double ms) {
  const auto bytes = std::uint64_t(scratch.peak() - base);
  if (rep == 0) {
    m.bytes = bytes;
    m.flops = flops.total();
  } else if (m.bytes != bytes || m.flops != flops.total()) {
    throw ContractError("bench counters differ between repetitions");
  }
  m.ms.push_back(ms);
}

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class Real>
double max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(double(a[i]) - double(b[i])));
  return d;
}

double max_abs(std::span<const float> a) {
  double m = 0.0;
  for (float v : a) m = std::max(m, std::abs(double(v)));
  return m;
}

void check_close(std::span<const float> fused, std::span<const float> naive, double rel,
                 const char* what) {
  const double scale = std::max(max_abs(naive), 1e-6);
  if (max_abs_diff(fused, naive) > rel * scale)
    throw ContractError(std::string("fused and naive disagree on ") + what);
}

std::vector<BenchRow> bench_renderer(const BenchSpec& spec, const ExecPolicy& timing) {
  std::vector<BenchRow> rows;
  for (int value : spec.values) {
    const auto z = sizes_for(spec, value);
    std::mt19937_64 rng(spec.seed);
    const int n = spec.grid_resolution;
    RadianceField<float> field;
    field.grid = random_grid({spec.kind, n, n, n, spec.channels_k}, rng);
    field.direnc = DirEncConfig{spec.direnc_frequencies, true};
    field.sigma_mlp =
        init_mlp<float>(sigma_mlp_shape(spec.channels_k, spec.mlp_width, spec.mlp_layers), spec.seed + 1);
    field.feature_mlp = init_mlp<float>(
        feature_mlp_shape(spec.channels_k + field.direnc.length(), spec.channels_c, spec.mlp_width,
                          spec.mlp_layers),
        spec.seed + 2);
    const std::size_t M = std::size_t(z.image_size) * z.image_size;
    const auto samples = random_samples(M, z.samples, rng);
    std::vector<float> upstream(M * spec.channels_c);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    for (auto& v : upstream) v = u(rng);

    std::vector<float> fused_out;
    RenderGrads<float> fused_grads;
    bool have_fused = false;
    for (Mode mode : spec.modes) {
      Measure fw, bw;
      if (mode == Mode::naive) {
        const auto predicted = std::uint64_t(M) * samples.points_per_ray() *
                                   reference::naive_render_bytes_per_sample(field) +
                               M * field.direnc.length() * sizeof(float);
        if (predicted > spec.byte_budget) {
          for (bool backward : {false, true}) {
            BenchRow r;
            r.sweep_value = value;
            r.mode = mode;
            r.backward = backward;
            r.refused = true;
            r.scratch_bytes = predicted;
            rows.push_back(r);
          }
          continue;
        }
      }
      for (int rep = 0; rep < spec.repetitions; ++rep) {
        // The first repetition runs deterministically so counters are reproducible.
        ScratchTracker scratch;
        FlopCounter ffw, fbw;
        ExecContext cfw{rep == 0 ? ExecPolicy{} : timing, &scratch, &ffw};
        ExecContext cbw{cfw.policy, &scratch, &fbw};
        if (mode == Mode::fused) {
          auto t0 = Clock::now();
          auto out = render_forward_fused(field, samples, {}, cfw);
          record(fw, rep, scratch, 0, ffw, ms_since(t0));
          scratch.reset_peak();
          const auto base = scratch.current();
          t0 = Clock::now();
          auto g = render_backward_fused(field, samples, std::span<const float>(upstream),
                                         std::span<const double>(out.final_transmittance), {}, cbw);
          record(bw, rep, scratch, base, fbw, ms_since(t0));
          if (rep == 0) {
            fused_out = out.features;
            fused_grads = std::move(g);
            have_fused = true;
          }
        } else {
          auto t0 = Clock::now();
          auto fwd = reference::render_forward_naive(field, samples, {}, cfw);
          record(fw, rep, scratch, 0, ffw, ms_since(t0));
          scratch.reset_peak();
          t0 = Clock::now();
          auto g = reference::render_backward_naive(field, samples, fwd, std::span<const float>(upstream),
                                                    {}, cbw);
          // Backward scratch includes the record it consumes.
          record(bw, rep, scratch, 0, fbw, ms_since(t0));
          if (rep == 0 && have_fused) {
            check_close(fused_out, fwd.output.features, 1e-4, "rendered features");
            check_close(fused_grads.grid.data(), g.grid.data(), 1e-3, "grid gradients");
          }
        }
      }
      rows.push_back(to_row(value, mode, false, fw));
      rows.push_back(to_row(value, mode, true, bw));
    }
  }
  return rows;
}

std::vector<BenchRow> bench_splatter(const BenchSpec& spec, const ExecPolicy& timing) {
  std::vector<BenchRow> rows;
  for (int value : spec.values) {
    const auto z = sizes_for(spec, value);
    std::mt19937_64 rng(spec.seed);
    const int n = spec.grid_resolution;
    const GridShape target{spec.kind, n, n, n, spec.channels_k};
    const std::size_t M = std::size_t(z.views) * z.image_size * z.image_size;
    const auto samples = random_samples(M, z.samples, rng);
    std::vector<float> features(M * spec.channels_c);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    for (auto& v : features) v = u(rng);
    const DirEncConfig enc{spec.direnc_frequencies, true};
    const auto mlp = init_mlp<float>(
        splat_mlp_shape(spec.channels_c + enc.length(), spec.channels_k, spec.mlp_width, spec.mlp_layers),
        spec.seed + 3);
    const SplatInputs<float> inputs{features, spec.channels_c, samples, nullptr, &mlp, enc, false};
    auto grad_out = random_grid(target, rng);

    SplatResult<float> fused_res;
    std::vector<float> fused_grad;
    bool have_fused = false;
    for (Mode mode : spec.modes) {
      Measure fw, bw;
      if (mode == Mode::naive) {
        const auto predicted = std::uint64_t(M) * samples.points_per_ray() *
                               reference::naive_splat_bytes_per_sample(inputs, target);
        if (predicted > spec.byte_budget) {
          for (bool backward : {false, true}) {
            BenchRow r;
            r.sweep_value = value;
            r.mode = mode;
            r.backward = backward;
            r.refused = true;
            r.scratch_bytes = predicted;
            rows.push_back(r);
          }
          continue;
        }
      }
      for (int rep = 0; rep < spec.repetitions; ++rep) {
        ScratchTracker scratch;
        FlopCounter ffw, fbw;
        ExecContext cfw{rep == 0 ? ExecPolicy{} : timing, &scratch, &ffw};
        ExecContext cbw{cfw.policy, &scratch, &fbw};
        if (mode == Mode::fused) {
          auto t0 = Clock::now();
          auto res = splat_forward_fused(inputs, target, cfw);
          record(fw, rep, scratch, 0, ffw, ms_since(t0));
          scratch.reset_peak();
          const auto base = scratch.current();
          t0 = Clock::now();
          auto g = splat_backward_fused(inputs, target, grad_out, res.theta_weight, cbw);
          record(bw, rep, scratch, base, fbw, ms_since(t0));
          if (rep == 0) {
            fused_res = std::move(res);
            fused_grad = std::move(g.features);
            have_fused = true;
          }
        } else {
          auto t0 = Clock::now();
          auto fwd = reference::splat_forward_naive(inputs, target, cfw);
          record(fw, rep, scratch, 0, ffw, ms_since(t0));
          scratch.reset_peak();
          t0 = Clock::now();
          auto g = reference::splat_backward_naive(inputs, target, fwd, grad_out, cbw);
          record(bw, rep, scratch, 0, fbw, ms_since(t0));
          if (rep == 0 && have_fused) {
            check_close(fused_res.theta.data(), fwd.result.theta.data(), 1e-4, "splatted features");
            check_close(fused_grad, g.features, 1e-3, "feature gradients");
          }
        }
      }
      rows.push_back(to_row(value, mode, false, fw));
      rows.push_back(to_row(value, mode, true, bw));
    }
  }
  return rows;
}

}  // namespace

std::vector<BenchRow> run_bench(const BenchSpec& spec, const ExecPolicy& timing_policy) {
  spec.validate();
  return spec.target == Target::renderer ? bench_renderer(spec, timing_policy)
                                         : bench_splatter(spec, timing_policy);
}

std::string to_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "sweep,mode,pass,scratch_bytes,flops,time_ms_median,time_ms_min\n";
  for (const auto& r : rows) {
    os << r.sweep_value << ',' << (r.mode == Mode::fused ? "fused" : "naive") << ','
       << (r.backward ? "bw" : "fw") << ',' << r.scratch_bytes << ',';
    if (r.refused) {
      os << "refused,refused,refused\n";
    } else {
      os << r.flops << ',' << r.time_ms_median << ',' << r.time_ms_min << '\n';
    }
  }
  return os.str();
}

}  // namespace lightplane::bench
