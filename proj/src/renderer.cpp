#include "lightplane/renderer.hpp"

#include <cmath>
#include <limits>

#include "parallel.hpp"

namespace lightplane {

namespace {

// Transmittance never drops below this, so the reverse reconstruction
// T_{q-1} = T_q * exp(delta * sigma_q) always starts from a positive value.
constexpr double kMinTransmittance = std::numeric_limits<double>::min();

// Clamped opacity and whether the clamp passes gradients.
template <class Real>
std::pair<Real, bool> clamp_sigma(Real raw, double sigma_max) {
  if (!(raw >= Real(0))) return {Real(0), false};
  if (double(raw) > sigma_max) return {static_cast<Real>(sigma_max), false};
  return {raw, true};
}

// The feature decoder's input is [feature | direnc]; the direction part is
// constant along a ray, so its first-layer product is formed once per ray.
template <class Real>
struct RayWorkspace {
  TrackedBuffer<Real> decoder_input;  // [feature (K) | direnc (E)]
  TrackedBuffer<Real> accum;          // C
  TrackedBuffer<Real> grad_input;     // K
  TrackedBuffer<Real> grad_feature;   // K
  TrackedBuffer<Real> upstream;       // C
  TrackedBuffer<Real> partial;        // feature decoder first layer width
  TrackedBuffer<Real> grad_partial;
  MlpTape<Real> sigma_tape;
  MlpTape<Real> feature_tape;
  FlopCounter flops;

  RayWorkspace(const RadianceField<Real>& f, ScratchTracker* tr)
      : decoder_input(f.feature_mlp.in_dim(), tr),
        accum(f.channels(), tr),
        grad_input(f.grid.channels(), tr),
        grad_feature(f.grid.channels(), tr),
        upstream(f.channels(), tr),
        partial(f.feature_mlp.layers.front().out, tr),
        grad_partial(f.feature_mlp.layers.front().out, tr),
        sigma_tape(f.sigma_mlp, tr),
        feature_tape(f.feature_mlp, tr) {}

  std::size_t bytes() const {
    return decoder_input.bytes() + accum.bytes() + grad_input.bytes() + grad_feature.bytes() +
           upstream.bytes() + partial.bytes() + grad_partial.bytes() + sigma_tape.bytes() +
           feature_tape.bytes();
  }
};

template <class Real>
std::size_t grads_bytes(const RadianceField<Real>& f) {
  return (f.grid.size() + f.sigma_mlp.param_count() + f.feature_mlp.param_count()) * sizeof(Real);
}

}  // namespace

template <class Real>
void RadianceField<Real>::validate() const {
  sigma_mlp.validate();
  feature_mlp.validate();
  if (sigma_mlp.in_dim() != grid.channels())
    throw DimensionError("opacity decoder input != grid channels");
  if (sigma_mlp.out_dim() != 1) throw DimensionError("opacity decoder must output one value");
  if (feature_mlp.in_dim() != grid.channels() + direnc.length())
    throw DimensionError("feature decoder input != grid channels + direction encoding");
}

template <class Real>
RenderGrads<Real>& RenderGrads<Real>::operator+=(const RenderGrads& o) {
  if (grid.shape() != o.grid.shape()) throw DimensionError("gradient grid shape mismatch");
  auto a = grid.data();
  auto b = o.grid.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  sigma_mlp += o.sigma_mlp;
  feature_mlp += o.feature_mlp;
  return *this;
}

template <class Real>
std::size_t fused_render_workspace_bytes(const RadianceField<Real>& field) {
  return RayWorkspace<Real>(field, nullptr).bytes();
}

template <class Real>
RenderOutput<Real> render_forward_fused(const RadianceField<Real>& field,
                                        const RaySamples<Real>& samples,
                                        const RenderOptions& options, const ExecContext& ctx) {
  field.validate();
  const std::size_t M = samples.num_rays();
  const int C = field.channels();
  const int K = field.grid.channels();
  const int E = field.direnc.length();
  const int R = samples.intervals();
  const double delta = samples.delta();
  const GridShape& shape = field.grid.shape();
  const auto grid = field.grid.data();

  RenderOutput<Real> out;
  out.num_rays = M;
  out.channels = C;
  out.features.assign(M * C, Real(0));
  out.final_transmittance.assign(M, 1.0);
  if (options.expected_depth) out.expected_depth.assign(M, Real(0));

  struct State {
    RayWorkspace<Real> ws;
  };
  auto state = detail::parallel_reduce(
      M, ctx.policy, [&] { return State{RayWorkspace<Real>(field, ctx.scratch)}; },
      [&](State& st, std::size_t begin, std::size_t end) {
        auto& ws = st.ws;
        Real* in = ws.decoder_input.data();
        const std::span<const Real> sigma_in(in, std::size_t(K));
        const std::span<const Real> tail(in + K, std::size_t(E));
        const std::span<Real> partial(ws.partial.data(), ws.partial.size());
        for (std::size_t i = begin; i < end; ++i) {
          direnc(samples.direction(i), field.direnc, std::span<Real>(in + K, std::size_t(E)));
          mlp_prepare_tail(field.feature_mlp, tail, partial, &ws.flops);
          std::fill(ws.accum.begin(), ws.accum.end(), Real(0));
          double T = 1.0;
          double depth = 0.0;
          for (int j = 0; j <= R; ++j) {
            const auto taps = compute_taps(shape, samples.point(i, j));
            gather_taps(taps, grid, K, in);
            ws.flops.interp += std::uint64_t(taps.count) * K;
            mlp_forward_tape(field.sigma_mlp, sigma_in, ws.sigma_tape, &ws.flops);
            const Real sigma = clamp_sigma(ws.sigma_tape.output()[0], options.sigma_max).first;
            const double T_prev = T;
            T = std::max(T * std::exp(-delta * double(sigma)), kMinTransmittance);
            if (j == 0) continue;
            mlp_forward_tape_head(field.feature_mlp, sigma_in, std::span<const Real>(partial), ws.feature_tape,
                                  &ws.flops);
            const auto fv = ws.feature_tape.output();
            const Real w = static_cast<Real>(T_prev - T);
            for (int c = 0; c < C; ++c) ws.accum[c] += w * fv[c];
            depth += (T_prev - T) * double(samples.t(i, j));
          }
          std::copy(ws.accum.begin(), ws.accum.end(), out.features.begin() + i * C);
          out.final_transmittance[i] = T;
          if (options.expected_depth) out.expected_depth[i] = static_cast<Real>(depth);
        }
      },
      [](State& into, State& from) { into.ws.flops += from.ws.flops; });
  if (ctx.flops) *ctx.flops += state.ws.flops;
  return out;
}

template <class Real>
RenderGrads<Real> render_backward_fused(const RadianceField<Real>& field,
                                        const RaySamples<Real>& samples,
                                        std::span<const Real> upstream,
                                        std::span<const double> final_transmittance,
                                        const RenderOptions& options, const ExecContext& ctx) {
  field.validate();
  const std::size_t M = samples.num_rays();
  const int C = field.channels();
  const int K = field.grid.channels();
  const int E = field.direnc.length();
  const int R = samples.intervals();
  const double delta = samples.delta();
  const GridShape& shape = field.grid.shape();
  const auto grid = field.grid.data();

  if (upstream.size() != M * C) throw DimensionError("upstream gradient must be num_rays x C");
  if (final_transmittance.size() != M)
    throw ContractError("cached final transmittance missing or of the wrong length");
  for (double t : final_transmittance)
    if (!(t > 0.0 && t <= 1.0))
      throw ContractError("cached final transmittance outside (0, 1]");

  struct State {
    RayWorkspace<Real> ws;
    RenderGrads<Real> grads;
    ScratchReservation reservation;
  };
  auto state = detail::parallel_reduce(
      M, ctx.policy,
      [&] {
        return State{RayWorkspace<Real>(field, ctx.scratch), RenderGrads<Real>::zeros_like(field),
                     ScratchReservation(ctx.scratch, grads_bytes(field))};
      },
      [&](State& st, std::size_t begin, std::size_t end) {
        auto& ws = st.ws;
        auto& g = st.grads;
        Real* in = ws.decoder_input.data();
        const std::span<const Real> sigma_in(in, std::size_t(K));
        const std::span<const Real> tail(in + K, std::size_t(E));
        const std::span<Real> partial(ws.partial.data(), ws.partial.size());
        const std::span<Real> grad_partial(ws.grad_partial.data(), ws.grad_partial.size());
        const std::span<Real> grad_in(ws.grad_input.data(), std::size_t(K));
        auto grad_grid = g.grid.data();
        for (std::size_t i = begin; i < end; ++i) {
          const Real* p = upstream.data() + i * C;
          direnc(samples.direction(i), field.direnc, std::span<Real>(in + K, std::size_t(E)));
          mlp_prepare_tail(field.feature_mlp, tail, partial, &ws.flops);
          std::fill(grad_partial.begin(), grad_partial.end(), Real(0));
          double T = final_transmittance[i];
          double suffix = 0.0;  // sum_{j > q} (T_{j-1} - T_j) * a_j
          for (int q = R; q >= 0; --q) {
            const auto taps = compute_taps(shape, samples.point(i, q));
            gather_taps(taps, grid, K, in);
            ws.flops.interp += std::uint64_t(taps.count) * K;
            mlp_forward_tape(field.sigma_mlp, sigma_in, ws.sigma_tape, &ws.flops);
            const auto [sigma, passes] = clamp_sigma(ws.sigma_tape.output()[0], options.sigma_max);
            const double T_q = T;
            const double T_prev = T_q * std::exp(delta * double(sigma));

            std::fill(ws.grad_feature.begin(), ws.grad_feature.end(), Real(0));
            double dsigma;
            if (q >= 1) {
              mlp_forward_tape_head(field.feature_mlp, sigma_in, std::span<const Real>(partial), ws.feature_tape,
                                  &ws.flops);
              const auto fv = ws.feature_tape.output();
              double a = 0.0;
              for (int c = 0; c < C; ++c) a += double(p[c]) * double(fv[c]);
              const double w = T_prev - T_q;
              // A zero visibility weight contributes exactly nothing here.
              if (w != 0.0) {
                for (int c = 0; c < C; ++c) ws.upstream[c] = static_cast<Real>(w * double(p[c]));
                mlp_backward_tape_head(field.feature_mlp, sigma_in, ws.feature_tape,
                                       std::span<const Real>(ws.upstream.data(), std::size_t(C)),
                                       grad_in, &g.feature_mlp, grad_partial, &ws.flops);
                for (int k = 0; k < K; ++k) ws.grad_feature[k] += ws.grad_input[k];
              }
              dsigma = -delta * (suffix - T_q * a);
              suffix += w * a;
            } else {
              dsigma = -delta * suffix;
            }
            if (passes) {
              const Real up = static_cast<Real>(dsigma);
              mlp_backward_tape(field.sigma_mlp, sigma_in, ws.sigma_tape,
                                std::span<const Real>(&up, 1), grad_in, &g.sigma_mlp, &ws.flops);
              for (int k = 0; k < K; ++k) ws.grad_feature[k] += ws.grad_input[k];
            }
            scatter_taps(taps, grad_grid, K, ws.grad_feature.data(), Real(1));
            ws.flops.interp += std::uint64_t(taps.count) * K;
            T = std::max(T_prev, kMinTransmittance);
          }
          mlp_tail_backward(field.feature_mlp, tail, std::span<const Real>(grad_partial),
                            g.feature_mlp, &ws.flops);
        }
      },
      [](State& into, State& from) {
        into.grads += from.grads;
        into.ws.flops += from.ws.flops;
      });
  if (ctx.flops) *ctx.flops += state.ws.flops;
  return std::move(state.grads);
}

template <class Real>
double reconstruct_transmittance_check(const RadianceField<Real>& field,
                                       const RaySamples<Real>& samples,
                                       std::span<const double> final_transmittance,
                                       const RenderOptions& options) {
  field.validate();
  const std::size_t M = samples.num_rays();
  if (final_transmittance.size() != M)
    throw ContractError("cached final transmittance missing or of the wrong length");
  const int K = field.grid.channels();
  const int R = samples.intervals();
  const double delta = samples.delta();
  std::vector<Real> feat(K), out(1);
  std::vector<double> sigmas(R + 1), forward(R + 1);
  double worst = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    double T = 1.0;
    for (int j = 0; j <= R; ++j) {
      field.grid.sample(samples.point(i, j), feat);
      mlp_forward(field.sigma_mlp, std::span<const Real>(feat), std::span<Real>(out));
      sigmas[j] = double(clamp_sigma(out[0], options.sigma_max).first);
      T = std::max(T * std::exp(-delta * sigmas[j]), kMinTransmittance);
      forward[j] = T;
    }
    T = final_transmittance[i];
    for (int q = R; q >= 0; --q) {
      worst = std::max(worst, std::abs(T - forward[q]));
      T = std::max(T * std::exp(delta * sigmas[q]), kMinTransmittance);
    }
  }
  return worst;
}

#define LIGHTPLANE_INSTANTIATE(Real)                                                           \
  template struct RadianceField<Real>;                                                         \
  template struct RenderGrads<Real>;                                                           \
  template std::size_t fused_render_workspace_bytes<Real>(const RadianceField<Real>&);         \
  template RenderOutput<Real> render_forward_fused<Real>(                                      \
      const RadianceField<Real>&, const RaySamples<Real>&, const RenderOptions&,               \
      const ExecContext&);                                                                     \
  template RenderGrads<Real> render_backward_fused<Real>(                                      \
      const RadianceField<Real>&, const RaySamples<Real>&, std::span<const Real>,              \
      std::span<const double>, const RenderOptions&, const ExecContext&);                      \
  template double reconstruct_transmittance_check<Real>(                                       \
      const RadianceField<Real>&, const RaySamples<Real>&, std::span<const double>,            \
      const RenderOptions&);

LIGHTPLANE_INSTANTIATE(float)
LIGHTPLANE_INSTANTIATE(double)

#undef LIGHTPLANE_INSTANTIATE

}  // namespace lightplane
