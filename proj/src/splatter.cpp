#include "lightplane/splatter.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "parallel.hpp"

namespace lightplane {

template <class Real>
void SplatInputs<Real>::validate(const GridShape& target) const {
  target.validate();
  if (channels <= 0) throw DimensionError("splat input needs at least one channel");
  if (features.size() != samples.num_rays() * std::size_t(channels))
    throw DimensionError("splat features must be num_rays x channels");
  if (prior && !splat_mlp) throw DimensionError("a prior structure requires a splat decoder");
  if (splat_mlp) {
    splat_mlp->validate();
    if (splat_mlp->in_dim() != decoder_input_dim())
      throw DimensionError("splat decoder input != channels + prior + direnc");
  }
  if (target.K != output_channels())
    throw DimensionError("splat target channels != splatted feature length");
}

template <class Real>
HashStructure<Real> normalize_splat(const HashStructure<Real>& theta,
                                    const HashStructure<Real>& weight) {
  if (weight.shape() != theta.shape().with_channels(1))
    throw DimensionError("weight structure must match theta with one channel");
  HashStructure<Real> out(theta.shape());
  const int K = theta.channels();
  const auto t = theta.data();
  const auto w = weight.data();
  auto o = out.data();
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (w[c] == Real(0)) continue;
    const Real denom = std::max(w[c], static_cast<Real>(kSplatEpsilon));
    for (int k = 0; k < K; ++k) o[c * K + k] = t[c * K + k] / denom;
  }
  return out;
}

template <class Real>
std::vector<std::size_t> canonical_ray_order(const SplatInputs<Real>& inputs) {
  const std::size_t M = inputs.samples.num_rays();
  const std::size_t C = std::size_t(inputs.channels);
  const std::size_t stride = 7 + C;
  std::vector<Real> keys(M * stride);
  for (std::size_t i = 0; i < M; ++i) {
    Real* k = keys.data() + i * stride;
    const auto& o = inputs.samples.bundle().origins[i];
    const auto& d = inputs.samples.direction(i);
    k[0] = o.x; k[1] = o.y; k[2] = o.z;
    k[3] = d.x; k[4] = d.y; k[5] = d.z;
    k[6] = inputs.samples.t(i, 0);
    std::copy_n(inputs.features.data() + i * C, C, k + 7);
  }
  std::vector<std::size_t> order(M);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::memcmp(keys.data() + a * stride, keys.data() + b * stride,
                       stride * sizeof(Real)) < 0;
  });
  return order;
}

namespace {

template <class Real>
struct SplatWorkspace {
  TrackedBuffer<Real> decoder_input;
  TrackedBuffer<Real> value;
  TrackedBuffer<Real> grad_input;
  MlpTape<Real> tape;
  FlopCounter flops;

  SplatWorkspace(const SplatInputs<Real>& in, ScratchTracker* tr)
      : decoder_input(in.splat_mlp ? in.decoder_input_dim() : 0, tr),
        value(in.output_channels(), tr),
        grad_input(in.splat_mlp ? in.decoder_input_dim() : 0, tr),
        tape(in.splat_mlp ? MlpTape<Real>(*in.splat_mlp, tr) : MlpTape<Real>()) {}

  std::size_t bytes() const {
    return decoder_input.bytes() + value.bytes() + grad_input.bytes() + tape.bytes();
  }
};

// Fills the decoder input for sample j of ray i, except the direction block
// which is written once per ray. Returns the prior's stencil.
template <class Real>
Taps<Real> fill_decoder_input(const SplatInputs<Real>& in, std::size_t i, const Vec3<Real>& x,
                              Real* dst, FlopCounter& flops) {
  const int C = in.channels;
  std::copy_n(in.features.data() + i * C, C, dst);
  Taps<Real> prior_taps;
  if (in.prior) {
    const int Kp = in.prior->channels();
    prior_taps = compute_taps(in.prior->shape(), x);
    gather_taps(prior_taps, in.prior->data(), Kp, dst + C);
    flops.interp += std::uint64_t(prior_taps.count) * Kp;
  }
  if (in.append_position) {
    Real* pos = dst + C + in.prior_channels() + in.direnc.length();
    pos[0] = x.x;
    pos[1] = x.y;
    pos[2] = x.z;
  }
  return prior_taps;
}

template <class Real>
std::span<Real> direction_block(const SplatInputs<Real>& in, Real* decoder_input) {
  return {decoder_input + in.channels + in.prior_channels(), std::size_t(in.direnc.length())};
}

}  // namespace

template <class Real>
std::size_t fused_splat_workspace_bytes(const SplatInputs<Real>& inputs) {
  return SplatWorkspace<Real>(inputs, nullptr).bytes();
}

template <class Real>
SplatResult<Real> splat_forward_fused(const SplatInputs<Real>& inputs, const GridShape& target,
                                      const ExecContext& ctx) {
  inputs.validate(target);
  const auto& samples = inputs.samples;
  const std::size_t M = samples.num_rays();
  const int R = samples.intervals();
  const int C = inputs.channels;
  const int Kout = target.K;
  const GridShape weight_shape = target.with_channels(1);

  std::vector<std::size_t> order(M);
  if (ctx.policy.deterministic)
    order = canonical_ray_order(inputs);
  else
    std::iota(order.begin(), order.end(), std::size_t{0});

  // Pass 1: features, through the decoder when present.
  struct FeatureState {
    HashStructure<Real> theta;
    SplatWorkspace<Real> ws;
    ScratchReservation reservation;
  };
  auto features = detail::parallel_reduce(
      M, ctx.policy,
      [&] {
        return FeatureState{HashStructure<Real>(target), SplatWorkspace<Real>(inputs, ctx.scratch),
                            ScratchReservation(ctx.scratch, target.size() * sizeof(Real))};
      },
      [&](FeatureState& st, std::size_t begin, std::size_t end) {
        auto& ws = st.ws;
        auto theta = st.theta.data();
        for (std::size_t r = begin; r < end; ++r) {
          const std::size_t i = order[r];
          if (inputs.splat_mlp)
            direnc(samples.direction(i), inputs.direnc, direction_block(inputs, ws.decoder_input.data()));
          for (int j = 0; j <= R; ++j) {
            const auto x = samples.point(i, j);
            const auto taps = compute_taps(target, x);
            if (taps.count == 0) continue;
            const Real* value = inputs.features.data() + i * C;
            if (inputs.splat_mlp) {
              fill_decoder_input(inputs, i, x, ws.decoder_input.data(), ws.flops);
              mlp_forward_tape(*inputs.splat_mlp,
                               std::span<const Real>(ws.decoder_input.data(), ws.decoder_input.size()),
                               ws.tape, &ws.flops);
              value = ws.tape.output().data();
            }
            scatter_taps(taps, theta, Kout, value, Real(1));
            ws.flops.interp += std::uint64_t(taps.count) * Kout;
          }
        }
      },
      [](FeatureState& into, FeatureState& from) {
        auto a = into.theta.data();
        auto b = from.theta.data();
        for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
        into.ws.flops += from.ws.flops;
      });

  // Pass 2: unit weights, decoder and prior disabled.
  struct WeightState {
    HashStructure<Real> weight;
    ScratchReservation reservation;
  };
  auto weights = detail::parallel_reduce(
      M, ctx.policy,
      [&] {
        return WeightState{HashStructure<Real>(weight_shape),
                           ScratchReservation(ctx.scratch, weight_shape.size() * sizeof(Real))};
      },
      [&](WeightState& st, std::size_t begin, std::size_t end) {
        const Real one(1);
        auto w = st.weight.data();
        for (std::size_t r = begin; r < end; ++r) {
          const std::size_t i = order[r];
          for (int j = 0; j <= R; ++j) scatter_taps(compute_taps(target, samples.point(i, j)), w, 1, &one, one);
        }
      },
      [](WeightState& into, WeightState& from) {
        auto a = into.weight.data();
        auto b = from.weight.data();
        for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
      });

  if (ctx.flops) *ctx.flops += features.ws.flops;
  SplatResult<Real> out;
  out.normalized = normalize_splat(features.theta, weights.weight);
  out.theta = std::move(features.theta);
  out.theta_weight = std::move(weights.weight);
  return out;
}

template <class Real>
SplatGrads<Real> splat_backward_fused(const SplatInputs<Real>& inputs, const GridShape& target,
                                      const HashStructure<Real>& grad_normalized,
                                      const HashStructure<Real>& theta_weight,
                                      const ExecContext& ctx) {
  inputs.validate(target);
  if (grad_normalized.shape() != target) throw DimensionError("gradient must match the target");
  if (theta_weight.shape() != target.with_channels(1))
    throw ContractError("cached theta_weight missing or of the wrong shape");

  const auto& samples = inputs.samples;
  const std::size_t M = samples.num_rays();
  const int R = samples.intervals();
  const int C = inputs.channels;
  const int Kout = target.K;
  const int Kp = inputs.prior_channels();

  // d(theta / w)/d theta with w held constant.
  HashStructure<Real> scaled(target);
  {
    const auto g = grad_normalized.data();
    const auto w = theta_weight.data();
    auto s = scaled.data();
    for (std::size_t c = 0; c < w.size(); ++c) {
      if (w[c] == Real(0)) continue;
      const Real denom = std::max(w[c], static_cast<Real>(kSplatEpsilon));
      for (int k = 0; k < Kout; ++k) s[c * Kout + k] = g[c * Kout + k] / denom;
    }
  }
  const auto scaled_data = std::as_const(scaled).data();

  std::vector<std::size_t> order(M);
  if (ctx.policy.deterministic)
    order = canonical_ray_order(inputs);
  else
    std::iota(order.begin(), order.end(), std::size_t{0});

  SplatGrads<Real> grads;
  grads.features.assign(M * C, Real(0));

  struct State {
    HashStructure<Real> prior;
    MlpParams<Real> mlp;
    SplatWorkspace<Real> ws;
    ScratchReservation reservation;
  };
  const std::size_t reduce_bytes =
      ((inputs.prior ? inputs.prior->size() : 0) +
       (inputs.splat_mlp ? inputs.splat_mlp->param_count() : 0)) * sizeof(Real);
  auto state = detail::parallel_reduce(
      M, ctx.policy,
      [&] {
        return State{inputs.prior ? HashStructure<Real>(inputs.prior->shape()) : HashStructure<Real>(),
                     inputs.splat_mlp ? inputs.splat_mlp->zeros_like() : MlpParams<Real>(),
                     SplatWorkspace<Real>(inputs, ctx.scratch),
                     ScratchReservation(ctx.scratch, reduce_bytes)};
      },
      [&](State& st, std::size_t begin, std::size_t end) {
        auto& ws = st.ws;
        Real* g = ws.value.data();
        for (std::size_t r = begin; r < end; ++r) {
          const std::size_t i = order[r];
          Real* gf = grads.features.data() + i * C;
          if (inputs.splat_mlp)
            direnc(samples.direction(i), inputs.direnc, direction_block(inputs, ws.decoder_input.data()));
          for (int j = 0; j <= R; ++j) {
            const auto x = samples.point(i, j);
            const auto taps = compute_taps(target, x);
            if (taps.count == 0) continue;
            gather_taps(taps, scaled_data, Kout, g);
            ws.flops.interp += std::uint64_t(taps.count) * Kout;
            if (!inputs.splat_mlp) {
              for (int c = 0; c < C; ++c) gf[c] += g[c];
              continue;
            }
            const auto prior_taps = fill_decoder_input(inputs, i, x, ws.decoder_input.data(), ws.flops);
            const std::span<const Real> din(ws.decoder_input.data(), ws.decoder_input.size());
            mlp_forward_tape(*inputs.splat_mlp, din, ws.tape, &ws.flops);
            mlp_backward_tape(*inputs.splat_mlp, din, ws.tape,
                              std::span<const Real>(g, std::size_t(Kout)),
                              std::span<Real>(ws.grad_input.data(), ws.grad_input.size()), &st.mlp,
                              &ws.flops);
            for (int c = 0; c < C; ++c) gf[c] += ws.grad_input[c];
            if (inputs.prior) {
              scatter_taps(prior_taps, st.prior.data(), Kp, ws.grad_input.data() + C, Real(1));
              ws.flops.interp += std::uint64_t(prior_taps.count) * Kp;
            }
          }
        }
      },
      [](State& into, State& from) {
        auto a = into.prior.data();
        auto b = from.prior.data();
        for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
        if (!into.mlp.layers.empty()) into.mlp += from.mlp;
        into.ws.flops += from.ws.flops;
      });
  if (ctx.flops) *ctx.flops += state.ws.flops;
  grads.prior = std::move(state.prior);
  grads.splat_mlp = std::move(state.mlp);
  return grads;
}

template <class Real>
HashStructure<Real> splat_plain(std::span<const Vec3<Real>> points, std::span<const Real> values,
                                std::span<const Real> weights, const GridShape& target) {
  HashStructure<Real> out(target);
  const std::size_t K = std::size_t(target.K);
  if (values.size() != points.size() * K || weights.size() != points.size())
    throw DimensionError("splat_plain expects num_points x K values and one weight per point");
  for (std::size_t p = 0; p < points.size(); ++p)
    out.splat_accumulate(points[p], values.subspan(p * K, K), weights[p]);
  return out;
}

#define LIGHTPLANE_INSTANTIATE(Real)                                                           \
  template struct SplatInputs<Real>;                                                           \
  template HashStructure<Real> normalize_splat<Real>(const HashStructure<Real>&,               \
                                                     const HashStructure<Real>&);              \
  template std::vector<std::size_t> canonical_ray_order<Real>(const SplatInputs<Real>&);       \
  template std::size_t fused_splat_workspace_bytes<Real>(const SplatInputs<Real>&);            \
  template SplatResult<Real> splat_forward_fused<Real>(const SplatInputs<Real>&,               \
                                                       const GridShape&, const ExecContext&);  \
  template SplatGrads<Real> splat_backward_fused<Real>(                                        \
      const SplatInputs<Real>&, const GridShape&, const HashStructure<Real>&,                  \
      const HashStructure<Real>&, const ExecContext&);                                         \
  template HashStructure<Real> splat_plain<Real>(std::span<const Vec3<Real>>,                  \
                                                 std::span<const Real>, std::span<const Real>, \
                                                 const GridShape&);

LIGHTPLANE_INSTANTIATE(float)
LIGHTPLANE_INSTANTIATE(double)

#undef LIGHTPLANE_INSTANTIATE

}  // namespace lightplane
