#include "dense.hpp"
#include "lightplane/reference.hpp"

namespace lightplane::reference {

namespace {

// Per-sample record: [decoder input | decoder pre-activations | splatted value].
template <class Real>
struct Layout {
  std::size_t input = 0, z = 0, value = 0, stride = 0;
  Layout(const SplatInputs<Real>& in, const GridShape& target) {
    const std::size_t din = in.splat_mlp ? std::size_t(in.decoder_input_dim()) : 0;
    const std::size_t nz = in.splat_mlp ? in.splat_mlp->activation_count() : 0;
    z = input + din;
    value = z + nz;
    stride = value + std::size_t(target.K);
  }
};

}  // namespace

template <class Real>
std::size_t naive_splat_bytes_per_sample(const SplatInputs<Real>& inputs, const GridShape& target) {
  return Layout<Real>(inputs, target).stride * sizeof(Real);
}

template <class Real>
NaiveSplat<Real> splat_forward_naive(const SplatInputs<Real>& inputs, const GridShape& target,
                                     const ExecContext& ctx) {
  inputs.validate(target);
  const Layout<Real> lay(inputs, target);
  const auto& samples = inputs.samples;
  const std::size_t M = samples.num_rays();
  const int P = samples.points_per_ray();
  const int C = inputs.channels;
  const int Kp = inputs.prior_channels();
  const int E = inputs.direnc.length();
  const int Kout = target.K;

  NaiveSplat<Real> ns;
  ns.points_per_ray = P;
  ns.stride = lay.stride;
  ns.values = TrackedBuffer<Real>(M * P * lay.stride, ctx.scratch);
  FlopCounter flops;

  // Materialize every splatted value.
  for (std::size_t i = 0; i < M; ++i) {
    const Real* v = inputs.features.data() + i * C;
    for (int j = 0; j < P; ++j) {
      Real* rec = ns.values.data() + (i * P + j) * lay.stride;
      if (!inputs.splat_mlp) {
        std::copy_n(v, C, rec + lay.value);
        continue;
      }
      const auto x = samples.point(i, j);
      Real* din = rec + lay.input;
      std::copy_n(v, C, din);
      if (inputs.prior) {
        inputs.prior->sample(x, std::span<Real>(din + C, std::size_t(Kp)));
        flops.interp += 8ull * Kp;
      }
      direnc(samples.direction(i), inputs.direnc, std::span<Real>(din + C + Kp, std::size_t(E)));
      if (inputs.append_position) {
        din[C + Kp + E] = x.x;
        din[C + Kp + E + 1] = x.y;
        din[C + Kp + E + 2] = x.z;
      }
      flops.mlp_forward += detail::forward_record(*inputs.splat_mlp, din, rec + lay.z, rec + lay.value);
    }
  }

  // Scatter, then the weight pass.
  auto& res = ns.result;
  res.theta = HashStructure<Real>(target);
  res.theta_weight = HashStructure<Real>(target.with_channels(1));
  const Real one(1);
  for (std::size_t i = 0; i < M; ++i)
    for (int j = 0; j < P; ++j) {
      const auto x = samples.point(i, j);
      const Real* rec = ns.values.data() + (i * P + j) * lay.stride;
      res.theta.splat_accumulate(x, std::span<const Real>(rec + lay.value, std::size_t(Kout)), one);
      flops.interp += 8ull * Kout;
    }
  for (std::size_t i = 0; i < M; ++i)
    for (int j = 0; j < P; ++j)
      res.theta_weight.splat_accumulate(samples.point(i, j), std::span<const Real>(&one, 1), one);
  res.normalized = normalize_splat(res.theta, res.theta_weight);
  if (ctx.flops) *ctx.flops += flops;
  return ns;
}

template <class Real>
SplatGrads<Real> splat_backward_naive(const SplatInputs<Real>& inputs, const GridShape& target,
                                      const NaiveSplat<Real>& forward,
                                      const HashStructure<Real>& grad_normalized,
                                      const ExecContext& ctx) {
  inputs.validate(target);
  const Layout<Real> lay(inputs, target);
  const auto& samples = inputs.samples;
  const std::size_t M = samples.num_rays();
  const int P = samples.points_per_ray();
  const int C = inputs.channels;
  const int Kp = inputs.prior_channels();
  const int Kout = target.K;
  if (forward.points_per_ray != P || forward.stride != lay.stride ||
      forward.values.size() != M * P * lay.stride)
    throw ContractError("naive splat record does not match these inputs");
  if (grad_normalized.shape() != target) throw DimensionError("gradient must match the target");

  // Gradient w.r.t. theta: divide by the (constant) weights.
  const auto& w = forward.result.theta_weight;
  HashStructure<Real> grad_theta(target);
  for (std::size_t c = 0; c < w.data().size(); ++c) {
    const Real wc = w.data()[c];
    if (wc == Real(0)) continue;
    for (int k = 0; k < Kout; ++k)
      grad_theta.data()[c * Kout + k] =
          grad_normalized.data()[c * Kout + k] / std::max(wc, static_cast<Real>(kSplatEpsilon));
  }

  SplatGrads<Real> g;
  g.features.assign(M * C, Real(0));
  if (inputs.prior) g.prior = HashStructure<Real>(inputs.prior->shape());
  if (inputs.splat_mlp) g.splat_mlp = inputs.splat_mlp->zeros_like();
  FlopCounter flops;
  std::vector<Real> gv(Kout), grad_in(inputs.splat_mlp ? inputs.decoder_input_dim() : 0);
  for (std::size_t i = 0; i < M; ++i)
    for (int j = 0; j < P; ++j) {
      const auto x = samples.point(i, j);
      grad_theta.sample(x, gv);
      flops.interp += 8ull * Kout;
      Real* gf = g.features.data() + i * C;
      if (!inputs.splat_mlp) {
        for (int c = 0; c < C; ++c) gf[c] += gv[c];
        continue;
      }
      const Real* rec = forward.values.data() + (i * P + j) * lay.stride;
      flops.mlp_backward += detail::backward_record(*inputs.splat_mlp, rec + lay.input, rec + lay.z,
                                                    gv.data(), grad_in.data(), g.splat_mlp);
      for (int c = 0; c < C; ++c) gf[c] += grad_in[c];
      if (inputs.prior)
        inputs.prior->sample_vjp(x, std::span<const Real>(grad_in.data() + C, std::size_t(Kp)),
                                 g.prior);
    }
  if (ctx.flops) *ctx.flops += flops;
  return g;
}

#define LIGHTPLANE_INSTANTIATE(Real)                                                          \
  template std::size_t naive_splat_bytes_per_sample<Real>(const SplatInputs<Real>&,           \
                                                          const GridShape&);                  \
  template NaiveSplat<Real> splat_forward_naive<Real>(const SplatInputs<Real>&,               \
                                                      const GridShape&, const ExecContext&);  \
  template SplatGrads<Real> splat_backward_naive<Real>(const SplatInputs<Real>&,              \
                                                       const GridShape&,                      \
                                                       const NaiveSplat<Real>&,               \
                                                       const HashStructure<Real>&,            \
                                                       const ExecContext&);

LIGHTPLANE_INSTANTIATE(float)
LIGHTPLANE_INSTANTIATE(double)

#undef LIGHTPLANE_INSTANTIATE

}  // namespace lightplane::reference
