#include <cmath>
#include <limits>

#include "dense.hpp"
#include "lightplane/reference.hpp"

namespace lightplane::reference {

namespace {

constexpr double kMinTransmittance = std::numeric_limits<double>::min();

// Per-sample record layout: [feature K | sigma pre-acts | feature pre-acts | sigma].
template <class Real>
struct Layout {
  std::size_t feat = 0, zs = 0, zv = 0, sigma = 0, stride = 0;
  explicit Layout(const RadianceField<Real>& f) {
    zs = feat + f.grid.channels();
    zv = zs + f.sigma_mlp.activation_count();
    sigma = zv + f.feature_mlp.activation_count();
    stride = sigma + 1;
  }
};

}  // namespace

template <class Real>
std::size_t naive_render_bytes_per_sample(const RadianceField<Real>& field) {
  return Layout<Real>(field).stride * sizeof(Real) + sizeof(double);
}

template <class Real>
NaiveRender<Real> render_forward_naive(const RadianceField<Real>& field,
                                       const RaySamples<Real>& samples,
                                       const RenderOptions& options, const ExecContext& ctx) {
  field.validate();
  const Layout<Real> lay(field);
  const std::size_t M = samples.num_rays();
  const int C = field.channels();
  const int K = field.grid.channels();
  const int E = field.direnc.length();
  const int P = samples.points_per_ray();
  const double delta = samples.delta();

  NaiveRender<Real> nr;
  auto& tape = nr.tape;
  tape.points_per_ray = P;
  tape.stride = lay.stride;
  tape.values = TrackedBuffer<Real>(M * P * lay.stride, ctx.scratch);
  tape.transmittance = TrackedBuffer<double>(M * P, ctx.scratch);
  tape.direction_encoding = TrackedBuffer<Real>(M * E, ctx.scratch);
  std::fill(tape.values.begin(), tape.values.end(), Real(0));

  auto& out = nr.output;
  out.num_rays = M;
  out.channels = C;
  out.features.assign(M * C, Real(0));
  out.final_transmittance.assign(M, 1.0);
  if (options.expected_depth) out.expected_depth.assign(M, Real(0));

  FlopCounter flops;
  std::vector<Real> input(K + E), sigma_out(1), fv(C);
  for (std::size_t i = 0; i < M; ++i) {
    Real* enc = tape.direction_encoding.data() + i * E;
    direnc(samples.direction(i), field.direnc, std::span<Real>(enc, std::size_t(E)));
    std::copy_n(enc, E, input.begin() + K);
    double T = 1.0, depth = 0.0;
    for (int j = 0; j < P; ++j) {
      Real* rec = tape.values.data() + (i * P + j) * lay.stride;
      field.grid.sample(samples.point(i, j), std::span<Real>(rec + lay.feat, std::size_t(K)));
      flops.interp += 8ull * K;
      std::copy_n(rec + lay.feat, K, input.begin());
      flops.mlp_forward += detail::forward_record(field.sigma_mlp, input.data(), rec + lay.zs,
                                                  sigma_out.data());
      const Real raw = sigma_out[0];
      const Real sigma =
          raw >= Real(0) ? static_cast<Real>(std::min(double(raw), options.sigma_max)) : Real(0);
      rec[lay.sigma] = sigma;
      const double T_prev = T;
      T = std::max(T * std::exp(-delta * double(sigma)), kMinTransmittance);
      tape.transmittance[i * P + j] = T;
      if (j == 0) continue;
      flops.mlp_forward +=
          detail::forward_record(field.feature_mlp, input.data(), rec + lay.zv, fv.data());
      for (int c = 0; c < C; ++c) out.features[i * C + c] += static_cast<Real>(T_prev - T) * fv[c];
      depth += (T_prev - T) * double(samples.t(i, j));
    }
    out.final_transmittance[i] = T;
    if (options.expected_depth) out.expected_depth[i] = static_cast<Real>(depth);
  }
  if (ctx.flops) *ctx.flops += flops;
  return nr;
}

template <class Real>
RenderGrads<Real> render_backward_naive(const RadianceField<Real>& field,
                                        const RaySamples<Real>& samples,
                                        const NaiveRender<Real>& forward,
                                        std::span<const Real> upstream,
                                        const RenderOptions& options, const ExecContext& ctx) {
  field.validate();
  const Layout<Real> lay(field);
  const std::size_t M = samples.num_rays();
  const int C = field.channels();
  const int K = field.grid.channels();
  const int E = field.direnc.length();
  const int P = samples.points_per_ray();
  const double delta = samples.delta();
  const auto& tape = forward.tape;
  if (upstream.size() != M * C) throw DimensionError("upstream gradient must be num_rays x C");
  if (tape.points_per_ray != P || tape.stride != lay.stride || tape.values.size() != M * P * lay.stride)
    throw ContractError("naive tape does not match this field and sample set");

  auto grads = RenderGrads<Real>::zeros_like(field);
  ScratchReservation reservation(
      ctx.scratch,
      (field.grid.size() + field.sigma_mlp.param_count() + field.feature_mlp.param_count()) *
          sizeof(Real));
  FlopCounter flops;

  std::vector<double> a(P), gS(P);
  std::vector<Real> fv(C), z(std::max(field.sigma_mlp.activation_count(),
                                      field.feature_mlp.activation_count()));
  std::vector<Real> input(K + E), grad_in(K + E), gfeat(K), up(C);
  for (std::size_t i = 0; i < M; ++i) {
    const Real* p = upstream.data() + i * C;
    const double* T = tape.transmittance.data() + i * P;
    const Real* enc = tape.direction_encoding.data() + i * E;
    std::copy_n(enc, E, input.begin() + K);

    // a_j = p . f_j, reading f_j back from the recorded pre-activations.
    a[0] = 0.0;
    for (int j = 1; j < P; ++j) {
      const Real* rec = tape.values.data() + (i * P + j) * lay.stride;
      const auto nl = field.feature_mlp.layers.size();
      const Real* zlast = rec + lay.zv + field.feature_mlp.activation_count() -
                          field.feature_mlp.layers[nl - 1].out;
      double s = 0.0;
      for (int c = 0; c < C; ++c)
        s += double(p[c]) * double(activate(field.feature_mlp.output_activation, zlast[c]));
      a[j] = s;
    }
    // dL/dT_j, then dL/dS_j with T_j = exp(-delta * S_j).
    for (int j = 0; j < P; ++j) {
      double gT = 0.0;
      if (j + 1 < P) gT += a[j + 1];
      if (j >= 1) gT -= a[j];
      gS[j] = -delta * T[j] * gT;
    }
    // S_j = sum_{n <= j} sigma_n, so dL/dsigma_n = sum_{j >= n} dL/dS_j.
    double gsigma_acc = 0.0;
    for (int n = P - 1; n >= 0; --n) {
      gsigma_acc += gS[n];
      const Real* rec = tape.values.data() + (i * P + n) * lay.stride;
      std::copy_n(rec + lay.feat, K, input.begin());
      std::fill(gfeat.begin(), gfeat.end(), Real(0));

      if (n >= 1) {
        const double w = (n == 0 ? 1.0 : T[n - 1]) - T[n];
        for (int c = 0; c < C; ++c) up[c] = static_cast<Real>(w * double(p[c]));
        flops.mlp_backward += detail::backward_record(field.feature_mlp, input.data(), rec + lay.zv,
                                                      up.data(), grad_in.data(), grads.feature_mlp);
        for (int k = 0; k < K; ++k) gfeat[k] += grad_in[k];
      }
      // clamp gate, evaluated on the raw decoder output
      const auto ns = field.sigma_mlp.layers.size();
      const Real zs_last = rec[lay.zs + field.sigma_mlp.activation_count() -
                               field.sigma_mlp.layers[ns - 1].out];
      const Real raw = activate(field.sigma_mlp.output_activation, zs_last);
      if (raw >= Real(0) && double(raw) <= options.sigma_max) {
        const Real gs = static_cast<Real>(gsigma_acc);
        flops.mlp_backward += detail::backward_record(field.sigma_mlp, input.data(), rec + lay.zs,
                                                      &gs, grad_in.data(), grads.sigma_mlp);
        for (int k = 0; k < K; ++k) gfeat[k] += grad_in[k];
      }
      field.grid.sample_vjp(samples.point(i, n), gfeat, grads.grid);
      flops.interp += 8ull * K;
    }
  }
  if (ctx.flops) *ctx.flops += flops;
  return grads;
}

#define LIGHTPLANE_INSTANTIATE(Real)                                                          \
  template std::size_t naive_render_bytes_per_sample<Real>(const RadianceField<Real>&);       \
  template NaiveRender<Real> render_forward_naive<Real>(                                      \
      const RadianceField<Real>&, const RaySamples<Real>&, const RenderOptions&,              \
      const ExecContext&);                                                                    \
  template RenderGrads<Real> render_backward_naive<Real>(                                     \
      const RadianceField<Real>&, const RaySamples<Real>&, const NaiveRender<Real>&,          \
      std::span<const Real>, const RenderOptions&, const ExecContext&);

LIGHTPLANE_INSTANTIATE(float)
LIGHTPLANE_INSTANTIATE(double)

#undef LIGHTPLANE_INSTANTIATE

}  // namespace lightplane::reference
