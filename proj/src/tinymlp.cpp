#include "lightplane/tinymlp.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace lightplane {

template <class Real>
int MlpParams<Real>::max_width() const {
  int w = 0;
  for (const auto& l : layers) w = std::max({w, l.in, l.out});
  return w;
}

template <class Real>
std::size_t MlpParams<Real>::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

template <class Real>
std::size_t MlpParams<Real>::activation_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.out);
  return n;
}

template <class Real>
std::uint64_t MlpParams<Real>::forward_flops() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += std::uint64_t(l.out) * std::uint64_t(l.in);
  return n;
}

template <class Real>
void MlpParams<Real>::validate() const {
  if (layers.empty()) throw DimensionError("MLP has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in <= 0 || l.out <= 0) throw DimensionError("MLP layer with non-positive width");
    if (l.weight.size() != std::size_t(l.in) * l.out || l.bias.size() != std::size_t(l.out))
      throw DimensionError("MLP layer storage does not match its shape");
    if (i > 0 && layers[i - 1].out != l.in)
      throw DimensionError("MLP layer dimensions do not chain");
  }
  if (hidden_activation != Activation::relu && hidden_activation != Activation::softplus)
    throw DimensionError("hidden activation must be relu or softplus");
  if (output_activation == Activation::relu)
    throw DimensionError("output activation must be identity, softplus or sigmoid");
}

template <class Real>
MlpParams<Real> MlpParams<Real>::zeros_like() const {
  MlpParams out = *this;
  out.set_zero();
  return out;
}

template <class Real>
void MlpParams<Real>::set_zero() {
  for (auto& l : layers) {
    std::fill(l.weight.begin(), l.weight.end(), Real(0));
    std::fill(l.bias.begin(), l.bias.end(), Real(0));
  }
}

template <class Real>
MlpParams<Real>& MlpParams<Real>::operator+=(const MlpParams& o) {
  if (o.layers.size() != layers.size()) throw DimensionError("MLP shape mismatch in +=");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& a = layers[i];
    const auto& b = o.layers[i];
    if (a.weight.size() != b.weight.size() || a.bias.size() != b.bias.size())
      throw DimensionError("MLP shape mismatch in +=");
    for (std::size_t k = 0; k < a.weight.size(); ++k) a.weight[k] += b.weight[k];
    for (std::size_t k = 0; k < a.bias.size(); ++k) a.bias[k] += b.bias[k];
  }
  return *this;
}

template <class Real>
std::vector<Real*> MlpParams<Real>::parameter_pointers() {
  std::vector<Real*> ptrs;
  ptrs.reserve(param_count());
  for (auto& l : layers) {
    for (auto& w : l.weight) ptrs.push_back(&w);
    for (auto& b : l.bias) ptrs.push_back(&b);
  }
  return ptrs;
}

template <class Real>
MlpParams<Real> init_mlp(const MlpShape& shape, std::uint64_t seed) {
  if (shape.widths.size() < 2) throw DimensionError("MLP shape needs at least two widths");
  std::mt19937_64 rng(seed);
  MlpParams<Real> p;
  p.hidden_activation = shape.hidden;
  p.output_activation = shape.output;
  for (std::size_t i = 0; i + 1 < shape.widths.size(); ++i) {
    DenseLayer<Real> l;
    l.in = shape.widths[i];
    l.out = shape.widths[i + 1];
    if (l.in <= 0 || l.out <= 0) throw DimensionError("MLP widths must be positive");
    const double bound = 1.0 / std::sqrt(double(l.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    l.weight.resize(std::size_t(l.in) * l.out);
    l.bias.resize(l.out);
    for (auto& w : l.weight) w = static_cast<Real>(dist(rng));
    for (auto& b : l.bias) b = static_cast<Real>(dist(rng));
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

namespace {

MlpShape make_shape(int in_dim, int out_dim, int width, int layers, Activation out) {
  if (layers < 1) throw DimensionError("MLP needs at least one layer");
  MlpShape s;
  s.widths.push_back(in_dim);
  for (int i = 0; i + 1 < layers; ++i) s.widths.push_back(width);
  s.widths.push_back(out_dim);
  s.hidden = Activation::relu;
  s.output = out;
  return s;
}

}  // namespace

MlpShape sigma_mlp_shape(int in_dim, int width, int layers) {
  return make_shape(in_dim, 1, width, layers, Activation::softplus);
}
MlpShape feature_mlp_shape(int in_dim, int out_dim, int width, int layers) {
  return make_shape(in_dim, out_dim, width, layers, Activation::sigmoid);
}
MlpShape splat_mlp_shape(int in_dim, int out_dim, int width, int layers) {
  return make_shape(in_dim, out_dim, width, layers, Activation::identity);
}

template <class Real>
Real activate(Activation a, Real z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::relu: return z > Real(0) ? z : Real(0);
    case Activation::softplus: return z > Real(20) ? z : std::log1p(std::exp(z));
    case Activation::sigmoid: return Real(1) / (Real(1) + std::exp(-z));
  }
  return z;
}

template <class Real>
Real activation_grad_from_output(Activation a, Real y) {
  switch (a) {
    case Activation::identity: return Real(1);
    case Activation::relu: return y > Real(0) ? Real(1) : Real(0);
    // softplus'(z) = sigmoid(z) = 1 - exp(-softplus(z))
    case Activation::softplus: return -std::expm1(-y);
    case Activation::sigmoid: return y * (Real(1) - y);
  }
  return Real(1);
}

namespace {

template <class Real>
void activate_inplace(Activation a, Real* y, int n) {
  switch (a) {
    case Activation::identity: return;
    case Activation::relu:
      for (int o = 0; o < n; ++o) y[o] = y[o] > Real(0) ? y[o] : Real(0);
      return;
    default:
      for (int o = 0; o < n; ++o) y[o] = activate(a, y[o]);
  }
}

// g[o] *= act'(y[o])
template <class Real>
void scale_by_activation_grad(Activation a, const Real* y, Real* g, int n) {
  switch (a) {
    case Activation::identity: return;
    case Activation::relu:
      for (int o = 0; o < n; ++o) g[o] = y[o] > Real(0) ? g[o] : Real(0);
      return;
    default:
      for (int o = 0; o < n; ++o) g[o] *= activation_grad_from_output(a, y[o]);
  }
}

// out = act(W[:, :cols] in + bias)
template <class Real>
void dense_forward(const DenseLayer<Real>& l, const Real* in, int cols, const Real* bias, Real* out,
                   Activation act) {
  for (int o = 0; o < l.out; ++o) {
    const Real* w = l.weight.data() + std::size_t(o) * l.in;
    Real acc = 0;
#pragma omp simd reduction(+ : acc)
    for (int i = 0; i < cols; ++i) acc += w[i] * in[i];
    out[o] = acc + bias[o];
  }
  activate_inplace(act, out, l.out);
}

template <class Real>
void dense_forward(const DenseLayer<Real>& l, const Real* in, Real* out, Activation act) {
  dense_forward(l, in, l.in, l.bias.data(), out, act);
}

template <class Real>
void forward_tape_impl(const MlpParams<Real>& params, const Real* in, int cols,
                       const Real* first_bias, MlpTape<Real>& tape) {
  const int n = static_cast<int>(params.layers.size());
  for (int li = 0; li < n; ++li) {
    auto out = tape.layer_output(li);
    dense_forward(params.layers[li], in, li == 0 ? cols : params.layers[li].in,
                  li == 0 ? first_bias : params.layers[li].bias.data(), out.data(),
                  li + 1 == n ? params.output_activation : params.hidden_activation);
    in = out.data();
  }
}

// Reverse pass. The first layer only sees its leading `cols` inputs; when
// grad_first is given, the first layer's pre-activation gradient is added to
// it instead of to the first bias.
template <class Real>
std::uint64_t backward_tape_impl(const MlpParams<Real>& params, const Real* input, int cols,
                                 MlpTape<Real>& tape, std::span<const Real> upstream,
                                 Real* grad_input, MlpParams<Real>* grad_params, Real* grad_first) {
  const int n = static_cast<int>(params.layers.size());
  Real* g = tape.grad_a().data();   // gradient w.r.t. the current layer's pre-activation
  Real* gn = tape.grad_b().data();  // gradient w.r.t. the current layer's input
  std::copy(upstream.begin(), upstream.end(), g);
  std::uint64_t ops = 0;

  for (int li = n - 1; li >= 0; --li) {
    const auto& l = params.layers[li];
    const int width = li == 0 ? cols : l.in;
    const auto y = tape.layer_output(li);
    const Activation act = li + 1 == n ? params.output_activation : params.hidden_activation;
    scale_by_activation_grad(act, y.data(), g, l.out);

    const Real* in = li == 0 ? input : tape.layer_output(li - 1).data();
    if (li == 0 && grad_first)
      for (int o = 0; o < l.out; ++o) grad_first[o] += g[o];
    if (grad_params) {
      auto& gl = grad_params->layers[li];
      for (int o = 0; o < l.out; ++o) {
        const Real go = g[o];
        Real* gw = gl.weight.data() + std::size_t(o) * l.in;
        for (int i = 0; i < width; ++i) gw[i] += go * in[i];
        if (li != 0 || !grad_first) gl.bias[o] += go;
      }
      ops += std::uint64_t(width) * l.out;
    }
    if (li == 0 && !grad_input) break;
    Real* dst = li == 0 ? grad_input : gn;
    for (int i = 0; i < width; ++i) dst[i] = Real(0);
    for (int o = 0; o < l.out; ++o) {
      const Real go = g[o];
      const Real* w = l.weight.data() + std::size_t(o) * l.in;
      for (int i = 0; i < width; ++i) dst[i] += w[i] * go;
    }
    ops += std::uint64_t(width) * l.out;
    std::swap(g, gn);
  }
  return ops;
}

template <class Real>
std::uint64_t head_forward_flops(const MlpParams<Real>& params, int cols) {
  return params.forward_flops() - std::uint64_t(params.layers.front().in - cols) * params.layers.front().out;
}

}  // namespace

template <class Real>
MlpTape<Real>::MlpTape(const MlpParams<Real>& params, ScratchTracker* tracker) {
  std::size_t total = 0;
  for (const auto& l : params.layers) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(l.out);
  }
  offsets_.push_back(total);
  acts_ = TrackedBuffer<Real>(total, tracker);
  grad_a_ = TrackedBuffer<Real>(params.max_width(), tracker);
  grad_b_ = TrackedBuffer<Real>(params.max_width(), tracker);
}

template <class Real>
std::span<const Real> MlpTape<Real>::layer_output(int l) const {
  return {acts_.data() + offsets_[l], offsets_[l + 1] - offsets_[l]};
}

template <class Real>
std::span<Real> MlpTape<Real>::layer_output(int l) {
  return {acts_.data() + offsets_[l], offsets_[l + 1] - offsets_[l]};
}

template <class Real>
std::span<const Real> MlpTape<Real>::output() const {
  return layer_output(static_cast<int>(offsets_.size()) - 2);
}

template <class Real>
void mlp_forward(const MlpParams<Real>& params, std::span<const Real> input,
                 std::span<Real> output, FlopCounter* flops) {
  if (input.size() != std::size_t(params.in_dim()))
    throw DimensionError("MLP input length mismatch");
  if (output.size() != std::size_t(params.out_dim()))
    throw DimensionError("MLP output length mismatch");
  const int n = static_cast<int>(params.layers.size());
  std::vector<Real> a(input.begin(), input.end()), b;
  for (int li = 0; li < n; ++li) {
    const auto& l = params.layers[li];
    b.resize(l.out);
    dense_forward(l, a.data(), b.data(),
                  li + 1 == n ? params.output_activation : params.hidden_activation);
    std::swap(a, b);
  }
  std::copy(a.begin(), a.end(), output.begin());
  if (flops) flops->mlp_forward += params.forward_flops();
}

template <class Real>
std::vector<Real> mlp_forward(const MlpParams<Real>& params, std::span<const Real> input) {
  std::vector<Real> out(params.out_dim());
  mlp_forward(params, input, std::span<Real>(out));
  return out;
}

template <class Real>
void mlp_forward_tape(const MlpParams<Real>& params, std::span<const Real> input,
                      MlpTape<Real>& tape, FlopCounter* flops) {
  if (input.size() != std::size_t(params.in_dim()))
    throw DimensionError("MLP input length mismatch");
  forward_tape_impl(params, input.data(), params.in_dim(), params.layers.front().bias.data(), tape);
  if (flops) flops->mlp_forward += params.forward_flops();
}

template <class Real>
void mlp_backward_tape(const MlpParams<Real>& params, std::span<const Real> input,
                       MlpTape<Real>& tape, std::span<const Real> upstream,
                       std::span<Real> grad_input, MlpParams<Real>* grad_params,
                       FlopCounter* flops) {
  if (upstream.size() != std::size_t(params.out_dim()))
    throw DimensionError("MLP upstream length mismatch");
  if (!grad_input.empty() && grad_input.size() != std::size_t(params.in_dim()))
    throw DimensionError("MLP grad_input length mismatch");
  const auto ops = backward_tape_impl(params, input.data(), params.in_dim(), tape, upstream,
                                      grad_input.empty() ? nullptr : grad_input.data(), grad_params,
                                      static_cast<Real*>(nullptr));
  if (flops) flops->mlp_backward += ops;
}

template <class Real>
void mlp_prepare_tail(const MlpParams<Real>& params, std::span<const Real> tail,
                      std::span<Real> partial, FlopCounter* flops) {
  const auto& l = params.layers.front();
  const int split = l.in - static_cast<int>(tail.size());
  if (split < 0 || partial.size() != std::size_t(l.out))
    throw DimensionError("MLP tail length mismatch");
  for (int o = 0; o < l.out; ++o) {
    const Real* w = l.weight.data() + std::size_t(o) * l.in + split;
    Real acc = 0;
    for (std::size_t i = 0; i < tail.size(); ++i) acc += w[i] * tail[i];
    partial[o] = acc + l.bias[o];
  }
  if (flops) flops->mlp_forward += std::uint64_t(tail.size()) * l.out;
}

template <class Real>
void mlp_forward_tape_head(const MlpParams<Real>& params, std::span<const Real> head,
                           std::span<const Real> partial, MlpTape<Real>& tape, FlopCounter* flops) {
  if (head.size() > std::size_t(params.in_dim()) || partial.size() != std::size_t(params.layers.front().out))
    throw DimensionError("MLP head length mismatch");
  const int cols = static_cast<int>(head.size());
  forward_tape_impl(params, head.data(), cols, partial.data(), tape);
  if (flops) flops->mlp_forward += head_forward_flops(params, cols);
}

template <class Real>
void mlp_backward_tape_head(const MlpParams<Real>& params, std::span<const Real> head,
                            MlpTape<Real>& tape, std::span<const Real> upstream,
                            std::span<Real> grad_head, MlpParams<Real>* grad_params,
                            std::span<Real> grad_partial, FlopCounter* flops) {
  if (upstream.size() != std::size_t(params.out_dim()))
    throw DimensionError("MLP upstream length mismatch");
  if (!grad_head.empty() && grad_head.size() != head.size())
    throw DimensionError("MLP grad_head length mismatch");
  if (grad_partial.size() != std::size_t(params.layers.front().out))
    throw DimensionError("MLP grad_partial length mismatch");
  const auto ops = backward_tape_impl(params, head.data(), static_cast<int>(head.size()), tape,
                                      upstream, grad_head.empty() ? nullptr : grad_head.data(),
                                      grad_params, grad_partial.data());
  if (flops) flops->mlp_backward += ops;
}

template <class Real>
void mlp_tail_backward(const MlpParams<Real>& params, std::span<const Real> tail,
                       std::span<const Real> grad_partial, MlpParams<Real>& grad_params,
                       FlopCounter* flops) {
  const auto& l = params.layers.front();
  const int split = l.in - static_cast<int>(tail.size());
  if (split < 0 || grad_partial.size() != std::size_t(l.out))
    throw DimensionError("MLP tail length mismatch");
  auto& gl = grad_params.layers.front();
  for (int o = 0; o < l.out; ++o) {
    Real* gw = gl.weight.data() + std::size_t(o) * l.in + split;
    for (std::size_t i = 0; i < tail.size(); ++i) gw[i] += grad_partial[o] * tail[i];
    gl.bias[o] += grad_partial[o];
  }
  if (flops) flops->mlp_backward += std::uint64_t(tail.size()) * l.out;
}

template <class Real>
MlpVjp<Real> mlp_vjp(const MlpParams<Real>& params, std::span<const Real> input,
                     std::span<const Real> upstream) {
  params.validate();
  MlpTape<Real> tape(params);
  MlpVjp<Real> r{std::vector<Real>(params.in_dim()), params.zeros_like()};
  mlp_forward_tape(params, input, tape);
  mlp_backward_tape(params, input, tape, upstream, std::span<Real>(r.grad_input),
                    &r.grad_params);
  return r;
}

template <class Real>
void direnc(const Vec3<Real>& d, const DirEncConfig& cfg, std::span<Real> out) {
  if (out.size() != std::size_t(cfg.length())) throw DimensionError("direnc output length");
  if (!d.finite() || std::abs(double(d.norm()) - 1.0) > 1e-4)
    throw DomainError("direnc expects a unit direction");
  std::size_t n = 0;
  if (cfg.include_raw) {
    out[n++] = d.x;
    out[n++] = d.y;
    out[n++] = d.z;
  }
  for (int axis = 0; axis < 3; ++axis) {
    double f = 1.0;
    for (int k = 0; k < cfg.num_frequencies; ++k, f *= 2.0) {
      const double arg = std::numbers::pi * f * double(d[axis]);
      out[n++] = static_cast<Real>(std::sin(arg));
      out[n++] = static_cast<Real>(std::cos(arg));
    }
  }
}

template <class Real>
std::vector<Real> direnc(const Vec3<Real>& d, const DirEncConfig& cfg) {
  std::vector<Real> out(cfg.length());
  direnc(d, cfg, std::span<Real>(out));
  return out;
}

#define LIGHTPLANE_INSTANTIATE(Real)                                                         \
  template struct MlpParams<Real>;                                                           \
  template class MlpTape<Real>;                                                              \
  template MlpParams<Real> init_mlp<Real>(const MlpShape&, std::uint64_t);                  \
  template Real activate<Real>(Activation, Real);                                            \
  template Real activation_grad_from_output<Real>(Activation, Real);                         \
  template void mlp_forward<Real>(const MlpParams<Real>&, std::span<const Real>,             \
                                  std::span<Real>, FlopCounter*);                            \
  template std::vector<Real> mlp_forward<Real>(const MlpParams<Real>&, std::span<const Real>); \
  template void mlp_forward_tape<Real>(const MlpParams<Real>&, std::span<const Real>,        \
                                       MlpTape<Real>&, FlopCounter*);                        \
  template void mlp_backward_tape<Real>(const MlpParams<Real>&, std::span<const Real>,       \
                                        MlpTape<Real>&, std::span<const Real>,               \
                                        std::span<Real>, MlpParams<Real>*, FlopCounter*);    \
  template void mlp_prepare_tail<Real>(const MlpParams<Real>&, std::span<const Real>,         \
                                      std::span<Real>, FlopCounter*);                        \
  template void mlp_forward_tape_head<Real>(const MlpParams<Real>&, std::span<const Real>,    \
                                           std::span<const Real>, MlpTape<Real>&,            \
                                           FlopCounter*);                                    \
  template void mlp_backward_tape_head<Real>(const MlpParams<Real>&, std::span<const Real>,   \
                                            MlpTape<Real>&, std::span<const Real>,           \
                                            std::span<Real>, MlpParams<Real>*,               \
                                            std::span<Real>, FlopCounter*);                  \
  template void mlp_tail_backward<Real>(const MlpParams<Real>&, std::span<const Real>,        \
                                       std::span<const Real>, MlpParams<Real>&, FlopCounter*); \
  template MlpVjp<Real> mlp_vjp<Real>(const MlpParams<Real>&, std::span<const Real>,         \
                                      std::span<const Real>);                                \
  template void direnc<Real>(const Vec3<Real>&, const DirEncConfig&, std::span<Real>);       \
  template std::vector<Real> direnc<Real>(const Vec3<Real>&, const DirEncConfig&);

LIGHTPLANE_INSTANTIATE(float)
LIGHTPLANE_INSTANTIATE(double)

#undef LIGHTPLANE_INSTANTIATE

}  // namespace lightplane
