#pragma once

// Store-everything decoder evaluation for the reference kernels: keeps every
// layer's pre-activation and differentiates from those records.

#include <cmath>
#include <vector>

#include "lightplane/tinymlp.hpp"

namespace lightplane::reference::detail {

template <class Real>
Real act_derivative_from_pre(Activation a, Real z) {
  switch (a) {
    case Activation::identity: return Real(1);
    case Activation::relu: return z > Real(0) ? Real(1) : Real(0);
    case Activation::softplus: return Real(1) / (Real(1) + std::exp(-z));
    case Activation::sigmoid: {
      const Real s = Real(1) / (Real(1) + std::exp(-z));
      return s * (Real(1) - s);
    }
  }
  return Real(1);
}

template <class Real>
Activation layer_activation(const MlpParams<Real>& p, std::size_t layer) {
  return layer + 1 == p.layers.size() ? p.output_activation : p.hidden_activation;
}

// Writes all pre-activations (sum of layer widths) into z and the final
// output into out. Returns multiply-adds performed.
template <class Real>
std::uint64_t forward_record(const MlpParams<Real>& p, const Real* input, Real* z, Real* out) {
  std::vector<Real> a(input, input + p.in_dim());
  std::uint64_t ops = 0;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<Real> next(L.out);
    for (int o = 0; o < L.out; ++o) {
      Real acc = L.bias[o];
      for (int i = 0; i < L.in; ++i) acc += L.weight[std::size_t(o) * L.in + i] * a[i];
      z[o] = acc;
      next[o] = activate(layer_activation(p, l), acc);
    }
    ops += std::uint64_t(L.out) * L.in;
    z += L.out;
    a = std::move(next);
  }
  std::copy(a.begin(), a.end(), out);
  return ops;
}

// Reverse pass from recorded pre-activations. grad_input may be null.
template <class Real>
std::uint64_t backward_record(const MlpParams<Real>& p, const Real* input, const Real* z,
                              const Real* upstream, Real* grad_input, MlpParams<Real>& grads) {
  const std::size_t n = p.layers.size();
  std::vector<const Real*> zl(n);
  for (std::size_t l = 0; l < n; ++l) {
    zl[l] = z;
    z += p.layers[l].out;
  }
  std::vector<Real> g(upstream, upstream + p.out_dim());
  std::uint64_t ops = 0;
  for (std::size_t l = n; l-- > 0;) {
    const auto& L = p.layers[l];
    auto& G = grads.layers[l];
    for (int o = 0; o < L.out; ++o) g[o] *= act_derivative_from_pre(layer_activation(p, l), zl[l][o]);
    std::vector<Real> in(L.in);
    for (int i = 0; i < L.in; ++i)
      in[i] = l == 0 ? input[i] : activate(layer_activation(p, l - 1), zl[l - 1][i]);
    for (int o = 0; o < L.out; ++o) {
      for (int i = 0; i < L.in; ++i) G.weight[std::size_t(o) * L.in + i] += g[o] * in[i];
      G.bias[o] += g[o];
    }
    std::vector<Real> gi(L.in, Real(0));
    for (int o = 0; o < L.out; ++o)
      for (int i = 0; i < L.in; ++i) gi[i] += L.weight[std::size_t(o) * L.in + i] * g[o];
    ops += 2 * std::uint64_t(L.out) * L.in;
    g = std::move(gi);
  }
  if (grad_input) std::copy(g.begin(), g.end(), grad_input);
  return ops;
}

}  // namespace lightplane::reference::detail
