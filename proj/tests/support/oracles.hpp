#pragma once

// Test-only reference computations, written without the library's kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lightplane/hash3d.hpp"
#include "lightplane/tinymlp.hpp"

namespace oracle {

using lightplane::GridShape;
using lightplane::HashStructure;
using lightplane::StructureKind;
using lightplane::Vec3;

// Hat function of vertex i at continuous index u.
inline double hat(double u, int i) { return std::max(0.0, 1.0 - std::abs(u - i)); }

inline bool inside(const Vec3<double>& x) {
  return std::abs(x.x) <= 1.0 && std::abs(x.y) <= 1.0 && std::abs(x.z) <= 1.0;
}

inline double to_index(double x, int n) { return n == 1 ? 0.0 : (x + 1.0) * 0.5 * (n - 1); }

// Interpolation weight of every cell, by summing hat functions over the
// whole grid. Cell order matches the flat storage layout.
inline std::vector<double> cell_weights(const GridShape& s, const Vec3<double>& x) {
  std::vector<double> w(s.cells(), 0.0);
  if (!inside(x)) return w;
  const double u = to_index(x.x, s.H), v = to_index(x.y, s.W), t = to_index(x.z, s.D);
  if (s.kind == StructureKind::voxel) {
    for (int i = 0; i < s.H; ++i)
      for (int j = 0; j < s.W; ++j)
        for (int k = 0; k < s.D; ++k)
          w[(std::size_t(i) * s.W + j) * s.D + k] = hat(u, i) * hat(v, j) * hat(t, k);
    return w;
  }
  std::size_t base = 0;
  for (int i = 0; i < s.H; ++i)
    for (int j = 0; j < s.W; ++j) w[base + std::size_t(i) * s.W + j] = hat(u, i) * hat(v, j);
  base += std::size_t(s.H) * s.W;
  for (int j = 0; j < s.W; ++j)
    for (int k = 0; k < s.D; ++k) w[base + std::size_t(j) * s.D + k] = hat(v, j) * hat(t, k);
  base += std::size_t(s.W) * s.D;
  for (int k = 0; k < s.D; ++k)
    for (int i = 0; i < s.H; ++i) w[base + std::size_t(k) * s.H + i] = hat(t, k) * hat(u, i);
  return w;
}

template <class Real>
std::vector<double> sample(const HashStructure<Real>& g, const Vec3<double>& x) {
  const auto& s = g.shape();
  const auto w = cell_weights(s, x);
  std::vector<double> out(s.K, 0.0);
  for (std::size_t c = 0; c < w.size(); ++c)
    if (w[c] != 0.0)
      for (int k = 0; k < s.K; ++k) out[k] += w[c] * double(g.data()[c * s.K + k]);
  return out;
}

inline double act(lightplane::Activation a, double z) {
  switch (a) {
    case lightplane::Activation::identity: return z;
    case lightplane::Activation::relu: return z > 0 ? z : 0;
    case lightplane::Activation::softplus: return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0);
    case lightplane::Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Plain matrix-vector products in long double.
template <class Real>
std::vector<double> mlp(const lightplane::MlpParams<Real>& p, const std::vector<double>& input) {
  std::vector<long double> a(input.begin(), input.end());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<long double> b(L.out);
    for (int o = 0; o < L.out; ++o) {
      long double z = L.bias[o];
      for (int i = 0; i < L.in; ++i) z += (long double)L.weight[std::size_t(o) * L.in + i] * a[i];
      b[o] = act(l + 1 == p.layers.size() ? p.output_activation : p.hidden_activation, double(z));
    }
    a = b;
  }
  return {a.begin(), a.end()};
}

// Emission-absorption for one ray from per-sample opacities (R + 1) and
// features (R + 1 rows of C). Transmittance is recomputed from scratch for
// every sample.
inline std::vector<double> composite(const std::vector<double>& sigma,
                                     const std::vector<std::vector<double>>& feature, double delta) {
  const std::size_t C = feature.front().size();
  auto T = [&](std::size_t j) {
    double s = 0.0;
    for (std::size_t n = 0; n <= j; ++n) s += sigma[n];
    return std::exp(-delta * s);
  };
  std::vector<double> v(C, 0.0);
  for (std::size_t j = 1; j < sigma.size(); ++j)
    for (std::size_t c = 0; c < C; ++c) v[c] += (T(j - 1) - T(j)) * feature[j][c];
  return v;
}

inline double central_difference(double& x, double eps, const std::function<double()>& f) {
  const double x0 = x;
  x = x0 + eps;
  const double fp = f();
  x = x0 - eps;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * eps);
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// max |a - b| / max |b|
template <class A, class B>
double max_rel_diff(const A& a, const B& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < std::size(b); ++i) {
    num = std::max(num, std::abs(double(a[i]) - double(b[i])));
    den = std::max(den, std::abs(double(b[i])));
  }
  return den == 0.0 ? num : num / den;
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < std::size(b); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

inline Vec3<double> random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3<double> d{n(rng), n(rng), n(rng)};
  return (1.0 / d.norm()) * d;
}

}  // namespace oracle
