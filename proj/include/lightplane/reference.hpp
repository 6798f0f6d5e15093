#pragma once

// Serial store-everything implementations of the renderer and splatter.
// They keep every per-sample intermediate in memory and differentiate by
// plain reverse-mode over that record, so they serve as oracles for the
// fused kernels and as the memory baseline in benchmarks.

#include <span>
#include <vector>

#include "lightplane/renderer.hpp"
#include "lightplane/splatter.hpp"

namespace lightplane::reference {

// Everything the naive renderer keeps per sample: the sampled feature, the
// pre-activations of every decoder layer, the opacity and the transmittance.
template <class Real>
struct NaiveRenderTape {
  int points_per_ray = 0;
  std::size_t stride = 0;           // Real values per sample
  TrackedBuffer<Real> values;       // num_rays * points_per_ray * stride
  TrackedBuffer<double> transmittance;
  TrackedBuffer<Real> direction_encoding;  // num_rays * E
};

template <class Real>
struct NaiveRender {
  RenderOutput<Real> output;
  NaiveRenderTape<Real> tape;
};

template <class Real>
NaiveRender<Real> render_forward_naive(const RadianceField<Real>& field,
                                       const RaySamples<Real>& samples,
                                       const RenderOptions& options = {},
                                       const ExecContext& ctx = {});

template <class Real>
RenderGrads<Real> render_backward_naive(const RadianceField<Real>& field,
                                        const RaySamples<Real>& samples,
                                        const NaiveRender<Real>& forward,
                                        std::span<const Real> upstream,
                                        const RenderOptions& options = {},
                                        const ExecContext& ctx = {});

// Bytes the naive renderer stores per sample point.
template <class Real>
std::size_t naive_render_bytes_per_sample(const RadianceField<Real>& field);

template <class Real>
struct NaiveSplat {
  SplatResult<Real> result;
  int points_per_ray = 0;
  std::size_t stride = 0;
  TrackedBuffer<Real> values;  // per sample: splat-decoder input and layer pre-activations
};

template <class Real>
NaiveSplat<Real> splat_forward_naive(const SplatInputs<Real>& inputs, const GridShape& target,
                                     const ExecContext& ctx = {});

template <class Real>
SplatGrads<Real> splat_backward_naive(const SplatInputs<Real>& inputs, const GridShape& target,
                                      const NaiveSplat<Real>& forward,
                                      const HashStructure<Real>& grad_normalized,
                                      const ExecContext& ctx = {});

template <class Real>
std::size_t naive_splat_bytes_per_sample(const SplatInputs<Real>& inputs, const GridShape& target);

}  // namespace lightplane::reference
