#pragma once

#include <span>
#include <vector>

#include "lightplane/common.hpp"
#include "lightplane/hash3d.hpp"
#include "lightplane/rays.hpp"
#include "lightplane/tinymlp.hpp"

namespace lightplane {

// f = g o h: a hash structure decoded by an opacity MLP (K -> 1) and a
// feature MLP (K + direnc length -> C).
template <class Real>
struct RadianceField {
  HashStructure<Real> grid;
  MlpParams<Real> sigma_mlp;
  MlpParams<Real> feature_mlp;
  DirEncConfig direnc{};

  int channels() const { return feature_mlp.out_dim(); }
  // Throws DimensionError when the decoders do not fit the grid.
  void validate() const;

  template <class To>
  RadianceField<To> cast() const {
    return {grid.template cast<To>(), sigma_mlp.template cast<To>(),
            feature_mlp.template cast<To>(), direnc};
  }
};

struct RenderOptions {
  bool expected_depth = false;
  // Decoded opacities are clamped to [0, sigma_max].
  double sigma_max = 1e4;
};

// Transmittance is carried in double precision in both passes; the cached
// final transmittance is one double per ray.
template <class Real>
struct RenderOutput {
  std::size_t num_rays = 0;
  int channels = 0;
  std::vector<Real> features;               // num_rays x channels
  std::vector<double> final_transmittance;  // T_R per ray
  std::vector<Real> expected_depth;         // empty unless requested

  std::span<const Real> feature(std::size_t ray) const {
    return {features.data() + ray * channels, std::size_t(channels)};
  }
};

template <class Real>
struct RenderGrads {
  HashStructure<Real> grid;
  MlpParams<Real> sigma_mlp;
  MlpParams<Real> feature_mlp;

  static RenderGrads zeros_like(const RadianceField<Real>& f) {
    return {HashStructure<Real>(f.grid.shape()), f.sigma_mlp.zeros_like(),
            f.feature_mlp.zeros_like()};
  }
  RenderGrads& operator+=(const RenderGrads& o);
};

// Fused forward pass: one streaming loop per ray that keeps only the
// feature accumulator and the running transmittance.
template <class Real>
RenderOutput<Real> render_forward_fused(const RadianceField<Real>& field,
                                        const RaySamples<Real>& samples,
                                        const RenderOptions& options = {},
                                        const ExecContext& ctx = {});

// Fused backward pass. Marches each ray from the last sample to the first,
// rebuilding transmittance from the cached T_R and recomputing every decoder
// activation. upstream holds dL/dv (num_rays x channels).
template <class Real>
RenderGrads<Real> render_backward_fused(const RadianceField<Real>& field,
                                        const RaySamples<Real>& samples,
                                        std::span<const Real> upstream,
                                        std::span<const double> final_transmittance,
                                        const RenderOptions& options = {},
                                        const ExecContext& ctx = {});

// Replays the forward transmittance sequence and the backward reconstruction
// from T_R and returns the largest absolute difference over all rays and
// samples.
template <class Real>
double reconstruct_transmittance_check(const RadianceField<Real>& field,
                                       const RaySamples<Real>& samples,
                                       std::span<const double> final_transmittance,
                                       const RenderOptions& options = {});

// Scratch bytes one worker needs to process a ray in the fused kernels.
template <class Real>
std::size_t fused_render_workspace_bytes(const RadianceField<Real>& field);

}  // namespace lightplane
