#pragma once

#include <span>
#include <vector>

#include "lightplane/common.hpp"
#include "lightplane/hash3d.hpp"
#include "lightplane/rays.hpp"
#include "lightplane/tinymlp.hpp"

namespace lightplane {

// Guard for the cell-wise normalization theta / max(theta_weight, eps).
inline constexpr double kSplatEpsilon = 1e-8;

// Per-pixel features pushed along their rays into a hash structure.
//
// Without a splat decoder every sample carries its pixel feature. With one,
// sample j of ray i carries g_s([v_i | prior(x_ij) | direnc(d_i) | x_ij]),
// where the prior block is present only with a prior structure and the
// position block only with append_position.
template <class Real>
struct SplatInputs {
  std::span<const Real> features;  // num_rays x channels
  int channels = 0;
  const RaySamples<Real>& samples;
  const HashStructure<Real>* prior = nullptr;
  const MlpParams<Real>* splat_mlp = nullptr;
  DirEncConfig direnc{};
  bool append_position = false;

  int prior_channels() const { return prior ? prior->channels() : 0; }
  int decoder_input_dim() const {
    return channels + prior_channels() + direnc.length() + (append_position ? 3 : 0);
  }
  int output_channels() const { return splat_mlp ? splat_mlp->out_dim() : channels; }
  // Throws DimensionError on any shape disagreement with the target.
  void validate(const GridShape& target) const;
};

template <class Real>
struct SplatResult {
  HashStructure<Real> theta;         // accumulated features
  HashStructure<Real> theta_weight;  // accumulated interpolation weights, one channel
  HashStructure<Real> normalized;    // theta / max(theta_weight, eps); 0 where untouched
};

template <class Real>
struct SplatGrads {
  std::vector<Real> features;   // num_rays x channels
  HashStructure<Real> prior;    // empty without a prior
  MlpParams<Real> splat_mlp;    // empty without a decoder
};

// Cell-wise theta / max(weight, eps), exactly zero where weight == 0.
template <class Real>
HashStructure<Real> normalize_splat(const HashStructure<Real>& theta,
                                    const HashStructure<Real>& weight);

// Fused two-pass splatting. Pass one accumulates the (decoded) features,
// pass two accumulates unit weights with the decoder and prior disabled.
// In deterministic mode rays are processed in a canonical content order, so
// reordering the input rays leaves the result bit-identical.
template <class Real>
SplatResult<Real> splat_forward_fused(const SplatInputs<Real>& inputs, const GridShape& target,
                                      const ExecContext& ctx = {});

// Backward of the normalized output, treating theta_weight as a constant.
template <class Real>
SplatGrads<Real> splat_backward_fused(const SplatInputs<Real>& inputs, const GridShape& target,
                                      const HashStructure<Real>& grad_normalized,
                                      const HashStructure<Real>& theta_weight,
                                      const ExecContext& ctx = {});

// Raw weighted scatter of point values (num_points x K) into a zero
// structure: the exact transpose of sampling.
template <class Real>
HashStructure<Real> splat_plain(std::span<const Vec3<Real>> points, std::span<const Real> values,
                                std::span<const Real> weights, const GridShape& target);

// Ray order used by deterministic splatting: sorted by ray content.
template <class Real>
std::vector<std::size_t> canonical_ray_order(const SplatInputs<Real>& inputs);

template <class Real>
std::size_t fused_splat_workspace_bytes(const SplatInputs<Real>& inputs);

}  // namespace lightplane
