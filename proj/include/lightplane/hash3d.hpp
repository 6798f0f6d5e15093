#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lightplane/common.hpp"

namespace lightplane {

enum class StructureKind : std::uint32_t { voxel = 0, triplane = 1 };

// Geometry of a hashed 3D representation. Voxel grids hold H*W*D cells;
// triplanes hold the xy (H*W), yz (W*D) and zx (D*H) planes back to back.
// World coordinates x, y, z in [-1, 1] map affinely onto index ranges
// [0, H-1], [0, W-1], [0, D-1].
struct GridShape {
  StructureKind kind = StructureKind::voxel;
  int H = 1, W = 1, D = 1;
  int K = 1;

  std::size_t cells() const;
  std::size_t size() const { return cells() * static_cast<std::size_t>(K); }
  GridShape with_channels(int k) const { return {kind, H, W, D, k}; }
  void validate() const;

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

// Interpolation stencil of a point: up to 8 trilinear taps for voxels, or
// 3 planes x 4 bilinear taps for triplanes. Weights are nonnegative and sum
// to one (per plane for triplanes). An out-of-bounds point has no taps.
template <class Real>
struct Taps {
  std::array<std::uint32_t, 12> cell{};
  std::array<Real, 12> weight{};
  int count = 0;
};

// Computes the stencil for world point x. Throws DomainError on non-finite x.
template <class Real>
Taps<Real> compute_taps(const GridShape& shape, const Vec3<Real>& x);

template <class Real>
class HashStructure {
 public:
  HashStructure() = default;
  explicit HashStructure(const GridShape& shape);

  static HashStructure voxel(int H, int W, int D, int K) {
    return HashStructure(GridShape{StructureKind::voxel, H, W, D, K});
  }
  static HashStructure triplane(int H, int W, int D, int K) {
    return HashStructure(GridShape{StructureKind::triplane, H, W, D, K});
  }

  const GridShape& shape() const { return shape_; }
  StructureKind kind() const { return shape_.kind; }
  int channels() const { return shape_.K; }
  std::size_t size() const { return data_.size(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }

  // Triplane planes in xy, yz, zx order. Voxel grids have a single "plane".
  std::span<Real> plane(int index);
  std::span<const Real> plane(int index) const;

  // Feature at world point x (K values). Zero outside [-1, 1]^3.
  void sample(const Vec3<Real>& x, std::span<Real> out) const;
  std::vector<Real> sample(const Vec3<Real>& x) const;

  // Adds w_c * weight * value into every cell of x's stencil.
  void splat_accumulate(const Vec3<Real>& x, std::span<const Real> value, Real weight);

  // Gradient of sample() w.r.t. the structure values: the same scatter as
  // splat_accumulate with weight 1, accumulated into grad.
  void sample_vjp(const Vec3<Real>& x, std::span<const Real> upstream,
                  HashStructure& grad) const;

  void fill(Real v);
  void set_zero() { fill(Real(0)); }
  bool all_finite() const;

  template <class To>
  HashStructure<To> cast() const {
    HashStructure<To> out(shape_);
    auto dst = out.data();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<To>(data_[i]);
    return out;
  }

 private:
  GridShape shape_{};
  std::vector<Real> data_;
};

// Stencil primitives shared by the kernels. `feature` and `value` hold K
// entries; the data span is a structure's flat storage.
template <class Real>
inline void gather_taps(const Taps<Real>& taps, std::span<const Real> data, int K,
                        Real* feature) {
  for (int k = 0; k < K; ++k) feature[k] = Real(0);
  for (int t = 0; t < taps.count; ++t) {
    const Real w = taps.weight[t];
    const Real* src = data.data() + static_cast<std::size_t>(taps.cell[t]) * K;
    for (int k = 0; k < K; ++k) feature[k] += w * src[k];
  }
}

template <class Real>
inline void scatter_taps(const Taps<Real>& taps, std::span<Real> data, int K,
                         const Real* value, Real scale) {
  for (int t = 0; t < taps.count; ++t) {
    const Real w = taps.weight[t] * scale;
    Real* dst = data.data() + static_cast<std::size_t>(taps.cell[t]) * K;
    for (int k = 0; k < K; ++k) dst[k] += w * value[k];
  }
}

enum class ContractMode : std::uint8_t { per_axis = 0, radial = 1 };

// Contraction of unbounded space into the open cube (-1, 1)^3.
// Foreground (|x| <= 1) maps to [-a/2, a/2].
struct ContractConfig {
  float scale_a = 1.0f;
  bool enabled = false;
  ContractMode mode = ContractMode::per_axis;

  void validate() const;
};

template <class Real>
Vec3<Real> contract(const Vec3<Real>& x, const ContractConfig& cfg);

}  // namespace lightplane
