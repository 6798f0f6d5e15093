#include "lightplane/hash3d.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace lightplane {

std::size_t GridShape::cells() const {
  const auto h = static_cast<std::size_t>(H), w = static_cast<std::size_t>(W),
             d = static_cast<std::size_t>(D);
  return kind == StructureKind::voxel ? h * w * d : h * w + w * d + d * h;
}

void GridShape::validate() const {
  if (H <= 0 || W <= 0 || D <= 0 || K <= 0)
    throw DimensionError("grid dims and channels must be positive");
  if (kind != StructureKind::voxel && kind != StructureKind::triplane)
    throw DimensionError("unknown structure kind");
  if (cells() > std::numeric_limits<std::uint32_t>::max())
    throw DimensionError("grid has too many cells");
}

namespace {

// Lower index and fractional offset along one axis with n vertices.
// Returns false when the coordinate lies outside [-1, 1].
template <class Real>
bool axis_coord(Real x, int n, int& i0, Real& frac) {
  if (!(x >= Real(-1) && x <= Real(1))) return false;
  if (n == 1) {
    i0 = 0;
    frac = Real(0);
    return true;
  }
  const Real u = (x + Real(1)) * Real(0.5) * Real(n - 1);
  int i = static_cast<int>(std::floor(u));
  i = std::clamp(i, 0, n - 2);
  i0 = i;
  frac = std::clamp(u - Real(i), Real(0), Real(1));
  return true;
}

// Appends the 4 bilinear taps of a (rows x cols) plane, stored row-major
// starting at cell `base`.
template <class Real>
void plane_taps(Taps<Real>& taps, std::uint32_t base, int cols, int r0, Real fr, int nr, int c0,
                Real fc, int nc) {
  const int r1 = nr == 1 ? r0 : r0 + 1;
  const int c1 = nc == 1 ? c0 : c0 + 1;
  const Real wr[2] = {Real(1) - fr, fr};
  const Real wc[2] = {Real(1) - fc, fc};
  const int rr[2] = {r0, r1};
  const int cc[2] = {c0, c1};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      taps.cell[taps.count] = base + static_cast<std::uint32_t>(rr[a] * cols + cc[b]);
      taps.weight[taps.count] = wr[a] * wc[b];
      ++taps.count;
    }
}

}  // namespace

template <class Real>
Taps<Real> compute_taps(const GridShape& shape, const Vec3<Real>& x) {
  if (!x.finite()) throw DomainError("non-finite sample point");
  Taps<Real> taps;
  int i, j, k;
  Real fi, fj, fk;
  if (!axis_coord(x.x, shape.H, i, fi) || !axis_coord(x.y, shape.W, j, fj) ||
      !axis_coord(x.z, shape.D, k, fk))
    return taps;

  if (shape.kind == StructureKind::voxel) {
    const int di = shape.H == 1 ? 0 : 1, dj = shape.W == 1 ? 0 : 1, dk = shape.D == 1 ? 0 : 1;
    const Real wi[2] = {Real(1) - fi, fi};
    const Real wj[2] = {Real(1) - fj, fj};
    const Real wk[2] = {Real(1) - fk, fk};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c) {
          const auto cell = (static_cast<std::uint32_t>(i + a * di) * shape.W +
                             static_cast<std::uint32_t>(j + b * dj)) *
                                shape.D +
                            static_cast<std::uint32_t>(k + c * dk);
          taps.cell[taps.count] = cell;
          taps.weight[taps.count] = wi[a] * wj[b] * wk[c];
          ++taps.count;
        }
    return taps;
  }

  const auto hw = static_cast<std::uint32_t>(shape.H * shape.W);
  const auto wd = static_cast<std::uint32_t>(shape.W * shape.D);
  plane_taps(taps, 0, shape.W, i, fi, shape.H, j, fj, shape.W);        // xy: H x W
  plane_taps(taps, hw, shape.D, j, fj, shape.W, k, fk, shape.D);       // yz: W x D
  plane_taps(taps, hw + wd, shape.H, k, fk, shape.D, i, fi, shape.H);  // zx: D x H
  return taps;
}

template <class Real>
HashStructure<Real>::HashStructure(const GridShape& shape) : shape_(shape) {
  shape_.validate();
  data_.assign(shape_.size(), Real(0));
}

template <class Real>
std::span<Real> HashStructure<Real>::plane(int index) {
  auto c = std::as_const(*this).plane(index);
  return {const_cast<Real*>(c.data()), c.size()};
}

template <class Real>
std::span<const Real> HashStructure<Real>::plane(int index) const {
  const std::size_t K = shape_.K;
  if (shape_.kind == StructureKind::voxel) {
    if (index != 0) throw DimensionError("voxel grids have a single plane");
    return data_;
  }
  const std::size_t hw = std::size_t(shape_.H) * shape_.W, wd = std::size_t(shape_.W) * shape_.D,
                    dh = std::size_t(shape_.D) * shape_.H;
  std::span<const Real> all = data_;
  switch (index) {
    case 0: return all.subspan(0, hw * K);
    case 1: return all.subspan(hw * K, wd * K);
    case 2: return all.subspan((hw + wd) * K, dh * K);
    default: throw DimensionError("triplane plane index out of range");
  }
}

template <class Real>
void HashStructure<Real>::sample(const Vec3<Real>& x, std::span<Real> out) const {
  if (out.size() != static_cast<std::size_t>(shape_.K))
    throw DimensionError("sample output length != channel count");
  gather_taps(compute_taps(shape_, x), std::span<const Real>(data_), shape_.K, out.data());
}

template <class Real>
std::vector<Real> HashStructure<Real>::sample(const Vec3<Real>& x) const {
  std::vector<Real> out(shape_.K);
  sample(x, out);
  return out;
}

template <class Real>
void HashStructure<Real>::splat_accumulate(const Vec3<Real>& x, std::span<const Real> value,
                                           Real weight) {
  if (value.size() != static_cast<std::size_t>(shape_.K))
    throw DimensionError("splat value length != channel count");
  if (!(weight >= Real(0))) throw DomainError("splat weight must be nonnegative");
  scatter_taps(compute_taps(shape_, x), std::span<Real>(data_), shape_.K, value.data(), weight);
}

template <class Real>
void HashStructure<Real>::sample_vjp(const Vec3<Real>& x, std::span<const Real> upstream,
                                     HashStructure& grad) const {
  if (grad.shape() != shape_) throw DimensionError("gradient structure shape mismatch");
  grad.splat_accumulate(x, upstream, Real(1));
}

template <class Real>
void HashStructure<Real>::fill(Real v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <class Real>
bool HashStructure<Real>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

void ContractConfig::validate() const {
  if (!(scale_a > 0.0f && scale_a < 2.0f)) throw DomainError("contract scale must lie in (0, 2)");
}

namespace {

// Contracted magnitude for radius r >= 0; the direction is handled by the caller.
double contract_radius(double r, double a) {
  if (r <= 1.0) return 0.5 * a * r;
  return 0.5 * ((2.0 - a) * (1.0 - 1.0 / r) + a);
}

template <class Real>
Real below_one(double v) {
  const Real lim = std::nextafter(Real(1), Real(0));
  return static_cast<Real>(std::clamp(v, -double(lim), double(lim)));
}

}  // namespace

template <class Real>
Vec3<Real> contract(const Vec3<Real>& x, const ContractConfig& cfg) {
  cfg.validate();
  const double a = cfg.scale_a;
  if (cfg.mode == ContractMode::per_axis) {
    auto axis = [a](Real v) {
      const double r = std::abs(double(v));
      return below_one<Real>(std::copysign(contract_radius(r, a), double(v)));
    };
    return {axis(x.x), axis(x.y), axis(x.z)};
  }
  const auto xd = x.template cast<double>();
  const double r = xd.norm();
  if (r <= 1.0) return (0.5 * a * xd).template cast<Real>();
  const double s = contract_radius(r, a) / r;
  return {below_one<Real>(s * xd.x), below_one<Real>(s * xd.y), below_one<Real>(s * xd.z)};
}

template struct Taps<float>;
template struct Taps<double>;
template Taps<float> compute_taps(const GridShape&, const Vec3<float>&);
template Taps<double> compute_taps(const GridShape&, const Vec3<double>&);
template class HashStructure<float>;
template class HashStructure<double>;
template Vec3<float> contract(const Vec3<float>&, const ContractConfig&);
template Vec3<double> contract(const Vec3<double>&, const ContractConfig&);

}  // namespace lightplane
