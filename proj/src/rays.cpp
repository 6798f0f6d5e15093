#include "lightplane/rays.hpp"

#include <cmath>

namespace lightplane {

namespace {

Vec3<double> mat_vec(const std::array<double, 9>& m, const Vec3<double>& v) {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

Vec3<double> mat_t_vec(const std::array<double, 9>& m, const Vec3<double>& v) {
  return {m[0] * v.x + m[3] * v.y + m[6] * v.z, m[1] * v.x + m[4] * v.y + m[7] * v.z,
          m[2] * v.x + m[5] * v.y + m[8] * v.z};
}

Vec3<double> cross(const Vec3<double>& a, const Vec3<double>& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

Vec3<double> normalized(const Vec3<double>& v) { return (1.0 / v.norm()) * v; }

// splitmix64
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0)
    throw DomainError("degenerate camera intrinsics");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += rotation[k * 3 + r] * rotation[k * 3 + c];
      if (std::abs(dot - (r == c ? 1.0 : 0.0)) > 1e-5)
        throw DomainError("camera rotation is not orthonormal");
    }
  if (!(near >= 0.0) || !(far > near)) throw DomainError("camera needs 0 <= near < far");
}

std::array<double, 2> Camera::project(const Vec3<double>& world) const {
  const auto pc = mat_t_vec(rotation, world - center);
  return {fx * pc.x / pc.z + cx, fy * pc.y / pc.z + cy};
}

Camera look_at(const Vec3<double>& eye, const Vec3<double>& target, const Vec3<double>& up,
               int width, int height, double focal, double near, double far) {
  const auto fwd = normalized(target - eye);
  const auto right = normalized(cross(fwd, up));
  const auto down = cross(fwd, right);
  Camera cam;
  cam.fx = cam.fy = focal;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.width = width;
  cam.height = height;
  // columns are the camera axes expressed in world coordinates
  cam.rotation = {right.x, down.x, fwd.x, right.y, down.y, fwd.y, right.z, down.z, fwd.z};
  cam.center = eye;
  cam.near = near;
  cam.far = far;
  return cam;
}

template <class Real>
void RayBundle<Real>::validate() const {
  if (origins.size() != directions.size())
    throw DimensionError("ray bundle origin/direction count mismatch");
  if (!(near >= Real(0)) || !(far > near)) throw DomainError("ray bundle needs 0 <= near < far");
  for (const auto& d : directions)
    if (!d.finite() || std::abs(double(d.norm()) - 1.0) > 1e-4)
      throw DomainError("ray direction is not unit length");
}

template <class Real>
RayBundle<Real> rays_from_camera(const Camera& camera, double near, double far) {
  camera.validate();
  RayBundle<Real> b;
  b.near = static_cast<Real>(near);
  b.far = static_cast<Real>(far);
  if (!(near >= 0.0) || !(far > near)) throw DomainError("ray bundle needs 0 <= near < far");
  const std::size_t m = std::size_t(camera.width) * camera.height;
  b.origins.assign(m, camera.center.cast<Real>());
  b.directions.resize(m);
  for (int v = 0; v < camera.height; ++v)
    for (int u = 0; u < camera.width; ++u) {
      const Vec3<double> dc{(u + 0.5 - camera.cx) / camera.fx, (v + 0.5 - camera.cy) / camera.fy,
                            1.0};
      b.directions[std::size_t(v) * camera.width + u] =
          normalized(mat_vec(camera.rotation, dc)).cast<Real>();
    }
  return b;
}

template <class Real>
RaySamples<Real>::RaySamples(RayBundle<Real> bundle, int intervals, ContractConfig contract)
    : bundle_(std::move(bundle)), intervals_(intervals), contract_(contract) {
  if (intervals < 1) throw DomainError("need at least one interval per ray");
  bundle_.validate();
  if (contract_.enabled) contract_.validate();
  delta_ = (bundle_.far - bundle_.near) / static_cast<Real>(intervals_);
}

template <class Real>
void RaySamples<Real>::set_jitter(std::uint64_t seed) {
  jitter_.resize(bundle_.size());
  for (std::size_t i = 0; i < jitter_.size(); ++i) {
    const double u = double(mix(seed ^ mix(i)) >> 11) * 0x1.0p-53;
    jitter_[i] = static_cast<Real>(u - 0.5);
  }
}

template <class Real>
Real RaySamples<Real>::t(std::size_t ray, int j) const {
  const Real jj = jitter_.empty() ? Real(j) : Real(j) + jitter_[ray];
  return bundle_.near + jj * delta_;
}

template <class Real>
Vec3<Real> RaySamples<Real>::raw_point(std::size_t ray, int j) const {
  return bundle_.origins[ray] + t(ray, j) * bundle_.directions[ray];
}

template <class Real>
Vec3<Real> RaySamples<Real>::point(std::size_t ray, int j) const {
  const auto p = raw_point(ray, j);
  return contract_.enabled ? contract(p, contract_) : p;
}

template <class Real>
RaySamples<Real> RaySamples<Real>::permuted(std::span<const std::size_t> perm) const {
  if (perm.size() != num_rays()) throw DimensionError("permutation length mismatch");
  RayBundle<Real> b;
  b.near = bundle_.near;
  b.far = bundle_.far;
  for (auto p : perm) {
    b.origins.push_back(bundle_.origins.at(p));
    b.directions.push_back(bundle_.directions.at(p));
  }
  RaySamples out(std::move(b), intervals_, contract_);
  if (!jitter_.empty())
    for (auto p : perm) out.jitter_.push_back(jitter_[p]);
  return out;
}

template struct RayBundle<float>;
template struct RayBundle<double>;
template RayBundle<float> rays_from_camera<float>(const Camera&, double, double);
template RayBundle<double> rays_from_camera<double>(const Camera&, double, double);
template class RaySamples<float>;
template class RaySamples<double>;

}  // namespace lightplane
