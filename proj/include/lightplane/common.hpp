#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lightplane {

// Error hierarchy. The CLI maps FormatError to exit code 2 and
// DimensionError to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// A cached forward quantity required by a backward pass is missing or does
// not match the call.
class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

template <class Real>
struct Vec3 {
  Real x = 0, y = 0, z = 0;

  constexpr Real operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(Real s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr bool operator==(Vec3 a, Vec3 b) = default;

  Real dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
  Real norm() const { return std::sqrt(dot(*this)); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }

  template <class To>
  Vec3<To> cast() const {
    return {static_cast<To>(x), static_cast<To>(y), static_cast<To>(z)};
  }
};

// Multiply-add counts, split by where they were spent. Counters are only
// ever incremented.
struct FlopCounter {
  std::uint64_t mlp_forward = 0;
  std::uint64_t mlp_backward = 0;
  std::uint64_t interp = 0;

  std::uint64_t total() const { return mlp_forward + mlp_backward + interp; }

  FlopCounter& operator+=(const FlopCounter& o) {
    mlp_forward += o.mlp_forward;
    mlp_backward += o.mlp_backward;
    interp += o.interp;
    return *this;
  }
};

// Tracks bytes held by kernel scratch buffers. Thread-safe.
class ScratchTracker {
 public:
  void allocate(std::size_t bytes) {
    const auto now = current_.fetch_add(static_cast<std::int64_t>(bytes)) +
                     static_cast<std::int64_t>(bytes);
    auto peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
  }
  void release(std::size_t bytes) { current_.fetch_sub(static_cast<std::int64_t>(bytes)); }

  std::int64_t current() const { return current_.load(); }
  std::int64_t peak() const { return peak_.load(); }
  void reset_peak() { peak_.store(current_.load()); }

 private:
  std::atomic<std::int64_t> current_{0};
  std::atomic<std::int64_t> peak_{0};
};

// A heap buffer whose size is reported to a ScratchTracker for its lifetime.
template <class T>
class TrackedBuffer {
 public:
  TrackedBuffer() = default;
  TrackedBuffer(std::size_t n, ScratchTracker* tracker) : data_(n), tracker_(tracker) {
    if (tracker_) tracker_->allocate(bytes());
  }
  TrackedBuffer(const TrackedBuffer&) = delete;
  TrackedBuffer& operator=(const TrackedBuffer&) = delete;
  TrackedBuffer(TrackedBuffer&& o) noexcept : data_(std::move(o.data_)), tracker_(o.tracker_) {
    o.tracker_ = nullptr;
    o.data_.clear();
  }
  TrackedBuffer& operator=(TrackedBuffer&& o) noexcept {
    if (this != &o) {
      if (tracker_) tracker_->release(bytes());
      data_ = std::move(o.data_);
      tracker_ = o.tracker_;
      o.tracker_ = nullptr;
      o.data_.clear();
    }
    return *this;
  }
  ~TrackedBuffer() {
    if (tracker_) tracker_->release(bytes());
  }

  std::size_t size() const { return data_.size(); }
  std::size_t bytes() const { return data_.size() * sizeof(T); }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }

 private:
  std::vector<T> data_;
  ScratchTracker* tracker_ = nullptr;
};

// Reports a block of bytes held elsewhere (e.g. gradient accumulators) to a
// tracker for the lifetime of this object.
class ScratchReservation {
 public:
  ScratchReservation() = default;
  ScratchReservation(ScratchTracker* tracker, std::size_t bytes) : tracker_(tracker), bytes_(bytes) {
    if (tracker_) tracker_->allocate(bytes_);
  }
  ScratchReservation(const ScratchReservation&) = delete;
  ScratchReservation& operator=(const ScratchReservation&) = delete;
  ScratchReservation(ScratchReservation&& o) noexcept : tracker_(o.tracker_), bytes_(o.bytes_) {
    o.tracker_ = nullptr;
  }
  ScratchReservation& operator=(ScratchReservation&& o) noexcept {
    if (this != &o) {
      if (tracker_) tracker_->release(bytes_);
      tracker_ = o.tracker_;
      bytes_ = o.bytes_;
      o.tracker_ = nullptr;
    }
    return *this;
  }
  ~ScratchReservation() {
    if (tracker_) tracker_->release(bytes_);
  }

 private:
  ScratchTracker* tracker_ = nullptr;
  std::size_t bytes_ = 0;
};

// How cross-ray reductions are performed.
//  deterministic: rays are split into a fixed number of contiguous partitions
//    (independent of thread count), each with a private accumulator; partials
//    are merged by a fixed-order pairwise tree.
//  fast: one private accumulator per OpenMP thread, merged in completion
//    order. Results may differ in the last bits between runs.
struct ExecPolicy {
  bool deterministic = true;
  int partitions = 16;
};

struct ExecContext {
  ExecPolicy policy{};
  ScratchTracker* scratch = nullptr;
  FlopCounter* flops = nullptr;
};

// Sets the OpenMP worker count; n <= 0 leaves the runtime default.
void set_num_threads(int n);
int max_threads();

}  // namespace lightplane
