#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lightplane/common.hpp"

namespace lightplane {

enum class Activation : std::uint8_t { identity = 0, relu = 1, softplus = 2, sigmoid = 3 };

template <class Real>
struct DenseLayer {
  int out = 0;
  int in = 0;
  std::vector<Real> weight;  // out x in, row-major
  std::vector<Real> bias;    // out
};

// Weights of a small fully connected decoder. Hidden layers use
// `hidden_activation`; the last layer uses `output_activation`.
template <class Real>
struct MlpParams {
  std::vector<DenseLayer<Real>> layers;
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::identity;

  int in_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int out_dim() const { return layers.empty() ? 0 : layers.back().out; }
  int max_width() const;
  std::size_t param_count() const;
  // Sum of every layer's output width: the activation footprint of one input.
  std::size_t activation_count() const;
  // Multiply-adds of one forward evaluation.
  std::uint64_t forward_flops() const;

  // Throws DimensionError when layer shapes do not chain.
  void validate() const;

  MlpParams zeros_like() const;
  void set_zero();
  MlpParams& operator+=(const MlpParams& o);

  // Flat views over all parameters in layer order (weight then bias).
  std::vector<Real*> parameter_pointers();

  template <class To>
  MlpParams<To> cast() const {
    MlpParams<To> out;
    out.hidden_activation = hidden_activation;
    out.output_activation = output_activation;
    for (const auto& l : layers)
      out.layers.push_back({l.out, l.in, std::vector<To>(l.weight.begin(), l.weight.end()),
                            std::vector<To>(l.bias.begin(), l.bias.end())});
    return out;
  }
};

// Layer widths from input to output, e.g. {K, 64, 64, 1} for a 3-layer net.
struct MlpShape {
  std::vector<int> widths;
  Activation hidden = Activation::relu;
  Activation output = Activation::identity;
};

// Weights and biases uniform in +-1/sqrt(fan_in), from a seeded generator.
template <class Real>
MlpParams<Real> init_mlp(const MlpShape& shape, std::uint64_t seed);

// Default decoder shapes: 3 layers of width 64.
MlpShape sigma_mlp_shape(int in_dim, int width = 64, int layers = 3);
MlpShape feature_mlp_shape(int in_dim, int out_dim, int width = 64, int layers = 3);
MlpShape splat_mlp_shape(int in_dim, int out_dim, int width = 64, int layers = 3);

template <class Real>
Real activate(Activation a, Real z);
// Derivative of the activation, written in terms of its output value.
template <class Real>
Real activation_grad_from_output(Activation a, Real y);

// Per-input workspace: the output of every layer for one input, plus two
// gradient buffers of the widest layer. Reused across inputs; its size does
// not depend on how many inputs are processed.
template <class Real>
class MlpTape {
 public:
  MlpTape() = default;
  MlpTape(const MlpParams<Real>& params, ScratchTracker* tracker = nullptr);

  std::span<const Real> output() const;
  std::span<const Real> layer_output(int l) const;
  std::size_t bytes() const { return acts_.bytes() + grad_a_.bytes() + grad_b_.bytes(); }

  std::span<Real> layer_output(int l);
  std::span<Real> grad_a() { return {grad_a_.data(), grad_a_.size()}; }
  std::span<Real> grad_b() { return {grad_b_.data(), grad_b_.size()}; }

 private:
  std::vector<std::size_t> offsets_;  // start of each layer's output in acts_
  TrackedBuffer<Real> acts_;
  TrackedBuffer<Real> grad_a_;
  TrackedBuffer<Real> grad_b_;
};

// Plain forward evaluation.
template <class Real>
void mlp_forward(const MlpParams<Real>& params, std::span<const Real> input,
                 std::span<Real> output, FlopCounter* flops = nullptr);
template <class Real>
std::vector<Real> mlp_forward(const MlpParams<Real>& params, std::span<const Real> input);

// Forward evaluation recording layer outputs into the tape.
template <class Real>
void mlp_forward_tape(const MlpParams<Real>& params, std::span<const Real> input,
                      MlpTape<Real>& tape, FlopCounter* flops = nullptr);

// Reverse pass over a tape filled by mlp_forward_tape for the same input.
// grad_input (may be empty) is overwritten; grad_params (may be null) is
// accumulated into.
template <class Real>
void mlp_backward_tape(const MlpParams<Real>& params, std::span<const Real> input,
                       MlpTape<Real>& tape, std::span<const Real> upstream,
                       std::span<Real> grad_input, MlpParams<Real>* grad_params,
                       FlopCounter* flops = nullptr);

// Inputs of the form [head | tail] where one tail is shared by many heads.
// mlp_prepare_tail folds the tail and the first bias into `partial` (first
// layer width); the head variants then touch only the head columns.
template <class Real>
void mlp_prepare_tail(const MlpParams<Real>& params, std::span<const Real> tail,
                      std::span<Real> partial, FlopCounter* flops = nullptr);
template <class Real>
void mlp_forward_tape_head(const MlpParams<Real>& params, std::span<const Real> head,
                           std::span<const Real> partial, MlpTape<Real>& tape,
                           FlopCounter* flops = nullptr);
// Like mlp_backward_tape, but the first layer's pre-activation gradient is
// accumulated into grad_partial instead of the tail weights and first bias.
template <class Real>
void mlp_backward_tape_head(const MlpParams<Real>& params, std::span<const Real> head,
                            MlpTape<Real>& tape, std::span<const Real> upstream,
                            std::span<Real> grad_head, MlpParams<Real>* grad_params,
                            std::span<Real> grad_partial, FlopCounter* flops = nullptr);
// Applies an accumulated grad_partial to the tail weights and first bias.
template <class Real>
void mlp_tail_backward(const MlpParams<Real>& params, std::span<const Real> tail,
                       std::span<const Real> grad_partial, MlpParams<Real>& grad_params,
                       FlopCounter* flops = nullptr);

template <class Real>
struct MlpVjp {
  std::vector<Real> grad_input;
  MlpParams<Real> grad_params;
};

// Vector-Jacobian product. Activations are recomputed for this input; nothing
// from an earlier forward call is used.
template <class Real>
MlpVjp<Real> mlp_vjp(const MlpParams<Real>& params, std::span<const Real> input,
                     std::span<const Real> upstream);

// Sinusoidal encoding of a unit ray direction.
struct DirEncConfig {
  int num_frequencies = 4;
  bool include_raw = true;

  int length() const { return 3 * (2 * num_frequencies + (include_raw ? 1 : 0)); }
};

// Writes [d (optional), then per axis: sin(pi f d), cos(pi f d) for
// f = 1, 2, ..., 2^(F-1)] into out. Throws DomainError for non-unit d.
template <class Real>
void direnc(const Vec3<Real>& direction, const DirEncConfig& cfg, std::span<Real> out);
template <class Real>
std::vector<Real> direnc(const Vec3<Real>& direction, const DirEncConfig& cfg);

}  // namespace lightplane
