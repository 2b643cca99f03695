#pragma once

#include <random>
#include <string>
#include <vector>

#include "lesact/nn/feature_map.hpp"

namespace lesact::nn {

/// A trainable tensor with its accumulated gradient.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(Matrix<Scalar>::Zero(rows, cols)), grad(Matrix<Scalar>::Zero(rows, cols)) {}

  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

/// 3D convolution with zero padding (kernel / 2) and optional stride.
///
/// The weight is out x (kernel^3 * in); column k * in + c holds input channel
/// c at kernel offset k = (dz * K + dy) * K + dx.
template <typename Scalar>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, Index in_channels, Index out_channels, int kernel, int stride = 1);

  Shape3 output_shape(const Shape3& in) const;
  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& in) const;

  /// Accumulates weight and bias gradients; returns the input gradient
  /// (empty when `input_grad` is false).
  FeatureMap<Scalar> backward(const FeatureMap<Scalar>& in, const FeatureMap<Scalar>& grad_out, bool input_grad = true);

  /// He-normal weights (std = sqrt(2 / fan_in)), zero bias.
  void init_he(std::mt19937_64& rng);

  Index in_channels() const { return in_channels_; }
  Index out_channels() const { return out_channels_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }

  template <typename F>
  void visit(F&& f) {
    f(weight);
    f(bias);
  }
  template <typename F>
  void visit(F&& f) const {
    f(weight);
    f(bias);
  }

  Parameter<Scalar> weight;
  Parameter<Scalar> bias;

 private:
  Index in_channels_ = 0;
  Index out_channels_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
};

/// Per-sample, per-channel normalisation over the spatial extent with a
/// learned per-channel affine transform.
template <typename Scalar>
class InstanceNorm3d {
 public:
  struct Trace {
    Matrix<Scalar> normalized;
    Vector<Scalar> inv_std;
  };

  static constexpr double kEpsilon = 1e-5;

  InstanceNorm3d() = default;
  InstanceNorm3d(const std::string& name, Index channels);

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& in, Trace* trace = nullptr) const;
  FeatureMap<Scalar> backward(const Trace& trace, const FeatureMap<Scalar>& grad_out);

  template <typename F>
  void visit(F&& f) {
    f(scale);
    f(shift);
  }
  template <typename F>
  void visit(F&& f) const {
    f(scale);
    f(shift);
  }

  Parameter<Scalar> scale;
  Parameter<Scalar> shift;
};

/// Pre-activation residual block: x + conv(relu(norm(conv(relu(norm(x)))))).
template <typename Scalar>
class ResidualBlock {
 public:
  struct Trace {
    typename InstanceNorm3d<Scalar>::Trace norm1, norm2;
    FeatureMap<Scalar> act1, act2;
  };

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, Index channels);

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, Trace* trace = nullptr) const;
  FeatureMap<Scalar> backward(const Trace& trace, const FeatureMap<Scalar>& grad_out);
  void init_he(std::mt19937_64& rng);

  template <typename F>
  void visit(F&& f) {
    norm1.visit(f);
    conv1.visit(f);
    norm2.visit(f);
    conv2.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    norm1.visit(f);
    conv1.visit(f);
    norm2.visit(f);
    conv2.visit(f);
  }

  InstanceNorm3d<Scalar> norm1;
  Conv3d<Scalar> conv1;
  InstanceNorm3d<Scalar> norm2;
  Conv3d<Scalar> conv2;
};

/// conv(relu(norm(x))): a plain convolution in pre-activation form.
template <typename Scalar>
class PreActConv {
 public:
  struct Trace {
    typename InstanceNorm3d<Scalar>::Trace norm;
    FeatureMap<Scalar> act;
  };

  PreActConv() = default;
  PreActConv(const std::string& name, Index in_channels, Index out_channels, int kernel, int stride = 1);

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, Trace* trace = nullptr) const;
  FeatureMap<Scalar> backward(const Trace& trace, const FeatureMap<Scalar>& grad_out);
  void init_he(std::mt19937_64& rng) { conv.init_he(rng); }

  template <typename F>
  void visit(F&& f) {
    norm.visit(f);
    conv.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    norm.visit(f);
    conv.visit(f);
  }

  InstanceNorm3d<Scalar> norm;
  Conv3d<Scalar> conv;
};

template <typename Scalar>
void relu_inplace(Matrix<Scalar>& m) {
  m = m.cwiseMax(Scalar(0));
}

/// grad * (activation > 0), given the ReLU output.
template <typename Scalar>
Matrix<Scalar> relu_backward(const Matrix<Scalar>& activation, const Matrix<Scalar>& grad) {
  return (activation.array() > Scalar(0)).select(grad, Scalar(0));
}

template <typename Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& z) {
  return (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
}

/// Nearest-neighbour 2x upsampling and its adjoint (sum over each 2x2x2 block).
template <typename Scalar>
FeatureMap<Scalar> upsample2(const FeatureMap<Scalar>& in);
template <typename Scalar>
FeatureMap<Scalar> upsample2_backward(const FeatureMap<Scalar>& grad_out);

}  // namespace lesact::nn
