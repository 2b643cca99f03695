#include "lesact/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lesact::nn {

namespace {

// Upper bound on scalars in one im2col buffer.
constexpr Index kColumnBudget = Index{1} << 22;

struct ConvGeometry {
  Shape3 in;
  Shape3 out;
  int kernel;
  int stride;
  int pad;
};

// Gather the receptive fields of output voxels [first, first + count) into `col`.
template <typename Scalar>
void im2col(const Matrix<Scalar>& in, const ConvGeometry& g, Index first, Index count, Matrix<Scalar>& col) {
  const Index channels = in.rows();
  const int k = g.kernel;
  col.resize(channels * k * k * k, count);
  const std::size_t bytes = static_cast<std::size_t>(channels) * sizeof(Scalar);
  for (Index j = 0; j < count; ++j) {
    const auto [ox, oy, oz] = g.out.coords(first + j);
    Scalar* dst = col.col(j).data();
    for (int dz = 0; dz < k; ++dz) {
      const Index iz = oz * g.stride + dz - g.pad;
      for (int dy = 0; dy < k; ++dy) {
        const Index iy = oy * g.stride + dy - g.pad;
        for (int dx = 0; dx < k; ++dx, dst += channels) {
          const Index ix = ox * g.stride + dx - g.pad;
          if (g.in.contains(ix, iy, iz))
            std::memcpy(dst, in.col(g.in.linear(ix, iy, iz)).data(), bytes);
          else
            std::memset(dst, 0, bytes);
        }
      }
    }
  }
}

// Scatter-add the adjoint of im2col.
template <typename Scalar>
void col2im_add(const Matrix<Scalar>& col, const ConvGeometry& g, Index first, Index count, Matrix<Scalar>& in_grad) {
  const Index channels = in_grad.rows();
  const int k = g.kernel;
  for (Index j = 0; j < count; ++j) {
    const auto [ox, oy, oz] = g.out.coords(first + j);
    const Scalar* src = col.col(j).data();
    for (int dz = 0; dz < k; ++dz) {
      const Index iz = oz * g.stride + dz - g.pad;
      for (int dy = 0; dy < k; ++dy) {
        const Index iy = oy * g.stride + dy - g.pad;
        for (int dx = 0; dx < k; ++dx, src += channels) {
          const Index ix = ox * g.stride + dx - g.pad;
          if (!g.in.contains(ix, iy, iz)) continue;
          Scalar* dst = in_grad.col(g.in.linear(ix, iy, iz)).data();
          for (Index c = 0; c < channels; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

// ---- Conv3d ----------------------------------------------------------------

template <typename Scalar>
Conv3d<Scalar>::Conv3d(const std::string& name, Index in_channels, Index out_channels, int kernel, int stride)
    : weight(name + ".weight", out_channels, in_channels * kernel * kernel * kernel),
      bias(name + ".bias", out_channels, 1),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride) {
  if (kernel != 1 && kernel != 3) throw ConfigError("conv " + name + ": kernel must be 1 or 3");
  if (stride != 1 && stride != 2) throw ConfigError("conv " + name + ": stride must be 1 or 2");
}

template <typename Scalar>
Shape3 Conv3d<Scalar>::output_shape(const Shape3& in) const {
  const int pad = kernel_ / 2;
  Shape3 out;
  for (int a = 0; a < 3; ++a) out[a] = (in[a] + 2 * pad - kernel_) / stride_ + 1;
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> Conv3d<Scalar>::forward(const FeatureMap<Scalar>& in) const {
  if (in.channels() != in_channels_)
    throw ConfigError(weight.name + ": expected " + std::to_string(in_channels_) + " input channels, got " +
                      std::to_string(in.channels()));
  const ConvGeometry g{in.shape, output_shape(in.shape), kernel_, stride_, kernel_ / 2};
  FeatureMap<Scalar> out;
  out.shape = g.out;
  out.values.resize(out_channels_, g.out.voxels());
  if (kernel_ == 1 && stride_ == 1) {
    out.values.noalias() = weight.value * in.values;
  } else {
    const Index chunk = std::max<Index>(1, kColumnBudget / weight.value.cols());
    Matrix<Scalar> col;
    for (Index first = 0; first < g.out.voxels(); first += chunk) {
      const Index count = std::min(chunk, g.out.voxels() - first);
      im2col(in.values, g, first, count, col);
      out.values.middleCols(first, count).noalias() = weight.value * col;
    }
  }
  out.values.colwise() += bias.value.col(0);
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> Conv3d<Scalar>::backward(const FeatureMap<Scalar>& in, const FeatureMap<Scalar>& grad_out,
                                            bool input_grad) {
  const ConvGeometry g{in.shape, output_shape(in.shape), kernel_, stride_, kernel_ / 2};
  if (grad_out.shape != g.out || grad_out.channels() != out_channels_)
    throw InvalidArgument(weight.name + ": gradient layout does not match the forward output");
  bias.grad.col(0) += grad_out.values.rowwise().sum();
  FeatureMap<Scalar> in_grad;
  if (input_grad) in_grad = FeatureMap<Scalar>(in_channels_, in.shape);
  if (kernel_ == 1 && stride_ == 1) {
    weight.grad.noalias() += grad_out.values * in.values.transpose();
    if (input_grad) in_grad.values.noalias() = weight.value.transpose() * grad_out.values;
    return in_grad;
  }
  const Index chunk = std::max<Index>(1, kColumnBudget / weight.value.cols());
  Matrix<Scalar> col, col_grad;
  for (Index first = 0; first < g.out.voxels(); first += chunk) {
    const Index count = std::min(chunk, g.out.voxels() - first);
    im2col(in.values, g, first, count, col);
    weight.grad.noalias() += grad_out.values.middleCols(first, count) * col.transpose();
    if (input_grad) {
      col_grad.noalias() = weight.value.transpose() * grad_out.values.middleCols(first, count);
      col2im_add(col_grad, g, first, count, in_grad.values);
    }
  }
  return in_grad;
}

template <typename Scalar>
void Conv3d<Scalar>::init_he(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(weight.value.cols());
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = static_cast<Scalar>(normal(rng));
  bias.value.setZero();
}

// ---- InstanceNorm3d ----------------------------------------------------------

template <typename Scalar>
InstanceNorm3d<Scalar>::InstanceNorm3d(const std::string& name, Index channels)
    : scale(name + ".scale", channels, 1), shift(name + ".shift", channels, 1) {
  scale.value.setOnes();
}

template <typename Scalar>
FeatureMap<Scalar> InstanceNorm3d<Scalar>::forward(const FeatureMap<Scalar>& in, Trace* trace) const {
  const auto n = static_cast<Scalar>(in.voxels());
  const Vector<Scalar> mu = in.values.rowwise().sum() / n;
  Matrix<Scalar> centered = in.values.colwise() - mu;
  const Vector<Scalar> var = centered.array().square().rowwise().sum().matrix() / n;
  const Vector<Scalar> inv_std = (var.array() + Scalar(kEpsilon)).rsqrt().matrix();
  Matrix<Scalar> normalized = inv_std.asDiagonal() * centered;
  FeatureMap<Scalar> out(scale.value.col(0).asDiagonal() * normalized, in.shape);
  out.values.colwise() += shift.value.col(0);
  if (trace) {
    trace->normalized = std::move(normalized);
    trace->inv_std = inv_std;
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> InstanceNorm3d<Scalar>::backward(const Trace& trace, const FeatureMap<Scalar>& grad_out) {
  const auto& xhat = trace.normalized;
  const auto n = static_cast<Scalar>(grad_out.voxels());
  scale.grad.col(0) += grad_out.values.cwiseProduct(xhat).rowwise().sum();
  shift.grad.col(0) += grad_out.values.rowwise().sum();
  const Matrix<Scalar> dxhat = scale.value.col(0).asDiagonal() * grad_out.values;
  const Vector<Scalar> sum_d = dxhat.rowwise().sum();
  const Vector<Scalar> sum_dx = dxhat.cwiseProduct(xhat).rowwise().sum();
  Matrix<Scalar> g = dxhat * n;
  g.colwise() -= sum_d;
  g -= sum_dx.asDiagonal() * xhat;
  const Vector<Scalar> factor = trace.inv_std / n;
  return FeatureMap<Scalar>(factor.asDiagonal() * g, grad_out.shape);
}

// ---- ResidualBlock -----------------------------------------------------------

template <typename Scalar>
ResidualBlock<Scalar>::ResidualBlock(const std::string& name, Index channels)
    : norm1(name + ".norm1", channels),
      conv1(name + ".conv1", channels, channels, 3),
      norm2(name + ".norm2", channels),
      conv2(name + ".conv2", channels, channels, 3) {}

template <typename Scalar>
void ResidualBlock<Scalar>::init_he(std::mt19937_64& rng) {
  conv1.init_he(rng);
  conv2.init_he(rng);
}

template <typename Scalar>
FeatureMap<Scalar> ResidualBlock<Scalar>::forward(const FeatureMap<Scalar>& x, Trace* trace) const {
  FeatureMap<Scalar> a1 = norm1.forward(x, trace ? &trace->norm1 : nullptr);
  relu_inplace(a1.values);
  FeatureMap<Scalar> a2 = norm2.forward(conv1.forward(a1), trace ? &trace->norm2 : nullptr);
  relu_inplace(a2.values);
  FeatureMap<Scalar> y = conv2.forward(a2);
  y.values += x.values;
  if (trace) {
    trace->act1 = std::move(a1);
    trace->act2 = std::move(a2);
  }
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> ResidualBlock<Scalar>::backward(const Trace& trace, const FeatureMap<Scalar>& grad_out) {
  FeatureMap<Scalar> g = conv2.backward(trace.act2, grad_out);
  g.values = relu_backward(trace.act2.values, g.values);
  g = norm2.backward(trace.norm2, g);
  g = conv1.backward(trace.act1, g);
  g.values = relu_backward(trace.act1.values, g.values);
  g = norm1.backward(trace.norm1, g);
  g.values += grad_out.values;
  return g;
}

// ---- PreActConv --------------------------------------------------------------

template <typename Scalar>
PreActConv<Scalar>::PreActConv(const std::string& name, Index in_channels, Index out_channels, int kernel, int stride)
    : norm(name + ".norm", in_channels), conv(name, in_channels, out_channels, kernel, stride) {}

template <typename Scalar>
FeatureMap<Scalar> PreActConv<Scalar>::forward(const FeatureMap<Scalar>& x, Trace* trace) const {
  FeatureMap<Scalar> a = norm.forward(x, trace ? &trace->norm : nullptr);
  relu_inplace(a.values);
  FeatureMap<Scalar> y = conv.forward(a);
  if (trace) trace->act = std::move(a);
  return y;
}

template <typename Scalar>
FeatureMap<Scalar> PreActConv<Scalar>::backward(const Trace& trace, const FeatureMap<Scalar>& grad_out) {
  FeatureMap<Scalar> g = conv.backward(trace.act, grad_out);
  g.values = relu_backward(trace.act.values, g.values);
  return norm.backward(trace.norm, g);
}

// ---- upsampling --------------------------------------------------------------

template <typename Scalar>
FeatureMap<Scalar> upsample2(const FeatureMap<Scalar>& in) {
  const Shape3 s = in.shape;
  const Shape3 o{2 * s.x, 2 * s.y, 2 * s.z};
  FeatureMap<Scalar> out;
  out.shape = o;
  out.values.resize(in.channels(), o.voxels());
  for (Index z = 0; z < o.z; ++z)
    for (Index y = 0; y < o.y; ++y)
      for (Index x = 0; x < o.x; ++x) out.values.col(o.linear(x, y, z)) = in.values.col(s.linear(x / 2, y / 2, z / 2));
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> upsample2_backward(const FeatureMap<Scalar>& grad_out) {
  const Shape3 o = grad_out.shape;
  const Shape3 s{o.x / 2, o.y / 2, o.z / 2};
  FeatureMap<Scalar> in(grad_out.channels(), s);
  for (Index z = 0; z < o.z; ++z)
    for (Index y = 0; y < o.y; ++y)
      for (Index x = 0; x < o.x; ++x) in.values.col(s.linear(x / 2, y / 2, z / 2)) += grad_out.values.col(o.linear(x, y, z));
  return in;
}

#define LESACT_INSTANTIATE(S)                                            \
  template class Conv3d<S>;                                              \
  template class InstanceNorm3d<S>;                                      \
  template class ResidualBlock<S>;                                       \
  template class PreActConv<S>;                                          \
  template FeatureMap<S> upsample2<S>(const FeatureMap<S>&);             \
  template FeatureMap<S> upsample2_backward<S>(const FeatureMap<S>&);

LESACT_INSTANTIATE(float)
LESACT_INSTANTIATE(double)
#undef LESACT_INSTANTIATE

}  // namespace lesact::nn
