#pragma once

#include <string>
#include <utility>

#include <Eigen/Core>

#include "lesact/errors.hpp"
#include "lesact/shape.hpp"

namespace lesact::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Activations of one sample: `values` is channels x voxels, each column one
/// voxel (x-fastest), so a voxel's channel vector is contiguous.
template <typename Scalar>
struct FeatureMap {
  Matrix<Scalar> values;
  Shape3 shape;

  FeatureMap() = default;
  FeatureMap(Index channels, Shape3 spatial) : values(Matrix<Scalar>::Zero(channels, spatial.voxels())), shape(spatial) {}
  FeatureMap(Matrix<Scalar> v, Shape3 spatial) : values(std::move(v)), shape(spatial) {
    if (values.cols() != shape.voxels()) throw InvalidArgument("feature map: column count does not match spatial shape");
  }

  Index channels() const { return values.rows(); }
  Index voxels() const { return values.cols(); }
  bool same_layout(const FeatureMap& o) const { return shape == o.shape && channels() == o.channels(); }

  template <typename Other>
  FeatureMap<Other> cast() const {
    return FeatureMap<Other>(values.template cast<Other>(), shape);
  }
};

/// Channel-wise concatenation: rows of `top` followed by rows of `bottom`.
template <typename Scalar>
FeatureMap<Scalar> concat_channels(const FeatureMap<Scalar>& top, const FeatureMap<Scalar>& bottom) {
  if (top.shape != bottom.shape) throw InvalidArgument("concat_channels: spatial shapes differ");
  Matrix<Scalar> v(top.channels() + bottom.channels(), top.voxels());
  v.topRows(top.channels()) = top.values;
  v.bottomRows(bottom.channels()) = bottom.values;
  return FeatureMap<Scalar>(std::move(v), top.shape);
}

/// Inverse of concat_channels for gradients.
template <typename Scalar>
std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>> split_channels(const FeatureMap<Scalar>& m, Index top_channels) {
  return {FeatureMap<Scalar>(m.values.topRows(top_channels), m.shape),
          FeatureMap<Scalar>(m.values.bottomRows(m.channels() - top_channels), m.shape)};
}

}  // namespace lesact::nn
