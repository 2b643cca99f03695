#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "lesact/shape.hpp"
#include "lesact/volume.hpp"

namespace lesact {

/// Decomposition of a binary mask into maximal 26-connected components.
///
/// Components are numbered 1..count() in order of their first voxel in
/// x-fastest scan order; `labels` holds that id per voxel (0 = background).
struct LesionSet {
  Shape3 shape;
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  std::vector<std::vector<Index>> components;  // linear voxel indices, ascending
  std::vector<std::int32_t> labels;

  std::size_t count() const { return components.size(); }
  double volume_ml(std::size_t component) const {
    return static_cast<double>(components[component].size()) * spacing.prod() / 1000.0;
  }
};

/// 26-connected component labeling. Throws InvalidArgument for non-binary masks.
LesionSet connected_components(const Volume& mask);

}  // namespace lesact
