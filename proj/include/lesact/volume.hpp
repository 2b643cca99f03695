#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "lesact/shape.hpp"

namespace lesact {

enum class VolumeKind { intensity, probability, label };

std::string_view to_string(VolumeKind kind);
VolumeKind volume_kind_from_string(std::string_view name);

/// A 3D scalar grid with physical geometry. Samples are stored x-fastest.
///
/// Invariants are checked on construction: positive spacing, non-empty
/// shape, probability values in [0,1] and label values in {0,1}. A Volume
/// is never modified after construction; operations return new volumes.
class Volume {
 public:
  using Data = Eigen::ArrayXf;

  Volume(Shape3 shape, Eigen::Vector3d spacing, Eigen::Vector3d origin, VolumeKind kind, Data data);

  /// Zero-filled volume.
  static Volume zeros(Shape3 shape, VolumeKind kind,
                      Eigen::Vector3d spacing = Eigen::Vector3d::Ones(),
                      Eigen::Vector3d origin = Eigen::Vector3d::Zero());

  /// Same geometry as `like`, different samples (and possibly kind).
  static Volume like(const Volume& like, VolumeKind kind, Data data);

  const Shape3& shape() const { return shape_; }
  const Eigen::Vector3d& spacing() const { return spacing_; }
  const Eigen::Vector3d& origin() const { return origin_; }
  VolumeKind kind() const { return kind_; }
  const Data& data() const { return data_; }
  Index size() const { return data_.size(); }

  float operator()(Index x, Index y, Index z) const { return data_[shape_.linear(x, y, z)]; }
  float operator[](Index i) const { return data_[i]; }

  /// Voxel volume in millilitres (spacing in mm).
  double voxel_volume_ml() const { return spacing_.prod() / 1000.0; }

  /// Number of nonzero voxels.
  Index count_nonzero() const { return (data_ != 0.0f).count(); }

  bool same_grid(const Volume& other) const;

 private:
  Shape3 shape_;
  Eigen::Vector3d spacing_;
  Eigen::Vector3d origin_;
  VolumeKind kind_;
  Data data_;
};

/// A registered baseline / follow-up pair with optional annotations.
struct ScanPair {
  Volume baseline;
  Volume followup;
  std::vector<Volume> activity_masks;  // one per rater, may be empty
  std::optional<Volume> baseline_lesions;
  std::optional<Volume> followup_lesions;

  /// Throws InvalidArgument unless all member volumes share shape and spacing.
  void validate() const;
};

/// Throws InvalidArgument unless every sample is 0 or 1.
void require_binary(const Volume& v, std::string_view what);

}  // namespace lesact
