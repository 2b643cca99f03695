#include "lesact/volume.hpp"

#include <string>

#include "lesact/errors.hpp"

namespace lesact {

std::string_view to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::intensity: return "intensity";
    case VolumeKind::probability: return "probability";
    case VolumeKind::label: return "label";
  }
  return "intensity";
}

VolumeKind volume_kind_from_string(std::string_view name) {
  if (name == "intensity") return VolumeKind::intensity;
  if (name == "probability") return VolumeKind::probability;
  if (name == "label") return VolumeKind::label;
  throw InvalidArgument("unknown volume kind '" + std::string(name) + "'");
}

Volume::Volume(Shape3 shape, Eigen::Vector3d spacing, Eigen::Vector3d origin, VolumeKind kind, Data data)
    : shape_(shape), spacing_(spacing), origin_(origin), kind_(kind), data_(std::move(data)) {
  if (shape_.x < 1 || shape_.y < 1 || shape_.z < 1)
    throw InvalidArgument("volume shape components must be >= 1");
  if (!(spacing_.array() > 0.0).all() || !spacing_.allFinite())
    throw InvalidArgument("volume spacing components must be strictly positive");
  if (data_.size() != shape_.voxels())
    throw InvalidArgument("volume data size " + std::to_string(data_.size()) + " does not match shape (" +
                          std::to_string(shape_.voxels()) + " voxels)");
  if (kind_ == VolumeKind::probability && data_.size() > 0 &&
      !((data_ >= 0.0f) && (data_ <= 1.0f)).all())
    throw InvalidArgument("probability volume has values outside [0,1]");
  if (kind_ == VolumeKind::label) require_binary(*this, "label volume");
}

Volume Volume::zeros(Shape3 shape, VolumeKind kind, Eigen::Vector3d spacing, Eigen::Vector3d origin) {
  return Volume(shape, spacing, origin, kind, Data::Zero(shape.voxels()));
}

Volume Volume::like(const Volume& like, VolumeKind kind, Data data) {
  return Volume(like.shape_, like.spacing_, like.origin_, kind, std::move(data));
}

bool Volume::same_grid(const Volume& other) const {
  return shape_ == other.shape_ && spacing_.isApprox(other.spacing_, 1e-9);
}

void require_binary(const Volume& v, std::string_view what) {
  if (!((v.data() == 0.0f) || (v.data() == 1.0f)).all())
    throw InvalidArgument(std::string(what) + " must be binary (values 0/1)");
}

void ScanPair::validate() const {
  auto check = [&](const Volume& v, const std::string& name) {
    if (!baseline.same_grid(v))
      throw InvalidArgument("scan pair member '" + name + "' does not share the baseline grid");
  };
  check(followup, "followup");
  for (std::size_t i = 0; i < activity_masks.size(); ++i) check(activity_masks[i], "activity_mask_" + std::to_string(i));
  if (baseline_lesions) check(*baseline_lesions, "baseline_lesions");
  if (followup_lesions) check(*followup_lesions, "followup_lesions");
}

}  // namespace lesact
