#pragma once

#include <Eigen/Core>

#include "lesact/volume.hpp"

namespace lesact {

/// Resample onto a grid with `target_spacing` (mm). The new shape is
/// round(shape * spacing / target_spacing); voxel centres of the old and new
/// grids span the same physical extent. Intensity and probability volumes are
/// interpolated trilinearly, label volumes by nearest neighbour. A target
/// equal to the current spacing returns an exact copy.
Volume resample(const Volume& v, const Eigen::Vector3d& target_spacing);

/// (v - mean) / std with the population standard deviation.
/// Throws DegenerateInput when std == 0.
Volume zscore(const Volume& v);

/// Clamp every sample to [percentile(lo_q), percentile(hi_q)] of the volume itself.
Volume clip_percentiles(const Volume& v, double lo_q = 1.0, double hi_q = 99.0);

/// Z-score followed by clipping at the 1st and 99th percentile of the standardized values.
Volume standardize(const Volume& v);

/// Zero every 26-connected component whose volume is below `min_volume_ml`.
/// Components of exactly `min_volume_ml` are kept.
Volume filter_small_lesions(const Volume& mask, double min_volume_ml = 0.01);

}  // namespace lesact
