#include "lesact/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "lesact/components.hpp"
#include "lesact/errors.hpp"
#include "lesact/stats.hpp"

namespace lesact {

namespace {

// Continuous source index of target voxel j along one axis (centre aligned).
double source_coordinate(Index j, double ratio) { return (static_cast<double>(j) + 0.5) * ratio - 0.5; }

}  // namespace

Volume resample(const Volume& v, const Eigen::Vector3d& target_spacing) {
  if (!(target_spacing.array() > 0.0).all() || !target_spacing.allFinite())
    throw InvalidArgument("resample: target spacing must be strictly positive");
  if (target_spacing == v.spacing()) return v;

  const Shape3 in = v.shape();
  Shape3 out;
  Eigen::Vector3d ratio;  // target / source spacing
  for (int a = 0; a < 3; ++a) {
    out[a] = std::max<Index>(1, std::llround(static_cast<double>(in[a]) * v.spacing()[a] / target_spacing[a]));
    ratio[a] = target_spacing[a] / v.spacing()[a];
  }
  const Eigen::Vector3d origin = v.origin() + 0.5 * (target_spacing - v.spacing());

  Volume::Data data(out.voxels());
  const bool nearest = v.kind() == VolumeKind::label;
  std::vector<Index> lo[3];
  std::vector<double> frac[3];
  for (int a = 0; a < 3; ++a) {
    lo[a].resize(out[a]);
    frac[a].resize(out[a]);
    for (Index j = 0; j < out[a]; ++j) {
      const double c = std::clamp(source_coordinate(j, ratio[a]), 0.0, static_cast<double>(in[a] - 1));
      if (nearest) {
        lo[a][j] = std::min<Index>(std::llround(c), in[a] - 1);
        frac[a][j] = 0.0;
      } else {
        lo[a][j] = std::min<Index>(static_cast<Index>(std::floor(c)), in[a] - 1);
        frac[a][j] = c - static_cast<double>(lo[a][j]);
      }
    }
  }

  const auto& src = v.data();
  for (Index k = 0; k < out.z; ++k) {
    const Index z0 = lo[2][k], z1 = std::min(z0 + 1, in.z - 1);
    const double fz = frac[2][k];
    for (Index j = 0; j < out.y; ++j) {
      const Index y0 = lo[1][j], y1 = std::min(y0 + 1, in.y - 1);
      const double fy = frac[1][j];
      for (Index i = 0; i < out.x; ++i) {
        const Index x0 = lo[0][i], x1 = std::min(x0 + 1, in.x - 1);
        const double fx = frac[0][i];
        if (nearest) {
          data[out.linear(i, j, k)] = src[in.linear(x0, y0, z0)];
          continue;
        }
        auto at = [&](Index x, Index y, Index z) { return static_cast<double>(src[in.linear(x, y, z)]); };
        const double c00 = at(x0, y0, z0) * (1 - fx) + at(x1, y0, z0) * fx;
        const double c10 = at(x0, y1, z0) * (1 - fx) + at(x1, y1, z0) * fx;
        const double c01 = at(x0, y0, z1) * (1 - fx) + at(x1, y0, z1) * fx;
        const double c11 = at(x0, y1, z1) * (1 - fx) + at(x1, y1, z1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        data[out.linear(i, j, k)] = static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  }
  // Interpolation weights are convex, but float rounding may step outside the source range.
  if (!nearest) data = data.max(src.minCoeff()).min(src.maxCoeff());
  return Volume(out, target_spacing, origin, v.kind(), std::move(data));
}

Volume zscore(const Volume& v) {
  const Eigen::ArrayXd d = v.data().cast<double>();
  const double mu = d.mean();
  const double sd = std::sqrt((d - mu).square().mean());
  if (!(sd > 0.0)) throw DegenerateInput("standardize: volume has zero standard deviation");
  return Volume::like(v, VolumeKind::intensity, ((d - mu) / sd).cast<float>());
}

Volume clip_percentiles(const Volume& v, double lo_q, double hi_q) {
  std::vector<double> values(v.data().begin(), v.data().end());
  const auto lo = static_cast<float>(percentile(values, lo_q));
  const auto hi = static_cast<float>(percentile(values, hi_q));
  return Volume::like(v, v.kind(), v.data().max(lo).min(hi));
}

Volume standardize(const Volume& v) {
  if (v.kind() != VolumeKind::intensity) throw InvalidArgument("standardize expects an intensity volume");
  return clip_percentiles(zscore(v), 1.0, 99.0);
}

Volume filter_small_lesions(const Volume& mask, double min_volume_ml) {
  require_binary(mask, "filter_small_lesions input");
  const LesionSet lesions = connected_components(mask);
  Volume::Data out = mask.data();
  const double voxel_ml = mask.voxel_volume_ml();
  for (const auto& component : lesions.components) {
    const double volume = static_cast<double>(component.size()) * voxel_ml;
    if (volume >= min_volume_ml * (1.0 - 1e-9)) continue;
    for (Index idx : component) out[idx] = 0.0f;
  }
  return Volume::like(mask, VolumeKind::label, std::move(out));
}

}  // namespace lesact
