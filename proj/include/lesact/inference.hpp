#pragma once

#include <array>
#include <functional>
#include <vector>

#include "json.hpp"
#include "lesact/nn/network.hpp"
#include "lesact/volume.hpp"

namespace lesact {

/// Corner offsets along one axis: round(i * (D - T) / (g - 1)), i = 0..g-1;
/// a single tile at 0 when g == 1 or D == T.
std::vector<Index> tile_offsets(Index extent, Index tile, int tiles);

/// Evenly spaced overlapping tiles covering a volume.
struct TilingPlan {
  Shape3 volume;  // padded to at least the tile size per axis
  Shape3 tile;
  std::array<int, 3> grid{1, 1, 1};
  std::vector<std::array<Index, 3>> offsets;  // tile corners, x-fastest tile order

  /// Volumes smaller than the tile along an axis are planned on the padded
  /// extent (one tile along that axis).
  static TilingPlan make(const Shape3& volume, const Shape3& tile, std::array<int, 3> grid);

  std::size_t size() const { return offsets.size(); }
  /// Number of tiles covering each voxel of `volume`.
  std::vector<int> coverage() const;
};

/// Tiling parameters as they appear in experiment configs.
struct TilingConfig {
  Shape3 tile{128, 128, 128};
  std::array<int, 3> grid{3, 3, 3};
  int threads = 1;

  void validate() const;
  friend bool operator==(const TilingConfig&, const TilingConfig&) = default;
};

void to_json(nlohmann::json& j, const TilingConfig& c);
void from_json(const nlohmann::json& j, TilingConfig& c);

/// Maps one input tile (channels x voxels) to one-channel probabilities.
using TilePredictor = std::function<nn::FeatureMap<float>(const nn::FeatureMap<float>&)>;

/// Accumulates per-voxel probability sums and coverage counts in double
/// precision. Merging tiles in a fixed order makes the result independent of
/// the order in which tiles were evaluated.
class TileAccumulator {
 public:
  explicit TileAccumulator(const Shape3& volume);
  void add(const std::array<Index, 3>& corner, const Shape3& tile, const Eigen::ArrayXf& values);
  /// sum / count per voxel, cropped to `out` (the unpadded shape).
  Eigen::ArrayXf mean(const Shape3& out) const;
  const std::vector<int>& counts() const { return count_; }

 private:
  Shape3 shape_;
  Eigen::ArrayXd sum_;
  std::vector<int> count_;
};

/// Whole-volume prediction from overlapping tiles. `input` holds the network
/// input tensor over `shape`. Tiles run on up to `threads` workers; the merge
/// is bit-identical for any thread count.
Eigen::ArrayXf predict_tiled(const nn::FeatureMap<float>& input, const TilingPlan& plan, const TilePredictor& predictor,
                             int threads = 1);

/// Tiled prediction of a network over a scan pair (per-scan models use the
/// follow-up). Returns a probability volume on the pair's grid.
Volume predict_volume(const nn::Network<float>& net, const ScanPair& pair, const TilingConfig& tiling);

/// Tiled per-scan prediction of a single volume with a per-scan model.
Volume predict_scan(const nn::Network<float>& net, const Volume& scan, const TilingConfig& tiling);

/// label(v) = 1 iff prob(v) >= t, for t in (0, 1).
Volume threshold(const Volume& prob, double t);

/// M_FU AND NOT M_BL of thresholded per-scan probability maps, followed by
/// small-lesion filtering.
Volume stp_difference(const Volume& prob_bl, const Volume& prob_fu, double t, double min_volume_ml = 0.01);

/// Reference pipeline: per-scan predictions of both time points, then stp_difference.
Volume stp_difference_pipeline(const nn::Network<float>& stp_net, const ScanPair& pair, const TilingConfig& tiling,
                               double t, double min_volume_ml = 0.01);

}  // namespace lesact
