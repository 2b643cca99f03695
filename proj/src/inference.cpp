#include "lesact/inference.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "lesact/errors.hpp"
#include "lesact/preprocess.hpp"

namespace lesact {

using nlohmann::json;
using nn::FeatureMap;

std::vector<Index> tile_offsets(Index extent, Index tile, int tiles) {
  if (tiles < 1) throw InvalidArgument("tiling: tiles per axis must be >= 1");
  if (tile < 1 || tile > extent) throw InvalidArgument("tiling: tile must lie in [1, extent]");
  if (tiles == 1 || extent == tile) return std::vector<Index>(1, 0);
  std::vector<Index> out;
  const Index span = extent - tile;
  const Index den = tiles - 1;
  // round(i * span / den), halves away from zero (all terms are non-negative)
  for (Index i = 0; i < tiles; ++i) out.push_back((2 * i * span + den) / (2 * den));
  return out;
}

TilingPlan TilingPlan::make(const Shape3& volume, const Shape3& tile, std::array<int, 3> grid) {
  TilingPlan plan;
  plan.tile = tile;
  plan.grid = grid;
  std::array<std::vector<Index>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    if (tile[a] < 1 || volume[a] < 1) throw InvalidArgument("tiling: shapes must be positive");
    const Index extent = std::max(volume[a], tile[a]);
    axis[a] = tile_offsets(extent, tile[a], grid[a]);
    if (axis[a].size() == 1 && extent > tile[a])
      throw InvalidArgument("tiling: a single tile of " + std::to_string(tile[a]) + " cannot cover extent " +
                            std::to_string(extent) + " along axis " + std::to_string(a));
    for (std::size_t i = 1; i < axis[a].size(); ++i)
      if (axis[a][i] - axis[a][i - 1] > tile[a])
        throw InvalidArgument("tiling: grid of " + std::to_string(grid[a]) + " tiles leaves gaps along axis " +
                              std::to_string(a));
    grid[a] = static_cast<int>(axis[a].size());
  }
  plan.grid = grid;
  plan.volume = {std::max(volume.x, tile.x), std::max(volume.y, tile.y), std::max(volume.z, tile.z)};
  for (Index k : axis[2])
    for (Index j : axis[1])
      for (Index i : axis[0]) plan.offsets.push_back({i, j, k});
  return plan;
}

std::vector<int> TilingPlan::coverage() const {
  std::vector<int> count(static_cast<std::size_t>(volume.voxels()), 0);
  for (const auto& c : offsets)
    for (Index k = 0; k < tile.z; ++k)
      for (Index j = 0; j < tile.y; ++j)
        for (Index i = 0; i < tile.x; ++i) ++count[static_cast<std::size_t>(volume.linear(c[0] + i, c[1] + j, c[2] + k))];
  return count;
}

void TilingConfig::validate() const {
  if (tile.x < 8 || tile.y < 8 || tile.z < 8 || !tile.divisible_by(8))
    throw ConfigError("tiling.tile must be positive and divisible by 8 on every axis");
  for (int g : grid)
    if (g < 1) throw ConfigError("tiling.grid entries must be >= 1");
  if (threads < 1) throw ConfigError("tiling.threads must be >= 1");
}

void to_json(json& j, const TilingConfig& c) {
  j = json{{"tile", {c.tile.x, c.tile.y, c.tile.z}}, {"grid", c.grid}, {"threads", c.threads}};
}

void from_json(const json& j, TilingConfig& c) {
  c = TilingConfig{};
  try {
    auto triple = [&](const char* key) {
      const auto& v = j.at(key);
      if (v.is_number_integer()) {
        const auto n = v.get<Index>();
        return std::array<Index, 3>{n, n, n};
      }
      const auto a = v.get<std::vector<Index>>();
      if (a.size() != 3) throw ConfigError(std::string("tiling.") + key + " must be an integer or 3 integers");
      return std::array<Index, 3>{a[0], a[1], a[2]};
    };
    if (j.contains("tile")) {
      const auto t = triple("tile");
      c.tile = {t[0], t[1], t[2]};
    }
    if (j.contains("grid")) {
      const auto g = triple("grid");
      c.grid = {static_cast<int>(g[0]), static_cast<int>(g[1]), static_cast<int>(g[2])};
    }
    c.threads = j.value("threads", c.threads);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("tiling config: ") + e.what());
  }
}

TileAccumulator::TileAccumulator(const Shape3& volume)
    : shape_(volume), sum_(Eigen::ArrayXd::Zero(volume.voxels())), count_(static_cast<std::size_t>(volume.voxels()), 0) {}

void TileAccumulator::add(const std::array<Index, 3>& corner, const Shape3& tile, const Eigen::ArrayXf& values) {
  if (values.size() != tile.voxels()) throw InvalidArgument("tile accumulator: value count does not match the tile");
  for (Index k = 0; k < tile.z; ++k)
    for (Index j = 0; j < tile.y; ++j)
      for (Index i = 0; i < tile.x; ++i) {
        const Index v = shape_.linear(corner[0] + i, corner[1] + j, corner[2] + k);
        sum_[v] += static_cast<double>(values[tile.linear(i, j, k)]);
        ++count_[static_cast<std::size_t>(v)];
      }
}

Eigen::ArrayXf TileAccumulator::mean(const Shape3& out) const {
  Eigen::ArrayXf result(out.voxels());
  std::array<Index, 3> pad{};
  for (int a = 0; a < 3; ++a) pad[a] = (shape_[a] - out[a]) / 2;
  for (Index k = 0; k < out.z; ++k)
    for (Index j = 0; j < out.y; ++j)
      for (Index i = 0; i < out.x; ++i) {
        const Index v = shape_.linear(i + pad[0], j + pad[1], k + pad[2]);
        const int n = count_[static_cast<std::size_t>(v)];
        if (n == 0) throw std::logic_error("tiling left a voxel uncovered");
        result[out.linear(i, j, k)] = static_cast<float>(sum_[v] / n);
      }
  return result;
}

namespace {

// Symmetric zero padding of every channel up to `target`.
FeatureMap<float> pad_input(const FeatureMap<float>& in, const Shape3& target) {
  if (in.shape == target) return in;
  FeatureMap<float> out(in.channels(), target);
  std::array<Index, 3> pad{};
  for (int a = 0; a < 3; ++a) pad[a] = (target[a] - in.shape[a]) / 2;
  for (Index k = 0; k < in.shape.z; ++k)
    for (Index j = 0; j < in.shape.y; ++j)
      for (Index i = 0; i < in.shape.x; ++i)
        out.values.col(target.linear(i + pad[0], j + pad[1], k + pad[2])) = in.values.col(in.shape.linear(i, j, k));
  return out;
}

FeatureMap<float> extract_tile(const FeatureMap<float>& in, const std::array<Index, 3>& corner, const Shape3& tile) {
  FeatureMap<float> out(in.channels(), tile);
  for (Index k = 0; k < tile.z; ++k)
    for (Index j = 0; j < tile.y; ++j)
      for (Index i = 0; i < tile.x; ++i)
        out.values.col(tile.linear(i, j, k)) = in.values.col(in.shape.linear(corner[0] + i, corner[1] + j, corner[2] + k));
  return out;
}

}  // namespace

Eigen::ArrayXf predict_tiled(const FeatureMap<float>& input, const TilingPlan& plan, const TilePredictor& predictor,
                             int threads) {
  if (threads < 1) throw InvalidArgument("predict_tiled: threads must be >= 1");
  for (int a = 0; a < 3; ++a)
    if (plan.volume[a] != std::max(input.shape[a], plan.tile[a]))
      throw InvalidArgument("predict_tiled: plan does not match the input shape");
  const FeatureMap<float> padded = pad_input(input, plan.volume);

  std::vector<Eigen::ArrayXf> results(plan.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t t = next++; t < plan.size(); t = next++) {
      try {
        const FeatureMap<float> out = predictor(extract_tile(padded, plan.offsets[t], plan.tile));
        if (out.channels() != 1 || out.shape != plan.tile)
          throw InvalidArgument("predict_tiled: predictor must return one channel over the tile");
        results[t] = out.values.row(0).transpose().array();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = plan.size();
      }
    }
  };
  const int n_workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), plan.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  TileAccumulator acc(plan.volume);
  for (std::size_t t = 0; t < plan.size(); ++t) acc.add(plan.offsets[t], plan.tile, results[t]);
  return acc.mean(input.shape);
}

namespace {

Volume predict_input(const nn::Network<float>& net, const FeatureMap<float>& input, const Volume& grid,
                     const TilingConfig& tiling) {
  tiling.validate();
  const TilingPlan plan = TilingPlan::make(grid.shape(), tiling.tile, tiling.grid);
  Eigen::ArrayXf prob =
      predict_tiled(input, plan, [&](const FeatureMap<float>& tile) { return net.forward(tile); }, tiling.threads);
  return Volume::like(grid, VolumeKind::probability, prob.cwiseMax(0.0f).cwiseMin(1.0f));
}

}  // namespace

Volume predict_volume(const nn::Network<float>& net, const ScanPair& pair, const TilingConfig& tiling) {
  pair.validate();
  const auto& cfg = net.config();
  const FeatureMap<float> input =
      nn::assemble_input<float>(cfg, pair.baseline.data(), pair.followup.data(), pair.baseline.shape());
  return predict_input(net, input, pair.followup, tiling);
}

Volume predict_scan(const nn::Network<float>& net, const Volume& scan, const TilingConfig& tiling) {
  if (!net.config().is_single_scan()) throw ConfigError("predict_scan requires a per-scan (single path, unfused) model");
  const FeatureMap<float> input = nn::assemble_input<float>(net.config(), scan.data(), scan.data(), scan.shape());
  return predict_input(net, input, scan, tiling);
}

Volume threshold(const Volume& prob, double t) {
  if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("threshold must lie in (0,1)");
  const auto tf = static_cast<float>(t);
  return Volume::like(prob, VolumeKind::label, (prob.data() >= tf).cast<float>());
}

Volume stp_difference(const Volume& prob_bl, const Volume& prob_fu, double t, double min_volume_ml) {
  if (!prob_bl.same_grid(prob_fu)) throw InvalidArgument("stp_difference: probability maps are on different grids");
  const Volume m_bl = threshold(prob_bl, t);
  const Volume m_fu = threshold(prob_fu, t);
  Volume diff = Volume::like(m_fu, VolumeKind::label, (m_fu.data() * (1.0f - m_bl.data())));
  return filter_small_lesions(diff, min_volume_ml);
}

Volume stp_difference_pipeline(const nn::Network<float>& stp_net, const ScanPair& pair, const TilingConfig& tiling,
                               double t, double min_volume_ml) {
  pair.validate();
  return stp_difference(predict_scan(stp_net, pair.baseline, tiling), predict_scan(stp_net, pair.followup, tiling), t,
                        min_volume_ml);
}

}  // namespace lesact
