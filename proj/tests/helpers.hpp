#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "lesact/volume.hpp"

namespace testing_util {

inline lesact::Volume random_intensity(lesact::Shape3 s, std::mt19937_64& rng,
                                       Eigen::Vector3d spacing = Eigen::Vector3d::Ones()) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  lesact::Volume::Data d(s.voxels());
  for (auto& v : d) v = nd(rng);
  return lesact::Volume(s, spacing, Eigen::Vector3d(1.5, -2.0, 3.25), lesact::VolumeKind::intensity, d);
}

inline lesact::Volume random_label(lesact::Shape3 s, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution on(density);
  lesact::Volume::Data d(s.voxels());
  for (auto& v : d) v = on(rng) ? 1.0f : 0.0f;
  return lesact::Volume(s, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), lesact::VolumeKind::label, d);
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("lesact_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing_util
