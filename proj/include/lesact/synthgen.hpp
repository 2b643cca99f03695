#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "lesact/volume.hpp"

namespace lesact {

/// Parameters of one synthetic longitudinal FLAIR-like phantom pair.
struct PhantomSpec {
  Shape3 shape{64, 64, 64};
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  int n_baseline_lesions = 6;
  int n_new_lesions = 2;
  int n_enlarged_lesions = 2;
  double lesion_radius_min_mm = 2.0;
  double lesion_radius_max_mm = 6.0;
  double noise_sigma = 0.05;
  double bias_field_amplitude = 0.1;
  double misalignment_mm = 0.0;
  int n_raters = 3;
  int rater_jitter = 1;         // voxels of dilation / erosion per component
  double rater_dropout = 0.1;   // probability a rater misses a component
  double scalp_intensity = 2.5; // bright shell outside the brain; 0 disables
  std::uint64_t seed = 0;

  /// Throws InvalidArgument on violated constraints.
  void validate() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

enum class LesionRole { old, enlarged, fresh };

/// Per-lesion bookkeeping of a generated case.
struct LesionRecord {
  LesionRole role = LesionRole::old;
  Eigen::Vector3d centre_mm = Eigen::Vector3d::Zero();
  double radius_mm = 0.0;           // baseline radius (0 for new lesions)
  double followup_radius_mm = 0.0;  // equal to radius_mm for old lesions
  Index baseline_voxels = 0;
  Index followup_voxels = 0;
};

struct SyntheticCase {
  ScanPair pair;           // carries full-lesion masks for both time points
  Volume activity_truth;   // FU lesions AND NOT BL lesions
  std::vector<Volume> rater_masks;
  std::vector<LesionRecord> lesions;
  PhantomSpec spec;
};

/// Deterministic in `spec` (including its seed). Throws GenerationError when
/// lesions cannot be placed after bounded retries.
SyntheticCase generate_case(const PhantomSpec& spec);

struct DatasetSpec {
  PhantomSpec phantom;
  int n_cases = 10;
  std::uint64_t seed = 0;
  double activity_free_fraction = 0.48;  // floor(n_cases * fraction) cases have no activity
  /// When set, each active case gets 3 or 4 active lesions with this mean
  /// (split between enlarged and new); otherwise the phantom counts are used.
  std::optional<double> mean_active_lesions;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

/// Per-case specs with derived seeds and activity assignment (no volumes).
std::vector<PhantomSpec> plan_dataset(const DatasetSpec& spec);

/// Independent RNG seed for case `index` of a dataset seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct ManifestEntry {
  std::string id;
  PhantomSpec spec;
  int n_active_lesions = 0;
  std::filesystem::path baseline, followup, truth;
  std::optional<std::filesystem::path> baseline_lesions, followup_lesions;
  std::vector<std::filesystem::path> raters;  // relative to the dataset root
};

struct Manifest {
  int version = 1;
  std::uint64_t seed = 0;
  bool preprocessed = false;  // scans already resampled and standardized
  std::vector<ManifestEntry> cases;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

/// Generate `spec.n_cases` cases into `root` (one directory per case, `.lvol`
/// volumes) and write `root/manifest.json`. Errors name the failing case index.
Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

/// Generate cases in memory only.
std::vector<SyntheticCase> generate_cases(const DatasetSpec& spec);

Manifest read_manifest(const std::filesystem::path& root);
void write_manifest(const Manifest& m, const std::filesystem::path& root);

/// Load one manifest entry into a ScanPair (rater masks as activity masks)
/// plus the stored truth mask, if any.
struct LoadedCase {
  std::string id;
  ScanPair pair;
  std::optional<Volume> truth;
};
LoadedCase load_case(const std::filesystem::path& root, const ManifestEntry& entry);

}  // namespace lesact
