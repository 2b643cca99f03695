#pragma once

#include <filesystem>
#include <optional>

#include "lesact/volume.hpp"

namespace lesact {

enum class SampleType { f32, u8 };

/// Read a volume from `.lvol` (JSON sidecar + `.bin` payload), `.nii` or `.nii.gz`.
///
/// The kind comes from file metadata when present, else from `kind_hint`,
/// else uint8 data is read as a label volume and float data as intensity.
/// Throws FormatError naming the offending field on malformed input.
Volume read_volume(const std::filesystem::path& path, std::optional<VolumeKind> kind_hint = std::nullopt);

/// Write by extension. Labels are stored as u8 and everything else as f32
/// unless `type` overrides it.
void write_volume(const Volume& v, const std::filesystem::path& path, std::optional<SampleType> type = std::nullopt);

Volume read_lvol(const std::filesystem::path& path, std::optional<VolumeKind> kind_hint = std::nullopt);
void write_lvol(const Volume& v, const std::filesystem::path& path, std::optional<SampleType> type = std::nullopt);

Volume read_nifti(const std::filesystem::path& path, std::optional<VolumeKind> kind_hint = std::nullopt);
void write_nifti(const Volume& v, const std::filesystem::path& path, std::optional<SampleType> type = std::nullopt);

}  // namespace lesact
