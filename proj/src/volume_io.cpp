#include "lesact/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"
#include "lesact/errors.hpp"

namespace lesact {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

SampleType default_type(const Volume& v, std::optional<SampleType> type) {
  if (type) return *type;
  return v.kind() == VolumeKind::label ? SampleType::u8 : SampleType::f32;
}

std::vector<char> encode_samples(const Volume& v, SampleType type) {
  const auto& d = v.data();
  std::vector<char> bytes;
  if (type == SampleType::f32) {
    bytes.resize(static_cast<std::size_t>(d.size()) * sizeof(float));
    std::memcpy(bytes.data(), d.data(), bytes.size());
  } else {
    bytes.resize(static_cast<std::size_t>(d.size()));
    for (Index i = 0; i < d.size(); ++i) {
      const float value = d[i];
      if (value < 0.0f || value > 255.0f || value != std::floor(value))
        throw InvalidArgument("volume sample " + std::to_string(value) + " is not representable as u8");
      bytes[static_cast<std::size_t>(i)] = static_cast<char>(static_cast<std::uint8_t>(value));
    }
  }
  return bytes;
}

Volume::Data decode_samples(const char* bytes, Index count, SampleType type) {
  Volume::Data d(count);
  if (type == SampleType::f32) {
    std::memcpy(d.data(), bytes, static_cast<std::size_t>(count) * sizeof(float));
  } else {
    for (Index i = 0; i < count; ++i) d[i] = static_cast<float>(static_cast<std::uint8_t>(bytes[i]));
  }
  return d;
}

std::size_t sample_bytes(SampleType type) { return type == SampleType::f32 ? 4 : 1; }

VolumeKind resolve_kind(std::optional<VolumeKind> stored, std::optional<VolumeKind> hint, SampleType type) {
  if (stored) return *stored;
  if (hint) return *hint;
  return type == SampleType::u8 ? VolumeKind::label : VolumeKind::intensity;
}

// ---- .lvol -----------------------------------------------------------------

fs::path payload_path(const fs::path& sidecar) {
  fs::path p = sidecar;
  p.replace_extension(".bin");
  return p;
}

template <typename T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) throw FormatError(std::string("lvol header: missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("lvol header: malformed field '") + name + "'");
  }
}

Eigen::Vector3d triple(const json& j, const char* name) {
  const auto v = field<std::vector<double>>(j, name);
  if (v.size() != 3) throw FormatError(std::string("lvol header: field '") + name + "' must have 3 entries");
  return {v[0], v[1], v[2]};
}

// ---- NIfTI-1 ---------------------------------------------------------------

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348);

constexpr std::int16_t kNiftiUint8 = 2;
constexpr std::int16_t kNiftiFloat32 = 16;
constexpr const char* kKindTag = "lesact kind=";

std::vector<char> read_all(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw FormatError("cannot open volume file '" + path.string() + "'");
  std::vector<char> bytes;
  char buffer[1 << 16];
  int n = 0;
  while ((n = gzread(f, buffer, sizeof(buffer))) > 0) bytes.insert(bytes.end(), buffer, buffer + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  const bool failed = n < 0 || (err != Z_OK && err != Z_STREAM_END);
  const std::string what = failed ? std::string(msg ? msg : "read error") : std::string();
  gzclose(f);
  if (failed) throw FormatError("nifti: corrupt or truncated stream in '" + path.string() + "': " + what);
  return bytes;
}

void write_all(const fs::path& path, const std::vector<char>& bytes, bool compress) {
  if (compress) {
    gzFile f = gzopen(path.string().c_str(), "wb");
    if (!f) throw FormatError("cannot create '" + path.string() + "'");
    const int written = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
    if (written != static_cast<int>(bytes.size())) throw FormatError("short write to '" + path.string() + "'");
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot create '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + path.string() + "'");
}

}  // namespace

Volume read_lvol(const fs::path& path, std::optional<VolumeKind> kind_hint) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open lvol header '" + path.string() + "'");
  json header;
  try {
    in >> header;
  } catch (const json::exception& e) {
    throw FormatError("lvol header '" + path.string() + "' is not valid JSON: " + e.what());
  }
  const auto shape_v = field<std::vector<long long>>(header, "shape");
  if (shape_v.size() != 3) throw FormatError("lvol header: field 'shape' must have 3 entries");
  for (auto s : shape_v)
    if (s < 1) throw FormatError("lvol header: field 'shape' entries must be >= 1");
  const Shape3 shape{shape_v[0], shape_v[1], shape_v[2]};
  const Eigen::Vector3d spacing = triple(header, "spacing");
  const Eigen::Vector3d origin = triple(header, "origin");
  const auto dtype = field<std::string>(header, "dtype");
  SampleType type;
  if (dtype == "f32") type = SampleType::f32;
  else if (dtype == "u8") type = SampleType::u8;
  else throw FormatError("lvol header: unsupported field 'dtype' value '" + dtype + "'");
  if (header.contains("byte_order") && field<std::string>(header, "byte_order") != "little")
    throw FormatError("lvol header: unsupported field 'byte_order' (only 'little')");
  std::optional<VolumeKind> stored;
  if (header.contains("kind")) {
    try {
      stored = volume_kind_from_string(field<std::string>(header, "kind"));
    } catch (const InvalidArgument&) {
      throw FormatError("lvol header: unsupported field 'kind' value");
    }
  }

  const fs::path payload = payload_path(path);
  std::ifstream bin(payload, std::ios::binary);
  if (!bin) throw FormatError("cannot open lvol payload '" + payload.string() + "'");
  const std::size_t expected = static_cast<std::size_t>(shape.voxels()) * sample_bytes(type);
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected)
    throw FormatError("lvol payload '" + payload.string() + "': size " + std::to_string(bytes.size()) +
                      " bytes does not match field 'shape' (" + std::to_string(expected) + " bytes expected)");
  try {
    return Volume(shape, spacing, origin, resolve_kind(stored, kind_hint, type),
                  decode_samples(bytes.data(), shape.voxels(), type));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("lvol '") + path.string() + "': " + e.what());
  }
}

void write_lvol(const Volume& v, const fs::path& path, std::optional<SampleType> type) {
  const SampleType t = default_type(v, type);
  const auto& s = v.shape();
  json header = {
      {"shape", {s.x, s.y, s.z}},
      {"spacing", {v.spacing()[0], v.spacing()[1], v.spacing()[2]}},
      {"origin", {v.origin()[0], v.origin()[1], v.origin()[2]}},
      {"kind", std::string(to_string(v.kind()))},
      {"dtype", t == SampleType::f32 ? "f32" : "u8"},
      {"byte_order", "little"},
  };
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot create '" + path.string() + "'");
    out << header.dump(2) << '\n';
  }
  write_all(payload_path(path), encode_samples(v, t), false);
}

Volume read_nifti(const fs::path& path, std::optional<VolumeKind> kind_hint) {
  const std::vector<char> bytes = read_all(path);
  if (bytes.size() < sizeof(NiftiHeader)) throw FormatError("nifti: file shorter than the 348-byte header");
  NiftiHeader h;
  std::memcpy(&h, bytes.data(), sizeof h);
  if (h.sizeof_hdr != 348) {
    if (h.sizeof_hdr == 0x5C010000) throw FormatError("nifti: field 'sizeof_hdr' indicates big-endian data (unsupported)");
    throw FormatError("nifti: field 'sizeof_hdr' must be 348");
  }
  if (std::memcmp(h.magic, "n+1", 4) != 0) throw FormatError("nifti: field 'magic' is not single-file NIfTI-1 ('n+1')");
  if (h.dim[0] < 3 || h.dim[0] > 7) throw FormatError("nifti: field 'dim[0]' must describe a 3D volume");
  for (int a = 1; a <= 3; ++a)
    if (h.dim[a] < 1) throw FormatError("nifti: field 'dim[" + std::to_string(a) + "]' must be >= 1");
  for (int a = 4; a <= h.dim[0]; ++a)
    if (h.dim[a] > 1) throw FormatError("nifti: field 'dim[" + std::to_string(a) + "]' > 1 (only 3D volumes are supported)");

  SampleType type;
  if (h.datatype == kNiftiFloat32 && h.bitpix == 32) type = SampleType::f32;
  else if (h.datatype == kNiftiUint8 && h.bitpix == 8) type = SampleType::u8;
  else throw FormatError("nifti: unsupported field 'datatype' (" + std::to_string(h.datatype) + ")");

  Shape3 shape{h.dim[1], h.dim[2], h.dim[3]};
  Eigen::Vector3d spacing(h.pixdim[1], h.pixdim[2], h.pixdim[3]);
  if (!(spacing.array() > 0.0).all()) throw FormatError("nifti: field 'pixdim' must be strictly positive");

  // Axis-aligned orientation only: signed per-axis scale plus translation.
  Eigen::Vector3d direction = Eigen::Vector3d::Ones();
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  if (h.sform_code > 0) {
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c)
        if (r != c && rows[r][c] != 0.0f) throw FormatError("nifti: field 'srow' describes a non-axis-aligned orientation");
      if (rows[r][r] == 0.0f) throw FormatError("nifti: field 'srow' has a zero diagonal");
      direction[r] = rows[r][r] < 0.0f ? -1.0 : 1.0;
      spacing[r] = std::abs(rows[r][r]);
      origin[r] = rows[r][3];
    }
  } else if (h.qform_code > 0) {
    if (h.quatern_b != 0.0f || h.quatern_c != 0.0f || h.quatern_d != 0.0f)
      throw FormatError("nifti: field 'quatern' describes a non-axis-aligned orientation");
    if (h.pixdim[0] < 0.0f) direction[2] = -1.0;
    origin = Eigen::Vector3d(h.qoffset_x, h.qoffset_y, h.qoffset_z);
  }

  if (h.vox_offset < 348.0f) throw FormatError("nifti: field 'vox_offset' must be >= 348");
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t need = static_cast<std::size_t>(shape.voxels()) * sample_bytes(type);
  if (bytes.size() < offset + need)
    throw FormatError("nifti: data truncated (field 'dim' requires " + std::to_string(need) + " bytes after 'vox_offset')");

  Volume::Data data = decode_samples(bytes.data() + offset, shape.voxels(), type);
  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f))
    data = data * h.scl_slope + h.scl_inter;

  // Flip negatively oriented axes so the stored grid always has positive spacing.
  for (int a = 0; a < 3; ++a) {
    if (direction[a] > 0.0) continue;
    Volume::Data flipped(data.size());
    for (Index k = 0; k < shape.z; ++k)
      for (Index j = 0; j < shape.y; ++j)
        for (Index i = 0; i < shape.x; ++i) {
          Index c[3] = {i, j, k};
          c[a] = shape[a] - 1 - c[a];
          flipped[shape.linear(c[0], c[1], c[2])] = data[shape.linear(i, j, k)];
        }
    data = std::move(flipped);
    origin[a] -= static_cast<double>(shape[a] - 1) * spacing[a];
  }

  std::optional<VolumeKind> stored;
  const std::string descrip(h.descrip, strnlen(h.descrip, sizeof h.descrip));
  if (descrip.rfind(kKindTag, 0) == 0) {
    try {
      stored = volume_kind_from_string(descrip.substr(std::strlen(kKindTag)));
    } catch (const InvalidArgument&) {
      throw FormatError("nifti: field 'descrip' carries an unknown volume kind");
    }
  }
  try {
    return Volume(shape, spacing, origin, resolve_kind(stored, kind_hint, type), std::move(data));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("nifti '") + path.string() + "': " + e.what());
  }
}

void write_nifti(const Volume& v, const fs::path& path, std::optional<SampleType> type) {
  const SampleType t = default_type(v, type);
  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  const auto& s = v.shape();
  for (int a = 0; a < 3; ++a) {
    if (s[a] > 32767) throw InvalidArgument("nifti: dimension exceeds 32767");
    h.dim[a + 1] = static_cast<std::int16_t>(s[a]);
  }
  for (int a = 4; a < 8; ++a) h.dim[a] = 1;
  h.datatype = t == SampleType::f32 ? kNiftiFloat32 : kNiftiUint8;
  h.bitpix = t == SampleType::f32 ? 32 : 8;
  h.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(v.spacing()[a]);
  for (int a = 4; a < 8; ++a) h.pixdim[a] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  const std::string descrip = std::string(kKindTag) + std::string(to_string(v.kind()));
  std::memcpy(h.descrip, descrip.data(), descrip.size());
  h.qform_code = 1;
  h.sform_code = 1;
  h.qoffset_x = static_cast<float>(v.origin()[0]);
  h.qoffset_y = static_cast<float>(v.origin()[1]);
  h.qoffset_z = static_cast<float>(v.origin()[2]);
  float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
  for (int r = 0; r < 3; ++r) {
    rows[r][r] = static_cast<float>(v.spacing()[r]);
    rows[r][3] = static_cast<float>(v.origin()[r]);
  }
  std::memcpy(h.magic, "n+1", 4);

  std::vector<char> bytes(352, 0);
  std::memcpy(bytes.data(), &h, sizeof h);
  const std::vector<char> payload = encode_samples(v, t);
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_all(path, bytes, ends_with(path.string(), ".gz"));
}

Volume read_volume(const fs::path& path, std::optional<VolumeKind> kind_hint) {
  const std::string name = path.string();
  if (ends_with(name, ".lvol")) return read_lvol(path, kind_hint);
  if (ends_with(name, ".nii") || ends_with(name, ".nii.gz")) return read_nifti(path, kind_hint);
  throw FormatError("unsupported volume file extension: '" + name + "'");
}

void write_volume(const Volume& v, const fs::path& path, std::optional<SampleType> type) {
  const std::string name = path.string();
  if (ends_with(name, ".lvol")) return write_lvol(v, path, type);
  if (ends_with(name, ".nii") || ends_with(name, ".nii.gz")) return write_nifti(v, path, type);
  throw FormatError("unsupported volume file extension: '" + name + "'");
}

}  // namespace lesact
