#include "bpeq/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

namespace bpeq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

constexpr std::int32_t kNiftiHeaderSize = 348;
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtUint16 = 512;
constexpr std::int64_t kVoxOffset = 352;

template <typename T>
T byteswap_value(T v) {
  std::array<unsigned char, sizeof(T)> b{};
  std::memcpy(b.data(), &v, sizeof(T));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(T));
  return v;
}

// Reads/writes little-endian header fields at fixed offsets.
class HeaderView {
 public:
  HeaderView(unsigned char* bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T>
  T get(std::size_t offset) const {
    T v;
    std::memcpy(&v, bytes_ + offset, sizeof(T));
    return swap_ ? byteswap_value(v) : v;
  }
  template <typename T>
  void put(std::size_t offset, T v) {
    if (swap_) {
      v = byteswap_value(v);
    }
    std::memcpy(bytes_ + offset, &v, sizeof(T));
  }

 private:
  unsigned char* bytes_;
  bool swap_;
};

std::vector<char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> data(size);
  if (size > 0 && !in.read(data.data(), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading " + path.string());
  }
  return data;
}

void dump(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  out.flush();
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

std::size_t dtype_bytes(std::int16_t datatype) {
  switch (datatype) {
    case kDtUint8: return 1;
    case kDtInt16:
    case kDtUint16: return 2;
    case kDtFloat32: return 4;
    case kDtFloat64: return 8;
    default: return 0;
  }
}

template <typename T>
void decode_into(const char* src, std::size_t n, bool swap, std::vector<float>& out) {
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, src + i * sizeof(T), sizeof(T));
    if (swap) {
      v = byteswap_value(v);
    }
    out[i] = static_cast<float>(v);
  }
}

std::vector<float> decode_payload(const char* src, std::size_t n, std::int16_t datatype, bool swap) {
  std::vector<float> out(n);
  switch (datatype) {
    case kDtUint8: decode_into<std::uint8_t>(src, n, false, out); break;
    case kDtInt16: decode_into<std::int16_t>(src, n, swap, out); break;
    case kDtUint16: decode_into<std::uint16_t>(src, n, swap, out); break;
    case kDtFloat32: decode_into<float>(src, n, swap, out); break;
    case kDtFloat64: decode_into<double>(src, n, swap, out); break;
    default: throw FormatError("unsupported datatype " + std::to_string(datatype));
  }
  return out;
}

void require_finite(const std::vector<float>& v, const fs::path& path) {
  if (!std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); })) {
    throw FormatError("non-finite voxel values in " + path.string());
  }
}

Geometry checked_geometry(Geometry g, const fs::path& path) {
  try {
    g.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string(e.what()) + " in " + path.string());
  }
  return g;
}

// ---- NIfTI-1 ---------------------------------------------------------------

Volume3D read_nifti(const fs::path& path) {
  std::vector<char> file = slurp(path);
  if (file.size() < static_cast<std::size_t>(kNiftiHeaderSize)) {
    throw FormatError("truncated NIfTI header in " + path.string());
  }
  auto* bytes = reinterpret_cast<unsigned char*>(file.data());
  std::int32_t sizeof_hdr = 0;
  std::memcpy(&sizeof_hdr, bytes, 4);
  bool swap = false;
  if (sizeof_hdr != kNiftiHeaderSize) {
    if (byteswap_value(sizeof_hdr) != kNiftiHeaderSize) {
      throw FormatError("not a NIfTI-1 file (sizeof_hdr != 348): " + path.string());
    }
    swap = true;
  }
  if (std::memcmp(bytes + 344, "n+1", 4) != 0) {
    throw FormatError("unsupported NIfTI flavour (magic is not \"n+1\"): " + path.string());
  }
  const HeaderView h(bytes, swap);

  const auto ndim = h.get<std::int16_t>(40);
  if (ndim < 1 || ndim > 7) {
    throw FormatError("invalid dim[0] in " + path.string());
  }
  Geometry g;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = a < ndim ? h.get<std::int16_t>(42 + 2 * a) : 1;
    g.spacing[a] = a < ndim ? static_cast<double>(h.get<float>(80 + 4 * a)) : 1.0;
  }
  for (int a = 3; a < ndim; ++a) {
    if (h.get<std::int16_t>(42 + 2 * a) > 1) {
      throw FormatError("4D and higher NIfTI volumes are not supported: " + path.string());
    }
  }

  NiftiOrientation o;
  o.qfac = h.get<float>(76);
  o.qform_code = h.get<std::int16_t>(252);
  o.sform_code = h.get<std::int16_t>(254);
  o.quatern_b = h.get<float>(256);
  o.quatern_c = h.get<float>(260);
  o.quatern_d = h.get<float>(264);
  for (int i = 0; i < 4; ++i) {
    o.srow_x[i] = h.get<float>(280 + 4 * i);
    o.srow_y[i] = h.get<float>(296 + 4 * i);
    o.srow_z[i] = h.get<float>(312 + 4 * i);
  }
  if (o.qform_code > 0 || o.sform_code == 0) {
    g.origin = {h.get<float>(268), h.get<float>(272), h.get<float>(276)};
  } else {
    g.origin = {o.srow_x[3], o.srow_y[3], o.srow_z[3]};
  }
  g.orientation = o;
  g = checked_geometry(g, path);

  const auto datatype = h.get<std::int16_t>(70);
  const std::size_t bpv = dtype_bytes(datatype);
  if (bpv == 0) {
    throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype) + " in " + path.string());
  }
  const auto vox_offset = static_cast<std::int64_t>(h.get<float>(108));
  if (vox_offset < kNiftiHeaderSize || static_cast<std::size_t>(vox_offset) > file.size()) {
    throw FormatError("invalid vox_offset in " + path.string());
  }
  const auto n = static_cast<std::size_t>(g.count());
  const std::size_t payload = file.size() - static_cast<std::size_t>(vox_offset);
  if (payload != n * bpv) {
    throw FormatError("payload size mismatch in " + path.string() + ": header implies " + std::to_string(n) +
                      " voxels, file holds " + std::to_string(payload / bpv));
  }
  std::vector<float> voxels = decode_payload(file.data() + vox_offset, n, datatype, swap);

  const float slope = h.get<float>(112);
  const float inter = h.get<float>(116);
  if (std::isfinite(slope) && std::isfinite(inter) && slope != 0.0F && !(slope == 1.0F && inter == 0.0F)) {
    for (float& v : voxels) {
      v = v * slope + inter;
    }
  }
  require_finite(voxels, path);
  return Volume3D(std::move(g), std::move(voxels));
}

void write_nifti(const Geometry& g, const void* payload, std::size_t bytes_per_voxel, std::int16_t datatype,
                 const fs::path& path) {
  for (auto d : g.dims) {
    if (d > 32767) {
      throw InvalidArgument("dimension exceeds NIfTI-1 limit: " + std::to_string(d));
    }
  }
  const std::size_t payload_bytes = static_cast<std::size_t>(g.count()) * bytes_per_voxel;
  std::vector<unsigned char> buf(static_cast<std::size_t>(kVoxOffset) + payload_bytes, 0);
  HeaderView h(buf.data(), std::endian::native != std::endian::little);
  h.put<std::int32_t>(0, kNiftiHeaderSize);
  h.put<std::int16_t>(40, 3);
  for (int a = 0; a < 3; ++a) {
    h.put<std::int16_t>(42 + 2 * a, static_cast<std::int16_t>(g.dims[a]));
    h.put<float>(80 + 4 * a, static_cast<float>(g.spacing[a]));
  }
  for (int a = 3; a < 7; ++a) {
    h.put<std::int16_t>(42 + 2 * a, 1);
    h.put<float>(80 + 4 * a, 1.0F);
  }
  h.put<std::int16_t>(70, datatype);
  h.put<std::int16_t>(72, static_cast<std::int16_t>(bytes_per_voxel * 8));
  h.put<float>(108, static_cast<float>(kVoxOffset));
  h.put<float>(112, 0.0F);
  h.put<float>(116, 0.0F);
  buf[123] = 2;  // xyzt_units: mm

  const NiftiOrientation o = g.orientation.value_or(NiftiOrientation{.qform_code = 1});
  h.put<float>(76, o.qfac);
  h.put<std::int16_t>(252, o.qform_code);
  h.put<std::int16_t>(254, o.sform_code);
  h.put<float>(256, o.quatern_b);
  h.put<float>(260, o.quatern_c);
  h.put<float>(264, o.quatern_d);
  h.put<float>(268, static_cast<float>(g.origin[0]));
  h.put<float>(272, static_cast<float>(g.origin[1]));
  h.put<float>(276, static_cast<float>(g.origin[2]));
  for (int i = 0; i < 4; ++i) {
    h.put<float>(280 + 4 * i, o.srow_x[i]);
    h.put<float>(296 + 4 * i, o.srow_y[i]);
    h.put<float>(312 + 4 * i, o.srow_z[i]);
  }
  std::memcpy(buf.data() + 344, "n+1", 4);

  unsigned char* dst = buf.data() + kVoxOffset;
  std::memcpy(dst, payload, payload_bytes);
  if (std::endian::native != std::endian::little && bytes_per_voxel > 1) {
    for (std::size_t i = 0; i < payload_bytes; i += bytes_per_voxel) {
      std::reverse(dst + i, dst + i + bytes_per_voxel);
    }
  }
  dump(path, buf.data(), buf.size());
}

// ---- raw + JSON sidecar ----------------------------------------------------

struct SidecarPaths {
  fs::path json;
  fs::path raw;
};

SidecarPaths sidecar_paths(const fs::path& path) {
  fs::path stem = path;
  stem.replace_extension();
  return {fs::path(stem).concat(".json"), fs::path(stem).concat(".raw")};
}

Index3 json_index3(const json& j, const char* key) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != 3) {
    throw FormatError(std::string("sidecar field \"") + key + "\" must be a 3-element array");
  }
  return {arr[0].get<std::int64_t>(), arr[1].get<std::int64_t>(), arr[2].get<std::int64_t>()};
}

Vec3 json_vec3(const json& j, const char* key) {
  const auto& arr = j.at(key);
  if (!arr.is_array() || arr.size() != 3) {
    throw FormatError(std::string("sidecar field \"") + key + "\" must be a 3-element array");
  }
  return {arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>()};
}

Volume3D read_sidecar(const fs::path& path) {
  const SidecarPaths p = sidecar_paths(path);
  const std::vector<char> meta_bytes = slurp(p.json);
  json meta;
  Geometry g;
  std::string dtype;
  try {
    meta = json::parse(meta_bytes.begin(), meta_bytes.end());
    g.dims = json_index3(meta, "dims");
    g.spacing = json_vec3(meta, "spacing");
    g.origin = json_vec3(meta, "origin");
    dtype = meta.at("dtype").get<std::string>();
    if (meta.contains("order") && meta["order"].get<std::string>() != "x-fastest") {
      throw FormatError("unsupported voxel order in " + p.json.string());
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + p.json.string() + ": " + e.what());
  }
  g = checked_geometry(g, p.json);

  std::int16_t datatype = 0;
  if (dtype == "f32") {
    datatype = kDtFloat32;
  } else if (dtype == "u8") {
    datatype = kDtUint8;
  } else {
    throw FormatError("unsupported sidecar dtype \"" + dtype + "\" in " + p.json.string());
  }
  const std::vector<char> payload = slurp(p.raw);
  const std::size_t bpv = dtype_bytes(datatype);
  const auto n = static_cast<std::size_t>(g.count());
  if (payload.size() != n * bpv) {
    throw FormatError("payload size mismatch in " + p.raw.string() + ": header implies " + std::to_string(n) +
                      " voxels, file holds " + std::to_string(payload.size() / bpv));
  }
  std::vector<float> voxels = decode_payload(payload.data(), n, datatype, std::endian::native != std::endian::little);
  require_finite(voxels, p.raw);
  return Volume3D(std::move(g), std::move(voxels));
}

void write_sidecar(const Geometry& g, const void* payload, std::size_t bytes_per_voxel, const char* dtype,
                   const fs::path& path) {
  const SidecarPaths p = sidecar_paths(path);
  const json meta = {
      {"dims", {g.dims[0], g.dims[1], g.dims[2]}},
      {"spacing", {g.spacing[0], g.spacing[1], g.spacing[2]}},
      {"origin", {g.origin[0], g.origin[1], g.origin[2]}},
      {"dtype", dtype},
      {"order", "x-fastest"},
  };
  const std::string text = meta.dump(2) + "\n";
  const std::size_t payload_bytes = static_cast<std::size_t>(g.count()) * bytes_per_voxel;
  if constexpr (std::endian::native == std::endian::little) {
    dump(p.raw, payload, payload_bytes);
  } else {
    std::vector<unsigned char> copy(static_cast<const unsigned char*>(payload),
                                    static_cast<const unsigned char*>(payload) + payload_bytes);
    for (std::size_t i = 0; i < payload_bytes; i += bytes_per_voxel) {
      std::reverse(copy.begin() + static_cast<std::ptrdiff_t>(i),
                   copy.begin() + static_cast<std::ptrdiff_t>(i + bytes_per_voxel));
    }
    dump(p.raw, copy.data(), copy.size());
  }
  dump(p.json, text.data(), text.size());
}

}  // namespace

VolumeFormat format_for_path(const fs::path& path) {
  const std::string name = path.filename().string();
  const auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".nii")) {
    return VolumeFormat::kNifti;
  }
  if (ends_with(".json") || ends_with(".raw")) {
    return VolumeFormat::kRawSidecar;
  }
  throw FormatError("unsupported volume format (expected .nii, .json or .raw): " + path.string());
}

Volume3D read_volume(const fs::path& path) {
  return format_for_path(path) == VolumeFormat::kNifti ? read_nifti(path) : read_sidecar(path);
}

Mask3D read_mask(const fs::path& path) {
  Volume3D vol = read_volume(path);
  const Geometry g = vol.geometry();
  std::vector<float> v = std::move(vol).take_voxels();
  std::vector<std::uint8_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0F && v[i] != 1.0F) {
      throw FormatError("mask voxel not in {0,1} in " + path.string());
    }
    out[i] = v[i] != 0.0F ? 1 : 0;
  }
  return Mask3D(g, std::move(out));
}

void write_volume(const Volume3D& vol, const fs::path& path) {
  if (format_for_path(path) == VolumeFormat::kNifti) {
    write_nifti(vol.geometry(), vol.voxels().data(), sizeof(float), kDtFloat32, path);
  } else {
    write_sidecar(vol.geometry(), vol.voxels().data(), sizeof(float), "f32", path);
  }
}

void write_mask(const Mask3D& mask, const fs::path& path) {
  if (format_for_path(path) == VolumeFormat::kNifti) {
    write_nifti(mask.geometry(), mask.voxels().data(), 1, kDtUint8, path);
  } else {
    write_sidecar(mask.geometry(), mask.voxels().data(), 1, "u8", path);
  }
}

}  // namespace bpeq
