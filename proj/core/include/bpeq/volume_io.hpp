#pragma once

#include <filesystem>

#include "bpeq/volume.hpp"

namespace bpeq {

// On-disk formats, chosen by extension:
//   *.nii          NIfTI-1 single file, uncompressed
//   *.json, *.raw  little-endian payload + JSON sidecar sharing the stem
//                  {"dims":[..], "spacing":[..], "origin":[..],
//                   "dtype":"f32"|"u8", "order":"x-fastest"}
enum class VolumeFormat { kNifti, kRawSidecar };

VolumeFormat format_for_path(const std::filesystem::path& path);

// Throws IoError (missing/unreadable file) or FormatError (bad header,
// unsupported datatype, "payload size mismatch", non-finite voxels).
Volume3D read_volume(const std::filesystem::path& path);
// read_volume plus a check that every voxel is 0 or 1.
Mask3D read_mask(const std::filesystem::path& path);

// float32 payload. Throws IoError naming the path on failure.
void write_volume(const Volume3D& vol, const std::filesystem::path& path);
// uint8 payload.
void write_mask(const Mask3D& mask, const std::filesystem::path& path);

}  // namespace bpeq
