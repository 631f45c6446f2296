#pragma once

#include "wmhlab/volume.hpp"

#include <filesystem>

namespace wmhlab {

// WMHV1 on-disk grid format, bit-exact round trip:
//   one UTF-8 JSON header line
//     {"magic":"WMHV1","dims":[nx,ny,nz],"spacing":[sx,sy,sz],"dtype":"f32"|"u8","kind":"image"|"mask"}
//   terminated by '\n', followed by raw little-endian voxel data in x-fastest order.
void save_volume(const Volume3D& vol, const std::filesystem::path& path);
Volume3D load_volume(const std::filesystem::path& path);

void save_mask(const Mask3D& mask, const std::filesystem::path& path);
Mask3D load_mask(const std::filesystem::path& path);

} // namespace wmhlab
