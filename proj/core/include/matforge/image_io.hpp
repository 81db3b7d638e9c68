// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "matforge/image.hpp"

namespace matforge {

/// 16-bit PNG with 1 or 3 channels. Values are raw quantization codes in
/// [0, 65535]; callers own the mapping to physical units.
void write_png16(const std::filesystem::path& path, int height, int width, int channels,
                 const std::vector<std::uint16_t>& codes);

struct Png16 {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint16_t> codes;
};

/// Reads 8- or 16-bit gray/RGB(A) PNGs; 8-bit codes are widened by 257 so
/// full scale is always 65535. Alpha is dropped.
Png16 read_png(const std::filesystem::path& path);

/// 8-bit RGB PNG from values in [0, 1] (already display-encoded).
void write_png8(const std::filesystem::path& path, const Image& display_rgb);

/// Portable float map (32-bit little-endian, 1 or 3 channels). Rows are
/// stored bottom-to-top on disk per the format; in memory row 0 is the top.
void write_pfm(const std::filesystem::path& path, const Image& img);
Image read_pfm(const std::filesystem::path& path);

double srgb_encode(double linear);
double srgb_decode(double encoded);

/// Linear HDR -> display image: exposure scale, clamp, sRGB transfer.
Image to_display(const Image& linear_rgb, double exposure = 1.0);

} // namespace matforge
