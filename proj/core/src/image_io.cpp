// SPDX-License-Identifier: Apache-2.0
#include "matforge/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "matforge/common.hpp"

namespace matforge {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const
    {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode)
{
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f)
        throw IoError("cannot open " + path.string());
    return f;
}

[[noreturn]] void png_error_fn(png_structp, png_const_charp msg)
{
    throw IoError(std::string("libpng: ") + msg);
}

void png_warning_fn(png_structp, png_const_charp) {}

void write_png_rows(const std::filesystem::path& path, int height, int width, int channels, int bit_depth,
                    const std::vector<std::uint8_t>& bytes)
{
    if (channels != 1 && channels != 3)
        throw StructuralError("PNG writer supports 1 or 3 channels");
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, width, height, bit_depth, channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
        for (int y = 0; y < height; ++y)
            png_write_row(png, const_cast<png_bytep>(bytes.data() + y * stride));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

} // namespace

void write_png16(const std::filesystem::path& path, int height, int width, int channels,
                 const std::vector<std::uint16_t>& codes)
{
    if (codes.size() != static_cast<std::size_t>(height) * width * channels)
        throw StructuralError("write_png16: code count does not match shape");
    std::vector<std::uint8_t> bytes(codes.size() * 2);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        bytes[2 * i] = static_cast<std::uint8_t>(codes[i] >> 8); // PNG is big-endian
        bytes[2 * i + 1] = static_cast<std::uint8_t>(codes[i] & 0xff);
    }
    write_png_rows(path, height, width, channels, 16, bytes);
}

Png16 read_png(const std::filesystem::path& path)
{
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, png_warning_fn);
    png_infop info = png_create_info_struct(png);
    Png16 out;
    try {
        png_init_io(png, f.get());
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (color == PNG_COLOR_TYPE_PALETTE)
            png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
            png_set_expand_gray_1_2_4_to_8(png);
        if (color & PNG_COLOR_MASK_ALPHA)
            png_set_strip_alpha(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS))
            png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
        png_read_update_info(png, info);
        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.channels = png_get_channels(png, info);
        const int bit_depth = png_get_bit_depth(png, info);
        const std::size_t rowbytes = png_get_rowbytes(png, info);
        std::vector<std::uint8_t> row(rowbytes);
        out.codes.resize(static_cast<std::size_t>(out.height) * out.width * out.channels);
        const std::size_t per_row = static_cast<std::size_t>(out.width) * out.channels;
        for (int y = 0; y < out.height; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (std::size_t i = 0; i < per_row; ++i) {
                out.codes[y * per_row + i] = bit_depth == 16
                                                 ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1])
                                                 : static_cast<std::uint16_t>(row[i] * 257);
            }
        }
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png8(const std::filesystem::path& path, const Image& display_rgb)
{
    if (display_rgb.channels() != 3 && display_rgb.channels() != 1)
        throw StructuralError("write_png8: expected 1 or 3 channels");
    std::vector<std::uint8_t> bytes(display_rgb.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::clamp(display_rgb.data()[i], 0.0, 1.0);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    write_png_rows(path, display_rgb.height(), display_rgb.width(), display_rgb.channels(), 8, bytes);
}

void write_pfm(const std::filesystem::path& path, const Image& img)
{
    if (img.channels() != 1 && img.channels() != 3)
        throw StructuralError("PFM supports 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path.string());
    out << (img.channels() == 3 ? "PF" : "Pf") << "\n" << img.width() << " " << img.height() << "\n-1.0\n";
    static_assert(std::endian::native == std::endian::little, "PFM writer assumes a little-endian host");
    std::vector<float> row(static_cast<std::size_t>(img.width()) * img.channels());
    for (int y = img.height() - 1; y >= 0; --y) {
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                row[x * img.channels() + c] = static_cast<float>(img.at(y, x, c));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out)
        throw IoError("write failed: " + path.string());
}

Image read_pfm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string magic;
    int width = 0, height = 0;
    double scale = 0.0;
    in >> magic >> width >> height >> scale;
    in.get();
    if (!in || (magic != "PF" && magic != "Pf") || width <= 0 || height <= 0)
        throw IoError("malformed PFM header: " + path.string());
    const int channels = magic == "PF" ? 3 : 1;
    const bool little = scale < 0;
    Image img(height, width, channels);
    std::vector<std::uint32_t> row(static_cast<std::size_t>(width) * channels);
    for (int y = height - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
        if (!in)
            throw IoError("truncated PFM: " + path.string());
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c) {
                std::uint32_t bits = row[x * channels + c];
                if (little != (std::endian::native == std::endian::little))
                    bits = __builtin_bswap32(bits);
                img.at(y, x, c) = static_cast<double>(std::bit_cast<float>(bits));
            }
    }
    return img;
}

double srgb_encode(double linear)
{
    const double v = std::clamp(linear, 0.0, 1.0);
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double srgb_decode(double encoded)
{
    const double v = std::clamp(encoded, 0.0, 1.0);
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

Image to_display(const Image& linear_rgb, double exposure)
{
    Image out = linear_rgb;
    for (double& v : out.data())
        v = srgb_encode(v * exposure);
    return out;
}

} // namespace matforge
