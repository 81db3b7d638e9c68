// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "matforge/vec3.hpp"

namespace matforge {

/// Dense H x W x C image of doubles, channels interleaved, row 0 at the top.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

    std::span<double> pixel(int y, int x)
    {
        return {data_.data() + index(y, x, 0), static_cast<std::size_t>(channels_)};
    }
    std::span<const double> pixel(int y, int x) const
    {
        return {data_.data() + index(y, x, 0), static_cast<std::size_t>(channels_)};
    }

    Rgb rgb(int y, int x) const
    {
        const double* p = data_.data() + index(y, x, 0);
        return {p[0], p[1], p[2]};
    }
    void set_rgb(int y, int x, const Rgb& v)
    {
        double* p = data_.data() + index(y, x, 0);
        p[0] = v.x;
        p[1] = v.y;
        p[2] = v.z;
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Image& o) const
    {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }

    bool all_finite() const;
    double mean() const;
    double max_abs_diff(const Image& o) const;
    double rmse(const Image& o) const;

    /// Channels [first, first + count) as a new image.
    Image slice_channels(int first, int count) const;

    bool operator==(const Image& o) const = default;

private:
    std::size_t index(int y, int x, int c) const
    {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Channel-wise concatenation; all inputs must share H and W.
Image concat_channels(std::span<const Image* const> parts);

/// Bilinear sample with pixel centres at integer + 0.5 and clamp-to-edge.
void sample_bilinear(const Image& img, double x, double y, std::span<double> out);

Image resize_bilinear(const Image& img, int height, int width);
Image upsample2_bilinear(const Image& img);
Image downsample2_average(const Image& img);
Image rotate90(const Image& img); // counter-clockwise pixel permutation
Image flip_horizontal(const Image& img);

} // namespace matforge
