// SPDX-License-Identifier: Apache-2.0
#include "matforge/image.hpp"

#include <algorithm>
#include <cmath>

#include "matforge/common.hpp"

namespace matforge {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels)
{
    if (height < 0 || width < 0 || channels < 0)
        throw StructuralError("negative image dimension");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

bool Image::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Image::mean() const
{
    if (data_.empty())
        return 0.0;
    double s = 0.0;
    for (double v : data_)
        s += v;
    return s / static_cast<double>(data_.size());
}

double Image::max_abs_diff(const Image& o) const
{
    if (!same_shape(o))
        throw StructuralError("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i)
        m = std::max(m, std::abs(data_[i] - o.data_[i]));
    return m;
}

double Image::rmse(const Image& o) const
{
    if (!same_shape(o))
        throw StructuralError("rmse: shape mismatch");
    if (data_.empty())
        return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) {
        const double d = data_[i] - o.data_[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(data_.size()));
}

Image Image::slice_channels(int first, int count) const
{
    if (first < 0 || count < 0 || first + count > channels_)
        throw StructuralError("slice_channels: channel range out of bounds");
    Image out(height_, width_, count);
    for (int y = 0; y < height_; ++y)
        for (int x = 0; x < width_; ++x)
            for (int c = 0; c < count; ++c)
                out.at(y, x, c) = at(y, x, first + c);
    return out;
}

Image concat_channels(std::span<const Image* const> parts)
{
    if (parts.empty())
        return {};
    const int h = parts[0]->height();
    const int w = parts[0]->width();
    int channels = 0;
    for (const Image* p : parts) {
        if (p->height() != h || p->width() != w)
            throw StructuralError("concat_channels: resolution mismatch");
        channels += p->channels();
    }
    Image out(h, w, channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int c0 = 0;
            for (const Image* p : parts) {
                for (int c = 0; c < p->channels(); ++c)
                    out.at(y, x, c0 + c) = p->at(y, x, c);
                c0 += p->channels();
            }
        }
    return out;
}

void sample_bilinear(const Image& img, double x, double y, std::span<double> out)
{
    const double fx = x - 0.5;
    const double fy = y - 0.5;
    const double x0f = std::floor(fx);
    const double y0f = std::floor(fy);
    const double tx = fx - x0f;
    const double ty = fy - y0f;
    const auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    const int x0 = clampi(static_cast<int>(x0f), img.width());
    const int x1 = clampi(static_cast<int>(x0f) + 1, img.width());
    const int y0 = clampi(static_cast<int>(y0f), img.height());
    const int y1 = clampi(static_cast<int>(y0f) + 1, img.height());
    const double w00 = (1 - tx) * (1 - ty), w01 = tx * (1 - ty), w10 = (1 - tx) * ty, w11 = tx * ty;
    for (int c = 0; c < img.channels(); ++c) {
        double v = w00 * img.at(y0, x0, c);
        if (w01 != 0.0)
            v += w01 * img.at(y0, x1, c);
        if (w10 != 0.0)
            v += w10 * img.at(y1, x0, c);
        if (w11 != 0.0)
            v += w11 * img.at(y1, x1, c);
        out[c] = v;
    }
}

Image resize_bilinear(const Image& img, int height, int width)
{
    Image out(height, width, img.channels());
    const double sx = static_cast<double>(img.width()) / width;
    const double sy = static_cast<double>(img.height()) / height;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            sample_bilinear(img, (x + 0.5) * sx, (y + 0.5) * sy, out.pixel(y, x));
    return out;
}

Image upsample2_bilinear(const Image& img)
{
    return resize_bilinear(img, img.height() * 2, img.width() * 2);
}

Image downsample2_average(const Image& img)
{
    if (img.height() % 2 != 0 || img.width() % 2 != 0)
        throw StructuralError("downsample2_average: odd resolution");
    Image out(img.height() / 2, img.width() / 2, img.channels());
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                out.at(y, x, c) = 0.25 * (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) +
                                          img.at(2 * y + 1, 2 * x, c) + img.at(2 * y + 1, 2 * x + 1, c));
    return out;
}

Image rotate90(const Image& img)
{
    // Counter-clockwise: new(y, x) = old(x, W - 1 - y).
    Image out(img.width(), img.height(), img.channels());
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                out.at(y, x, c) = img.at(x, img.width() - 1 - y, c);
    return out;
}

Image flip_horizontal(const Image& img)
{
    Image out(img.height(), img.width(), img.channels());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
    return out;
}

} // namespace matforge
