// SPDX-License-Identifier: Apache-2.0
#include "matforge/geometry.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>

#include "matforge/common.hpp"
#include "matforge/material.hpp"

namespace matforge {

namespace {

// FFTW planning is not thread-safe; execution with new-array execute is.
std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

/// 2-D DCT-II (kind = FFTW_REDFT10) or its inverse DCT-III (FFTW_REDFT01),
/// in place on a row-major H x W array.
void dct2d(std::vector<double>& data, int h, int w, fftw_r2r_kind kind)
{
    std::vector<double> out(data.size());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        plan = fftw_plan_r2r_2d(h, w, data.data(), out.data(), kind, kind, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    data.swap(out);
}

} // namespace

HeightField integrate_gradients(const Image& dh_dx, const Image& dh_dy, double pixel_size)
{
    if (!dh_dx.same_shape(dh_dy) || dh_dx.channels() != 1)
        throw StructuralError("integrate_gradients: gradient maps must be matching single-channel images");
    const int h = dh_dx.height();
    const int w = dh_dx.width();
    if (h < 1 || w < 1)
        throw StructuralError("integrate_gradients: empty gradient field");

    // Forward-difference least squares: minimize sum over horizontal edges of
    // (h[y][x+1] - h[y][x] - gx)^2 and over vertical edges (row y -> y+1 moves
    // by -pixel_size in world y) of (h[y+1][x] - h[y][x] + gy)^2. Edge targets
    // are the average of the two pixel gradients. Normal equations give a
    // Neumann Poisson problem L h = D^T g, diagonalized by the DCT-II.
    std::vector<double> rhs(static_cast<std::size_t>(h) * w, 0.0);
    auto idx = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) {
            const double g = 0.5 * (dh_dx.at(y, x, 0) + dh_dx.at(y, x + 1, 0)) * pixel_size;
            rhs[idx(y, x + 1)] += g;
            rhs[idx(y, x)] -= g;
        }
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double g = -0.5 * (dh_dy.at(y, x, 0) + dh_dy.at(y + 1, x, 0)) * pixel_size;
            rhs[idx(y + 1, x)] += g;
            rhs[idx(y, x)] -= g;
        }

    dct2d(rhs, h, w, FFTW_REDFT10);
    for (int ky = 0; ky < h; ++ky)
        for (int kx = 0; kx < w; ++kx) {
            const double sx = std::sin(kPi * kx / (2.0 * w));
            const double sy = std::sin(kPi * ky / (2.0 * h));
            const double lambda = 4.0 * sx * sx + 4.0 * sy * sy;
            // L = D^T D is diagonal in the DCT-II basis; the constant mode is free.
            rhs[idx(ky, kx)] = (kx == 0 && ky == 0) ? 0.0 : rhs[idx(ky, kx)] / lambda;
        }
    dct2d(rhs, h, w, FFTW_REDFT01);

    HeightField out{Image(h, w, 1)};
    const double norm = 1.0 / (4.0 * h * w);
    double mean = 0.0;
    for (std::size_t i = 0; i < rhs.size(); ++i) {
        out.heights.data()[i] = rhs[i] * norm;
        mean += out.heights.data()[i];
    }
    mean /= static_cast<double>(rhs.size());
    for (double& v : out.heights.data())
        v -= mean;
    return out;
}

HeightField normals_to_height(const Image& normals, double pixel_size, IntegrationStats* stats)
{
    if (normals.channels() != 3)
        throw StructuralError("normals_to_height: expected a 3-channel normal map");
    IntegrationStats local;
    Image gx(normals.height(), normals.width(), 1);
    Image gy(normals.height(), normals.width(), 1);
    for (int y = 0; y < normals.height(); ++y)
        for (int x = 0; x < normals.width(); ++x) {
            Vec3 n = normals.rgb(y, x);
            if (n.z < kNormalZFloor) {
                n.z = kNormalZFloor;
                ++local.clamped_normals;
            }
            double sx = -n.x / n.z;
            double sy = -n.y / n.z;
            const double mag = std::hypot(sx, sy);
            if (mag > kMaxSlope) {
                sx *= kMaxSlope / mag;
                sy *= kMaxSlope / mag;
                ++local.clamped_slopes;
            }
            gx.at(y, x, 0) = sx;
            gy.at(y, x, 0) = sy;
        }
    if (stats)
        *stats = local;
    return integrate_gradients(gx, gy, pixel_size);
}

Image height_to_normals(const HeightField& hf, double pixel_size)
{
    const int h = hf.height();
    const int w = hf.width();
    Image out(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
            const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
            const double dx = xr > xl ? (hf.at(y, xr) - hf.at(y, xl)) / ((xr - xl) * pixel_size) : 0.0;
            // Row index grows downwards, world y grows upwards.
            const double dy = yd > yu ? (hf.at(yu, x) - hf.at(yd, x)) / ((yd - yu) * pixel_size) : 0.0;
            out.set_rgb(y, x, normalize(Vec3{-dx, -dy, 1.0}));
        }
    return out;
}

} // namespace matforge
