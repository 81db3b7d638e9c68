// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "matforge/image.hpp"

namespace matforge {

/// Zero-mean height map in exemplar units (1-channel image).
struct HeightField {
    Image heights;

    int height() const { return heights.height(); }
    int width() const { return heights.width(); }
    double at(int y, int x) const { return heights.at(y, x, 0); }
};

/// Largest slope magnitude passed to the integrator.
inline constexpr double kMaxSlope = 20.0;

struct IntegrationStats {
    int clamped_normals = 0; // pixels whose z fell below the floor
    int clamped_slopes = 0;  // pixels whose slope exceeded kMaxSlope
};

/// Least-squares integration of a gradient field (dh/dx, dh/dy in world
/// units, +y up) with Neumann boundaries, solved directly with a DCT.
HeightField integrate_gradients(const Image& dh_dx, const Image& dh_dy, double pixel_size);

/// Normals -> slopes (-nx/nz, -ny/nz) -> integrate_gradients.
HeightField normals_to_height(const Image& normals, double pixel_size, IntegrationStats* stats = nullptr);

/// Central differences (one-sided at borders), normalized.
Image height_to_normals(const HeightField& h, double pixel_size);

} // namespace matforge
