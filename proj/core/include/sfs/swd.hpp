#pragma once

#include <cstddef>
#include <vector>

#include "sfs/common.hpp"

namespace sfs {

/// Point cloud: n points of dimension dim, row-major.
struct Points {
    int dim = 0;
    std::vector<double> coords;

    Points() = default;
    Points(int d, std::size_t n) : dim(d), coords(n * d, 0.0) {}

    std::size_t count() const { return dim == 0 ? 0 : coords.size() / dim; }
    double* p(std::size_t i) { return &coords[i * dim]; }
    const double* p(std::size_t i) const { return &coords[i * dim]; }
};

/// Bank of random unit directions used as 1D slices.
struct ProjectionBank {
    int dim = 0;
    int count = 0;
    std::vector<double> dirs;  // count x dim row-major

    const double* dir(int l) const { return &dirs[static_cast<std::size_t>(l) * dim]; }
};

/// Squared sliced Wasserstein estimate and its gradient w.r.t. set a.
struct SwdResult {
    double distance = 0.0;
    std::vector<double> grad_a;  // same layout as a.coords
};

/// count i.i.d. directions uniform on the unit sphere (normalized Gaussians).
ProjectionBank sample_projections(int dim, int count, Rng& rng);

/// Monte-Carlo sliced squared-2-Wasserstein between equal-cardinality point
/// sets: per direction, project both sets, sort ascending (ties broken by
/// original index) and pair by rank. The returned gradient covers set a only.
SwdResult swd(const Points& a, const Points& b, const ProjectionBank& bank);

/// Pixel embeddings subsampled from a latent field, with the pixel indices
/// retained so gradients can be scattered back.
struct PixelSample {
    Points points;
    std::vector<std::size_t> pixel_indices;  // row-major pixel index per point
};

/// Uniform subsample of m pixel embeddings without replacement. When eligible
/// is given, only pixels with a nonzero entry participate. m equal to the
/// eligible pixel count yields all pixels in row-major order.
PixelSample latent_field_to_points(const Tensor& latent, const Mask* eligible,
                                   std::size_t m, Rng& rng);

/// Adds per-point gradients into a W x H x F field; untouched pixels stay 0.
void scatter_point_gradients(const PixelSample& sample, const std::vector<double>& grad_points,
                             double scale, Tensor& grad_field);

}  // namespace sfs
