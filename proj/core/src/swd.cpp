#include "sfs/swd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sfs {

ProjectionBank sample_projections(int dim, int count, Rng& rng) {
    if (dim < 1 || count < 1) throw std::invalid_argument("sample_projections: dim and count must be >= 1");
    ProjectionBank bank;
    bank.dim = dim;
    bank.count = count;
    bank.dirs.resize(static_cast<std::size_t>(count) * dim);
    for (int l = 0; l < count; ++l) {
        double* d = &bank.dirs[static_cast<std::size_t>(l) * dim];
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (int f = 0; f < dim; ++f) {
                d[f] = rng.normal();
                norm2 += d[f] * d[f];
            }
        } while (norm2 < 1e-24);
        const double inv = 1.0 / std::sqrt(norm2);
        for (int f = 0; f < dim; ++f) d[f] *= inv;
    }
    return bank;
}

namespace {

// ascending by projected value, ties by original index
void argsort(const std::vector<double>& vals, std::vector<std::size_t>& order) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        if (vals[i] != vals[j]) return vals[i] < vals[j];
        return i < j;
    });
}

}  // namespace

SwdResult swd(const Points& a, const Points& b, const ProjectionBank& bank) {
    const std::size_t m = a.count();
    if (m == 0) throw std::invalid_argument("swd: empty point sets");
    if (b.count() != m) throw std::invalid_argument("swd: point sets must have equal cardinality");
    if (a.dim != b.dim || a.dim != bank.dim) throw std::invalid_argument("swd: dimension mismatch");

    const int F = a.dim;
    const int L = bank.count;

    SwdResult res;
    res.grad_a.assign(a.coords.size(), 0.0);

    std::vector<double> pa(m), pb(m);
    std::vector<std::size_t> oa(m), ob(m);
    const double pair_weight = 1.0 / (static_cast<double>(L) * static_cast<double>(m));

    double total = 0.0;
    for (int l = 0; l < L; ++l) {
        const double* theta = bank.dir(l);
        for (std::size_t i = 0; i < m; ++i) {
            const double* ap = a.p(i);
            const double* bp = b.p(i);
            double sa = 0.0, sb = 0.0;
            for (int f = 0; f < F; ++f) {
                sa += ap[f] * theta[f];
                sb += bp[f] * theta[f];
            }
            pa[i] = sa;
            pb[i] = sb;
        }
        argsort(pa, oa);
        argsort(pb, ob);
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t ia = oa[r];
            const double diff = pa[ia] - pb[ob[r]];
            total += diff * diff;
            double* g = &res.grad_a[ia * F];
            const double coeff = 2.0 * pair_weight * diff;
            for (int f = 0; f < F; ++f) g[f] += coeff * theta[f];
        }
    }
    res.distance = total * pair_weight;
    return res;
}

PixelSample latent_field_to_points(const Tensor& latent, const Mask* eligible,
                                   std::size_t m, Rng& rng) {
    const std::size_t n_pixels = latent.pixel_count();
    std::vector<std::size_t> pool;
    if (eligible) {
        if (eligible->width != latent.width || eligible->height != latent.height)
            throw std::invalid_argument("latent_field_to_points: mask shape mismatch");
        for (std::size_t p = 0; p < n_pixels; ++p)
            if (eligible->data[p] != 0) pool.push_back(p);
    } else {
        pool.resize(n_pixels);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
    }
    if (m > pool.size()) throw std::invalid_argument("latent_field_to_points: m exceeds pixel count");

    const std::vector<std::size_t> chosen = rng.sample_indices(pool.size(), m);

    PixelSample out;
    out.points.dim = latent.channels;
    out.points.coords.resize(m * latent.channels);
    out.pixel_indices.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t p = pool[chosen[i]];
        out.pixel_indices[i] = p;
        const double* src = &latent.v[p * latent.channels];
        std::copy(src, src + latent.channels, &out.points.coords[i * latent.channels]);
    }
    return out;
}

void scatter_point_gradients(const PixelSample& sample, const std::vector<double>& grad_points,
                             double scale, Tensor& grad_field) {
    const int F = sample.points.dim;
    if (grad_field.channels != F) throw std::invalid_argument("scatter_point_gradients: channel mismatch");
    if (grad_points.size() != sample.points.coords.size())
        throw std::invalid_argument("scatter_point_gradients: gradient size mismatch");
    for (std::size_t i = 0; i < sample.pixel_indices.size(); ++i) {
        double* dst = &grad_field.v[sample.pixel_indices[i] * F];
        const double* src = &grad_points[i * F];
        for (int f = 0; f < F; ++f) dst[f] += scale * src[f];
    }
}

}  // namespace sfs
