#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfs {

/// Bad or inconsistent configuration (maps to CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical breakdown at runtime: NaN losses, starved classes, non-finite
/// likelihoods (maps to CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Derives an independent stream seed from a base seed and a role tag.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag);

/// Deterministic random stream. All sampling in the toolkit goes through
/// this class so that a (seed, call sequence) pair fully determines every
/// result; the transforms are spelled out here instead of relying on
/// std::*_distribution, whose algorithms are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1); safe as a log() argument.
    double open01() { return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

    /// Standard normal via Box-Muller (no cached second value).
    double normal() {
        const double r = std::sqrt(-2.0 * std::log(open01()));
        return r * std::cos(2.0 * 3.14159265358979323846 * u01());
    }

    /// Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) { return gen_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// m distinct indices from [0, n), returned in ascending order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m);

private:
    std::mt19937_64 gen_;
};

/// Row-major W x H grid.
template <typename T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int w, int h, T fill = T{})
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    T& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return width == o.width && height == o.height; }
};

using Mask = Grid<std::uint8_t>;

/// Single-channel image plus its segmentation mask.
struct LabeledImage {
    Grid<double> pixels;
    Mask mask;
};

/// W x H x C tensor, pixel-major: channel values of one pixel are contiguous.
struct Tensor {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int w, int h, int c)
        : width(w), height(h), channels(c),
          v(static_cast<std::size_t>(w) * h * c, 0.0) {}

    double& at(int x, int y, int c) {
        return v[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c) const {
        return v[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    /// Pointer to the channel vector of pixel (x, y).
    double* pixel(int x, int y) { return &v[(static_cast<std::size_t>(y) * width + x) * channels]; }
    const double* pixel(int x, int y) const {
        return &v[(static_cast<std::size_t>(y) * width + x) * channels];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

}  // namespace sfs
