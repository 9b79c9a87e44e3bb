#include "sfs/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sfs {

namespace {

constexpr std::uint64_t kGeometryTag = 0x67656f6dULL;    // "geom"
constexpr std::uint64_t kAppearanceTag = 0x61707065ULL;  // "appe"
constexpr double kPi = 3.14159265358979323846;

void validate(const SceneSpec& spec, int count) {
    if (spec.width < 8 || spec.height < 8) throw ConfigError("scene: width/height must be >= 8");
    if (spec.width > 512 || spec.height > 512)
        throw ConfigError("scene: width/height must be <= 512");
    if (spec.num_classes < 2) throw ConfigError("scene: num_classes must be >= 2");
    if (spec.num_classes > 16) throw ConfigError("scene: num_classes must be <= 16");
    if (spec.shapes_min < 1 || spec.shapes_max < spec.shapes_min)
        throw ConfigError("scene: invalid shapes_per_image range");
    if (count < 1) throw ConfigError("scene: count must be >= 1");
}

void paint_disk(Mask& m, double cx, double cy, double r, std::uint8_t cls) {
    const double r2 = r * r;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= r2) m(x, y) = cls;
        }
}

void paint_rect(Mask& m, int x0, int y0, int x1, int y1, std::uint8_t cls) {
    for (int y = std::max(0, y0); y <= std::min(m.height - 1, y1); ++y)
        for (int x = std::max(0, x0); x <= std::min(m.width - 1, x1); ++x) m(x, y) = cls;
}

// foreground class ids cycle through a running counter, guaranteeing
// coverage once enough shapes have been painted
std::uint8_t next_class(std::uint64_t& counter, int num_classes) {
    const std::uint8_t c = static_cast<std::uint8_t>(1 + counter % (num_classes - 1));
    ++counter;
    return c;
}

Mask generate_mask(const SceneSpec& spec, int image_index, std::uint64_t& class_counter) {
    Rng rng(mix_seed(mix_seed(spec.rng_seed, kGeometryTag), static_cast<std::uint64_t>(image_index)));
    Mask mask(spec.width, spec.height, 0);
    const double smin = std::min(spec.width, spec.height);
    const int n_shapes =
        spec.shapes_min + static_cast<int>(rng.uniform_int(spec.shapes_max - spec.shapes_min + 1));
    for (int s = 0; s < n_shapes; ++s) {
        const int kind = static_cast<int>(rng.uniform_int(3));
        if (kind == 0) {  // disk
            const double r = rng.uniform(3.0, smin / 4.0);
            const double cx = rng.uniform(r, spec.width - 1 - r);
            const double cy = rng.uniform(r, spec.height - 1 - r);
            paint_disk(mask, cx, cy, r, next_class(class_counter, spec.num_classes));
        } else if (kind == 1) {  // rectangle
            const double hw = rng.uniform(2.0, smin / 4.0);
            const double hh = rng.uniform(2.0, smin / 4.0);
            const double cx = rng.uniform(hw, spec.width - 1 - hw);
            const double cy = rng.uniform(hh, spec.height - 1 - hh);
            paint_rect(mask, static_cast<int>(std::lround(cx - hw)),
                       static_cast<int>(std::lround(cy - hh)), static_cast<int>(std::lround(cx + hw)),
                       static_cast<int>(std::lround(cy + hh)),
                       next_class(class_counter, spec.num_classes));
        } else {  // annulus: ring of one class around a core of another
            const double ro = rng.uniform(5.0, smin / 3.0);
            const double ri = ro * rng.uniform(0.40, 0.65);
            const double cx = rng.uniform(ro, spec.width - 1 - ro);
            const double cy = rng.uniform(ro, spec.height - 1 - ro);
            const std::uint8_t ring = next_class(class_counter, spec.num_classes);
            const std::uint8_t core = next_class(class_counter, spec.num_classes);
            paint_disk(mask, cx, cy, ro, ring);
            paint_disk(mask, cx, cy, ri, core);
        }
    }
    return mask;
}

// smooth low-frequency field in [-1, 1]-ish units, scaled by amplitude
Grid<double> bias_field(int w, int h, double amplitude, Rng& rng) {
    Grid<double> field(w, h, 0.0);
    const double a = rng.uniform(-1.0, 1.0);
    const double b = rng.uniform(-1.0, 1.0);
    const double c = rng.uniform(-1.0, 1.0);
    const double fx = rng.uniform(0.5, 1.5);
    const double fy = rng.uniform(0.5, 1.5);
    const double phase = rng.uniform(0.0, 2.0 * kPi);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / (w - 1) - 0.5;
            const double v = static_cast<double>(y) / (h - 1) - 0.5;
            field(x, y) = amplitude * (a * u + b * v + c * std::sin(2.0 * kPi * (fx * u + fy * v) + phase));
        }
    return field;
}

Grid<double> box_blur(const Grid<double>& in, int radius) {
    if (radius <= 0) return in;
    Grid<double> tmp(in.width, in.height), out(in.width, in.height);
    const int r = radius;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            double s = 0.0;
            int n = 0;
            for (int dx = -r; dx <= r; ++dx) {
                const int xx = std::clamp(x + dx, 0, in.width - 1);
                s += in(xx, y);
                ++n;
            }
            tmp(x, y) = s / n;
        }
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            double s = 0.0;
            int n = 0;
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = std::clamp(y + dy, 0, in.height - 1);
                s += tmp(x, yy);
                ++n;
            }
            out(x, y) = s / n;
        }
    return out;
}

}  // namespace

double class_base_intensity(int k, int num_classes) {
    return (2.0 * k + 1.0) / (2.0 * num_classes);
}

double apply_intensity_map(const std::vector<std::pair<double, double>>& map, double v) {
    if (map.size() < 2) throw ConfigError("intensity_map needs at least two control points");
    if (v <= map.front().first) return map.front().second;
    if (v >= map.back().first) return map.back().second;
    for (std::size_t i = 1; i < map.size(); ++i) {
        if (v <= map[i].first) {
            const auto& [x0, y0] = map[i - 1];
            const auto& [x1, y1] = map[i];
            if (x1 <= x0) throw ConfigError("intensity_map control points must be x-increasing");
            const double t = (v - x0) / (x1 - x0);
            return y0 + t * (y1 - y0);
        }
    }
    return map.back().second;
}

std::vector<LabeledImage> generate_dataset(const SceneSpec& spec, const ModalitySpec& modality,
                                           int count) {
    validate(spec, count);
    if (modality.noise_std < 0.0 || modality.blur_radius < 0 || modality.bias_field_amplitude < 0.0)
        throw ConfigError("modality: noise/blur/bias must be nonnegative");

    std::vector<LabeledImage> out;
    out.reserve(count);
    std::uint64_t class_counter = 0;
    std::vector<bool> seen(spec.num_classes, false);
    seen[0] = true;

    for (int i = 0; i < count; ++i) {
        LabeledImage img;
        img.mask = generate_mask(spec, i, class_counter);
        for (std::uint8_t v : img.mask.data) seen[v] = true;

        img.pixels = Grid<double>(spec.width, spec.height);
        for (std::size_t p = 0; p < img.mask.data.size(); ++p)
            img.pixels.data[p] = apply_intensity_map(
                modality.intensity_map, class_base_intensity(img.mask.data[p], spec.num_classes));

        img.pixels = box_blur(img.pixels, modality.blur_radius);

        Rng appearance(
            mix_seed(mix_seed(spec.rng_seed, kAppearanceTag), static_cast<std::uint64_t>(i)));
        if (modality.bias_field_amplitude > 0.0) {
            const Grid<double> field =
                bias_field(spec.width, spec.height, modality.bias_field_amplitude, appearance);
            for (std::size_t p = 0; p < img.pixels.data.size(); ++p)
                img.pixels.data[p] += field.data[p];
        }
        if (modality.noise_std > 0.0)
            for (double& v : img.pixels.data) v += modality.noise_std * appearance.normal();

        out.push_back(std::move(img));
    }

    for (int k = 1; k < spec.num_classes; ++k)
        if (!seen[k])
            throw ConfigError("generated set misses class " + std::to_string(k) +
                              "; increase count or shapes_per_image");
    return out;
}

LabeledImage preprocess_image(const LabeledImage& image) {
    const std::size_t n = image.pixels.data.size();
    if (n == 0) throw std::invalid_argument("preprocess: empty image");
    double mean = 0.0;
    for (double v : image.pixels.data) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : image.pixels.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (var < 1e-18) throw NumericalError("preprocess: zero variance");
    const double inv_std = 1.0 / std::sqrt(var);

    LabeledImage out;
    out.mask = image.mask;
    out.pixels = Grid<double>(image.pixels.width, image.pixels.height);
    for (std::size_t p = 0; p < n; ++p)
        out.pixels.data[p] = std::clamp((image.pixels.data[p] - mean) * inv_std, -3.0, 3.0);
    return out;
}

std::vector<LabeledImage> preprocess(const std::vector<LabeledImage>& images) {
    if (images.empty()) throw std::invalid_argument("preprocess: empty input");
    std::vector<LabeledImage> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(preprocess_image(img));
    return out;
}

namespace {

double bilinear_clamped(const Grid<double>& g, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(g.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(g.height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, g.width - 1);
    const int y1 = std::min(y0 + 1, g.height - 1);
    const double fx = x - x0, fy = y - y0;
    const double top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
    const double bot = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

std::uint8_t nearest_clamped(const Mask& m, double x, double y) {
    const int xi = std::clamp(static_cast<int>(std::lround(x)), 0, m.width - 1);
    const int yi = std::clamp(static_cast<int>(std::lround(y)), 0, m.height - 1);
    return m(xi, yi);
}

}  // namespace

LabeledImage augment(const LabeledImage& image, const AugmentSpec& spec, Rng& rng) {
    const int W = image.pixels.width, H = image.pixels.height;
    const double max_deg = std::clamp(spec.rotation_max_deg, 0.0, 20.0);
    const double min_area = std::clamp(spec.crop_min_area, 0.5, 1.0);

    double angle = 0.0;
    if (rng.u01() < spec.rotation_prob) angle = rng.uniform(-max_deg, max_deg) * kPi / 180.0;

    bool crop = false;
    double scale = 1.0, ox = 0.0, oy = 0.0;
    if (rng.u01() < spec.crop_prob) {
        crop = true;
        scale = std::sqrt(rng.uniform(min_area, 1.0));
        ox = rng.uniform(0.0, (W - 1) * (1.0 - scale));
        oy = rng.uniform(0.0, (H - 1) * (1.0 - scale));
    }

    const bool negate = rng.u01() < spec.negate_prob;
    const bool add_noise = rng.u01() < spec.noise_prob && spec.noise_std > 0.0;

    LabeledImage out;
    out.pixels = Grid<double>(W, H);
    out.mask = Mask(W, H);

    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    const double ca = std::cos(-angle), sa = std::sin(-angle);
    const bool geom = angle != 0.0 || crop;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double sx = x, sy = y;
            if (geom) {
                if (crop) {
                    sx = ox + x * scale;
                    sy = oy + y * scale;
                }
                const double dx = sx - cx, dy = sy - cy;
                sx = cx + ca * dx - sa * dy;
                sy = cy + sa * dx + ca * dy;
            }
            out.pixels(x, y) = geom ? bilinear_clamped(image.pixels, sx, sy) : image.pixels(x, y);
            out.mask(x, y) = geom ? nearest_clamped(image.mask, sx, sy) : image.mask(x, y);
        }
    }

    if (negate)
        for (double& v : out.pixels.data) v = -v;
    if (add_noise)
        for (double& v : out.pixels.data) v += spec.noise_std * rng.normal();
    return out;
}

}  // namespace sfs
