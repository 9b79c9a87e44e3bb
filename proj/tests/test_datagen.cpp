#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sfs/datagen.hpp"

using namespace sfs;

namespace {

ModalitySpec identity_modality() { return ModalitySpec{}; }

ModalitySpec shifted_modality() {
    ModalitySpec m;
    m.intensity_map = {{0.0, 1.0}, {0.4, 0.7}, {1.0, 0.0}};
    m.noise_std = 0.08;
    m.blur_radius = 1;
    m.bias_field_amplitude = 0.2;
    return m;
}

SceneSpec small_scene(std::uint64_t seed) {
    SceneSpec s;
    s.width = 32;
    s.height = 32;
    s.num_classes = 4;
    s.rng_seed = seed;
    return s;
}

}  // namespace

TEST_CASE("scene geometry is shared across modalities") {
    const SceneSpec spec = small_scene(7);
    const auto a = generate_dataset(spec, identity_modality(), 2);
    const auto b = generate_dataset(spec, shifted_modality(), 2);
    REQUIRE(a.size() == 2);
    REQUIRE(b.size() == 2);
    for (int i = 0; i < 2; ++i) CHECK(a[i].mask.data == b[i].mask.data);
    // appearance differs
    CHECK(a[0].pixels.data != b[0].pixels.data);
}

TEST_CASE("clean identity rendering hits the base intensities exactly") {
    const SceneSpec spec = small_scene(3);
    const auto imgs = generate_dataset(spec, identity_modality(), 3);
    for (const auto& img : imgs)
        for (std::size_t p = 0; p < img.pixels.data.size(); ++p)
            CHECK(img.pixels.data[p] ==
                  class_base_intensity(img.mask.data[p], spec.num_classes));
}

TEST_CASE("generation is bit-deterministic") {
    const SceneSpec spec = small_scene(7);
    const auto a = generate_dataset(spec, shifted_modality(), 4);
    const auto b = generate_dataset(spec, shifted_modality(), 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(a[i].pixels.data == b[i].pixels.data);
        CHECK(a[i].mask.data == b[i].mask.data);
    }
}

TEST_CASE("every foreground class appears in a generated set") {
    const SceneSpec spec = small_scene(19);
    const auto imgs = generate_dataset(spec, identity_modality(), 8);
    std::vector<bool> seen(spec.num_classes, false);
    for (const auto& img : imgs)
        for (auto v : img.mask.data) seen[v] = true;
    for (int k = 1; k < spec.num_classes; ++k) CHECK(seen[k]);
    for (const auto& img : imgs)
        for (auto v : img.mask.data) CHECK(v < spec.num_classes);
}

TEST_CASE("desk-scale bounds are enforced") {
    SceneSpec spec = small_scene(1);
    spec.num_classes = 17;
    CHECK_THROWS_AS(generate_dataset(spec, identity_modality(), 1), ConfigError);
    spec = small_scene(1);
    spec.width = 513;
    CHECK_THROWS_AS(generate_dataset(spec, identity_modality(), 1), ConfigError);
    spec = small_scene(1);
    spec.width = 4;
    CHECK_THROWS_AS(generate_dataset(spec, identity_modality(), 1), ConfigError);
    CHECK_THROWS_AS(generate_dataset(small_scene(1), identity_modality(), 0), ConfigError);
}

TEST_CASE("preprocess z-scores and clips") {
    SUBCASE("two-valued image maps to plus and minus one") {
        LabeledImage img;
        img.pixels = Grid<double>(2, 1);
        img.pixels.data = {0.0, 2.0};
        img.mask = Mask(2, 1, 0);
        const LabeledImage out = preprocess_image(img);
        CHECK(out.pixels.data[0] == doctest::Approx(-1.0));
        CHECK(out.pixels.data[1] == doctest::Approx(1.0));
    }

    SUBCASE("a ten-sigma outlier clips to exactly 3") {
        // symmetric construction: +-1 alternating plus a +-c pair whose
        // z-score is 10, so the post-clip mean stays exactly zero
        const int n = 1024;
        LabeledImage img;
        img.pixels = Grid<double>(32, 32);
        img.mask = Mask(32, 32, 0);
        for (int i = 0; i < n - 2; ++i) img.pixels.data[i] = (i % 2 == 0) ? 1.0 : -1.0;
        // c / sigma = 10 with sigma^2 = (n - 2 + 2 c^2) / n
        const double c = std::sqrt(100.0 * (n - 2.0) / (n - 200.0));
        img.pixels.data[n - 2] = c;
        img.pixels.data[n - 1] = -c;
        const LabeledImage out = preprocess_image(img);
        CHECK(out.pixels.data[n - 2] == 3.0);
        CHECK(out.pixels.data[n - 1] == -3.0);
        double mean = 0.0;
        for (double v : out.pixels.data) mean += v;
        CHECK(std::abs(mean / n) < 1e-12);
        for (double v : out.pixels.data) CHECK(std::abs(v) <= 3.0);
    }

    SUBCASE("recomputed moments on a random image") {
        const SceneSpec spec = small_scene(11);
        ModalitySpec m;
        m.noise_std = 0.1;  // bounded appearance spread, no 3-sigma outliers
        const auto out = preprocess(generate_dataset(spec, m, 1));
        double mean = 0.0, var = 0.0;
        for (double v : out[0].pixels.data) mean += v;
        mean /= static_cast<double>(out[0].pixels.data.size());
        for (double v : out[0].pixels.data) var += (v - mean) * (v - mean);
        var /= static_cast<double>(out[0].pixels.data.size());
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }

    SUBCASE("constant image is rejected") {
        LabeledImage img;
        img.pixels = Grid<double>(4, 4, 2.5);
        img.mask = Mask(4, 4, 0);
        CHECK_THROWS_WITH_AS(preprocess_image(img), "preprocess: zero variance", NumericalError);
        CHECK_THROWS_AS(preprocess(std::vector<LabeledImage>{}), std::invalid_argument);
    }

    SUBCASE("idempotent up to tolerance when nothing clips") {
        // bounded uniform pixels keep every z-score well inside [-3, 3]
        Rng rng(23);
        std::vector<LabeledImage> images(5);
        for (auto& img : images) {
            img.pixels = Grid<double>(16, 16);
            for (double& v : img.pixels.data) v = rng.u01();
            img.mask = Mask(16, 16, 0);
        }
        const auto once = preprocess(images);
        for (const auto& img : once)
            for (double v : img.pixels.data) REQUIRE(std::abs(v) < 3.0);  // no clipping
        const auto twice = preprocess(once);
        for (std::size_t i = 0; i < once.size(); ++i)
            for (std::size_t p = 0; p < once[i].pixels.data.size(); ++p)
                CHECK(std::abs(once[i].pixels.data[p] - twice[i].pixels.data[p]) < 1e-3);
    }
}

TEST_CASE("augment identity when nothing is drawn") {
    const SceneSpec spec = small_scene(2);
    const auto imgs = generate_dataset(spec, identity_modality(), 1);
    AugmentSpec aug;
    aug.rotation_prob = aug.negate_prob = aug.noise_prob = aug.crop_prob = 0.0;
    Rng rng(1);
    const LabeledImage out = augment(imgs[0], aug, rng);
    CHECK(out.pixels.data == imgs[0].pixels.data);
    CHECK(out.mask.data == imgs[0].mask.data);
}

TEST_CASE("negation flips pixels and keeps the mask") {
    const SceneSpec spec = small_scene(2);
    const auto imgs = preprocess(generate_dataset(spec, identity_modality(), 1));
    AugmentSpec aug;
    aug.rotation_prob = aug.noise_prob = aug.crop_prob = 0.0;
    aug.negate_prob = 1.0;
    Rng rng(1);
    const LabeledImage out = augment(imgs[0], aug, rng);
    for (std::size_t p = 0; p < out.pixels.data.size(); ++p)
        CHECK(out.pixels.data[p] == -imgs[0].pixels.data[p]);
    CHECK(out.mask.data == imgs[0].mask.data);
}

TEST_CASE("rotation preserves mask area within tolerance and matches a reference resample") {
    // a 90-pixel block in a 32x32 scene
    LabeledImage img;
    img.pixels = Grid<double>(32, 32, 0.1);
    img.mask = Mask(32, 32, 0);
    for (int y = 11; y < 20; ++y)
        for (int x = 11; x < 21; ++x) {
            img.mask(x, y) = 1;
            img.pixels(x, y) = 0.9;
        }
    int area_before = 0;
    for (auto v : img.mask.data) area_before += v == 1;
    REQUIRE(area_before == 90);

    AugmentSpec aug;
    aug.rotation_prob = 1.0;
    aug.negate_prob = aug.noise_prob = aug.crop_prob = 0.0;

    // find a seed whose drawn angle is close to the 20-degree cap by
    // replaying the generator's draw order (gate, then angle)
    std::uint64_t seed = 0;
    double angle_deg = 0.0;
    for (std::uint64_t s = 0; s < 10000; ++s) {
        Rng probe(s);
        probe.u01();
        const double a = probe.uniform(-20.0, 20.0);
        if (std::abs(a) > 19.5) {
            seed = s;
            angle_deg = a;
            break;
        }
    }
    REQUIRE(std::abs(angle_deg) > 19.5);

    Rng rng(seed);
    const LabeledImage out = augment(img, aug, rng);
    int area_after = 0;
    for (auto v : out.mask.data) area_after += v == 1;
    CHECK(area_after >= static_cast<int>(90 * 0.85));
    CHECK(area_after <= static_cast<int>(90 * 1.15));

    // the mask must follow the same geometric operator: compare against an
    // independently coded nearest-neighbor rotation at the known angle
    const double rad = -angle_deg * 3.14159265358979323846 / 180.0;
    const double cx = 15.5, cy = 15.5;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double sx = cx + std::cos(rad) * dx - std::sin(rad) * dy;
            const double sy = cy + std::sin(rad) * dx + std::cos(rad) * dy;
            const int xi = std::clamp(static_cast<int>(std::lround(sx)), 0, 31);
            const int yi = std::clamp(static_cast<int>(std::lround(sy)), 0, 31);
            CHECK(out.mask(x, y) == img.mask(xi, yi));
        }
}

TEST_CASE("intensity map evaluation") {
    const std::vector<std::pair<double, double>> inverting = {{0.0, 1.0}, {0.5, 0.4}, {1.0, 0.0}};
    CHECK(apply_intensity_map(inverting, 0.0) == doctest::Approx(1.0));
    CHECK(apply_intensity_map(inverting, 0.25) == doctest::Approx(0.7));
    CHECK(apply_intensity_map(inverting, 0.75) == doctest::Approx(0.2));
    CHECK(apply_intensity_map(inverting, 2.0) == doctest::Approx(0.0));  // clamped
    CHECK_THROWS_AS(apply_intensity_map({{0.0, 0.0}}, 0.5), ConfigError);
}
