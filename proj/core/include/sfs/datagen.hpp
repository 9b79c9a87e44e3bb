#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sfs/common.hpp"

namespace sfs {

/// Geometry of a synthetic scene set. Class 0 is background; foreground
/// classes are painted as disks, axis-aligned rectangles and annuli (an
/// annulus nests one class inside another). Classes are assigned from a
/// running counter so that every foreground class appears in a large
/// enough set.
struct SceneSpec {
    int width = 32;
    int height = 32;
    int num_classes = 4;
    int shapes_min = 2;
    int shapes_max = 4;
    std::uint64_t rng_seed = 0;
};

/// Appearance of one modality. The intensity map is piecewise linear over
/// the per-class base intensities in [0, 1]; it may be monotone increasing
/// or order-inverting. An identity map with zero noise, blur and bias
/// reproduces the base rendering exactly.
struct ModalitySpec {
    std::vector<std::pair<double, double>> intensity_map = {{0.0, 0.0}, {1.0, 1.0}};
    double noise_std = 0.0;
    int blur_radius = 0;
    double bias_field_amplitude = 0.0;
};

/// Base intensity of class k when drawing with K classes: evenly spaced
/// in (0, 1) so the source modality is separable by intensity alone.
double class_base_intensity(int k, int num_classes);

/// Evaluates the piecewise-linear intensity map at v (clamped to the
/// control-point range).
double apply_intensity_map(const std::vector<std::pair<double, double>>& map, double v);

/// count scenes under the given modality. Scene geometry depends only on
/// (rng_seed, image index), never on the modality, so datasets generated
/// from the same seed share masks exactly and differ in appearance only.
std::vector<LabeledImage> generate_dataset(const SceneSpec& spec, const ModalitySpec& modality,
                                           int count);

/// Per-image z-scoring (mean 0, variance 1 from the pre-clip moments)
/// followed by clipping to [-3, 3]. A constant image is an error.
std::vector<LabeledImage> preprocess(const std::vector<LabeledImage>& images);
LabeledImage preprocess_image(const LabeledImage& image);

/// Augmentation parameters; values outside their valid ranges are clamped.
struct AugmentSpec {
    double rotation_prob = 0.5;
    double rotation_max_deg = 20.0;
    double negate_prob = 0.5;
    double noise_prob = 0.5;
    double noise_std = 0.05;
    double crop_prob = 0.5;
    double crop_min_area = 0.75;
};

/// Random rotation / crop-and-rescale / negation / additive noise. The mask
/// follows the same geometric operator as the pixels (nearest neighbor);
/// pixel-only augmentations leave it untouched.
LabeledImage augment(const LabeledImage& image, const AugmentSpec& spec, Rng& rng);

}  // namespace sfs
