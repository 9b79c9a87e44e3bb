#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfs/common.hpp"
#include "sfs/swd.hpp"

namespace sfs {

/// Fixed-topology segmentation network. A two-layer 3x3 convolutional
/// encoder (ReLU, circular padding) feeds a single 3x3 convolutional
/// decoder producing a per-pixel latent of dimension latent_dim, followed
/// by a per-pixel affine classifier with softmax over num_classes.
/// Convolutions keep full resolution; padding is circular so the whole map
/// is translation-equivariant under wraparound shifts.
struct SegNetwork {
    int encoder_channels = 16;
    int latent_dim = 8;
    int num_classes = 4;

    // conv weights: [out][in][ky][kx], kernels 3x3
    std::vector<double> conv1_w, conv1_b;  // 1 -> enc
    std::vector<double> conv2_w, conv2_b;  // enc -> enc
    std::vector<double> conv3_w, conv3_b;  // enc -> latent (decoder)
    std::vector<double> cls_w, cls_b;      // latent -> classes, row-major K x F

    static SegNetwork init(int encoder_channels, int latent_dim, int num_classes,
                           std::uint64_t seed);

    std::size_t param_count() const;
};

/// One parameter array of a network or gradient set.
struct ParamRef {
    const char* name;
    std::vector<double>* data;
};
std::vector<ParamRef> param_refs(SegNetwork& net);

/// Gradients, one array per parameter array.
struct GradientSet {
    std::vector<double> conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, cls_w, cls_b;

    static GradientSet zeros_like(const SegNetwork& net);
    void add_scaled(const GradientSet& other, double scale);
};
std::vector<ParamRef> param_refs(GradientSet& g);

/// Activations kept from a forward pass for the corresponding backward pass.
struct ForwardPass {
    Tensor input;            // W x H x 1
    Tensor pre1, a1;         // encoder layer 1
    Tensor pre2, a2;         // encoder layer 2
    Tensor pre3;             // decoder pre-activation
    Tensor latent;           // W x H x F (post ReLU)
    Tensor probs;            // W x H x K
};

/// Full forward pass; probs are softmax-normalized per pixel.
ForwardPass forward(const SegNetwork& net, const Grid<double>& image);

/// Mean over pixels of -w[y] log p[y], log argument clamped at 1e-12.
/// class_weights, when given, must have one entry per class.
double ce_loss(const Tensor& probs, const Mask& mask,
               const std::vector<double>* class_weights = nullptr);

/// What to differentiate: a pixel-wise cross-entropy term (enabled by
/// ce_mask) and/or an external gradient injected at the latent field.
struct LossGradientSpec {
    const Mask* ce_mask = nullptr;
    const std::vector<double>* class_weights = nullptr;
    double ce_scale = 1.0;
    const Tensor* latent_gradient = nullptr;
};

/// Exact reverse-mode gradients of the composite loss described by spec,
/// using the activations cached in fp.
GradientSet backward(const SegNetwork& net, const ForwardPass& fp, const LossGradientSpec& spec);

/// Classifier probabilities for free-standing latent points (n x K, row-major).
std::vector<double> classifier_forward(const SegNetwork& net, const Points& z);

/// Mean cross-entropy of the classifier on latent samples; accumulates
/// scale * d(loss)/d(cls params) into grads. Only the classifier arrays of
/// grads are touched, matching the graph: sampled latents bypass the convs.
double classifier_ce_and_grad(const SegNetwork& net, const Points& z,
                              const std::vector<std::uint8_t>& labels,
                              const std::vector<double>* class_weights, double scale,
                              GradientSet& grads);

/// Adam hyperparameters; decay follows the lr/(1 + decay * step) schedule.
struct AdamParams {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr_decay = 0.0;
};

struct AdamState {
    AdamParams hp;
    long long step = 0;
    GradientSet m, v;

    static AdamState init(const SegNetwork& net, const AdamParams& hp);
};

/// One Adam update in place. Throws NumericalError on non-finite gradients.
void adam_step(SegNetwork& net, const GradientSet& grads, AdamState& state);

}  // namespace sfs
