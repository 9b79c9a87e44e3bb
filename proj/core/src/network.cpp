#include "sfs/network.hpp"

#include <algorithm>
#include <cmath>

namespace sfs {

namespace {

constexpr double kLogClamp = 1e-12;

// Repacks conv weights [co][ci][tap] -> [tap][ci][co] so that inner loops
// over output channels touch contiguous memory.
std::vector<double> repack_tap_ci_co(const std::vector<double>& w, int cout, int cin) {
    std::vector<double> t(w.size());
    for (int co = 0; co < cout; ++co)
        for (int ci = 0; ci < cin; ++ci)
            for (int tap = 0; tap < 9; ++tap)
                t[(static_cast<std::size_t>(tap) * cin + ci) * cout + co] =
                    w[(static_cast<std::size_t>(co) * cin + ci) * 9 + tap];
    return t;
}

void conv3x3_circular(const Tensor& in, const std::vector<double>& w,
                      const std::vector<double>& b, Tensor& out) {
    const int W = in.width, H = in.height, Cin = in.channels, Cout = out.channels;
    const std::vector<double> wt = repack_tap_ci_co(w, Cout, Cin);
    for (int y = 0; y < H; ++y) {
        const int ys[3] = {(y - 1 + H) % H, y, (y + 1) % H};
        for (int x = 0; x < W; ++x) {
            const int xs[3] = {(x - 1 + W) % W, x, (x + 1) % W};
            double* acc = out.pixel(x, y);
            std::copy(b.begin(), b.end(), acc);
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double* ip = in.pixel(xs[kx], ys[ky]);
                    const double* wtap = &wt[static_cast<std::size_t>(ky * 3 + kx) * Cin * Cout];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = ip[ci];
                        const double* wr = wtap + static_cast<std::size_t>(ci) * Cout;
                        for (int co = 0; co < Cout; ++co) acc[co] += v * wr[co];
                    }
                }
            }
        }
    }
}

// Accumulates d_w/d_b and (optionally) the gradient w.r.t. the input.
void conv3x3_circular_backward(const Tensor& in, const std::vector<double>& w,
                               const Tensor& d_out, std::vector<double>& d_w,
                               std::vector<double>& d_b, Tensor* d_in) {
    const int W = in.width, H = in.height, Cin = in.channels, Cout = d_out.channels;
    std::vector<double> dwt(static_cast<std::size_t>(9) * Cin * Cout, 0.0);
    std::vector<double> wt;
    if (d_in) wt = repack_tap_ci_co(w, Cout, Cin);

    for (int y = 0; y < H; ++y) {
        const int ys[3] = {(y - 1 + H) % H, y, (y + 1) % H};
        for (int x = 0; x < W; ++x) {
            const int xs[3] = {(x - 1 + W) % W, x, (x + 1) % W};
            const double* dout = d_out.pixel(x, y);
            for (int co = 0; co < Cout; ++co) d_b[co] += dout[co];
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const std::size_t tap = static_cast<std::size_t>(ky * 3 + kx);
                    const double* ip = in.pixel(xs[kx], ys[ky]);
                    double* dwtap = &dwt[tap * Cin * Cout];
                    for (int ci = 0; ci < Cin; ++ci) {
                        const double v = ip[ci];
                        double* dwr = dwtap + static_cast<std::size_t>(ci) * Cout;
                        for (int co = 0; co < Cout; ++co) dwr[co] += v * dout[co];
                    }
                    if (d_in) {
                        double* dip = d_in->pixel(xs[kx], ys[ky]);
                        const double* wtap = &wt[tap * Cin * Cout];
                        for (int ci = 0; ci < Cin; ++ci) {
                            const double* wr = wtap + static_cast<std::size_t>(ci) * Cout;
                            double s = 0.0;
                            for (int co = 0; co < Cout; ++co) s += wr[co] * dout[co];
                            dip[ci] += s;
                        }
                    }
                }
            }
        }
    }
    for (int co = 0; co < Cout; ++co)
        for (int ci = 0; ci < Cin; ++ci)
            for (int tap = 0; tap < 9; ++tap)
                d_w[(static_cast<std::size_t>(co) * Cin + ci) * 9 + tap] +=
                    dwt[(static_cast<std::size_t>(tap) * Cin + ci) * Cout + co];
}

Tensor relu(const Tensor& t) {
    Tensor out = t;
    for (double& v : out.v) v = v > 0.0 ? v : 0.0;
    return out;
}

void relu_backward_inplace(const Tensor& pre, Tensor& d) {
    for (std::size_t i = 0; i < d.v.size(); ++i)
        if (pre.v[i] <= 0.0) d.v[i] = 0.0;
}

void softmax_row(const double* logits, double* probs, int k) {
    double mx = logits[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < k; ++i) probs[i] *= inv;
}

}  // namespace

SegNetwork SegNetwork::init(int encoder_channels, int latent_dim, int num_classes,
                            std::uint64_t seed) {
    if (encoder_channels < 1 || latent_dim < 1 || num_classes < 2)
        throw ConfigError("SegNetwork: invalid dimensions");
    SegNetwork net;
    net.encoder_channels = encoder_channels;
    net.latent_dim = latent_dim;
    net.num_classes = num_classes;

    Rng rng(seed);
    auto he_fill = [&](std::vector<double>& w, std::size_t n, int fan_in) {
        w.resize(n);
        const double std = std::sqrt(2.0 / fan_in);
        for (double& v : w) v = std * rng.normal();
    };
    const int E = encoder_channels, F = latent_dim, K = num_classes;
    he_fill(net.conv1_w, static_cast<std::size_t>(E) * 1 * 9, 9);
    net.conv1_b.assign(E, 0.0);
    he_fill(net.conv2_w, static_cast<std::size_t>(E) * E * 9, E * 9);
    net.conv2_b.assign(E, 0.0);
    he_fill(net.conv3_w, static_cast<std::size_t>(F) * E * 9, E * 9);
    net.conv3_b.assign(F, 0.0);
    he_fill(net.cls_w, static_cast<std::size_t>(K) * F, F);
    net.cls_b.assign(K, 0.0);
    return net;
}

std::size_t SegNetwork::param_count() const {
    return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size() +
           conv3_w.size() + conv3_b.size() + cls_w.size() + cls_b.size();
}

std::vector<ParamRef> param_refs(SegNetwork& net) {
    return {{"conv1_w", &net.conv1_w}, {"conv1_b", &net.conv1_b},
            {"conv2_w", &net.conv2_w}, {"conv2_b", &net.conv2_b},
            {"conv3_w", &net.conv3_w}, {"conv3_b", &net.conv3_b},
            {"cls_w", &net.cls_w},     {"cls_b", &net.cls_b}};
}

std::vector<ParamRef> param_refs(GradientSet& g) {
    return {{"conv1_w", &g.conv1_w}, {"conv1_b", &g.conv1_b},
            {"conv2_w", &g.conv2_w}, {"conv2_b", &g.conv2_b},
            {"conv3_w", &g.conv3_w}, {"conv3_b", &g.conv3_b},
            {"cls_w", &g.cls_w},     {"cls_b", &g.cls_b}};
}

GradientSet GradientSet::zeros_like(const SegNetwork& net) {
    GradientSet g;
    g.conv1_w.assign(net.conv1_w.size(), 0.0);
    g.conv1_b.assign(net.conv1_b.size(), 0.0);
    g.conv2_w.assign(net.conv2_w.size(), 0.0);
    g.conv2_b.assign(net.conv2_b.size(), 0.0);
    g.conv3_w.assign(net.conv3_w.size(), 0.0);
    g.conv3_b.assign(net.conv3_b.size(), 0.0);
    g.cls_w.assign(net.cls_w.size(), 0.0);
    g.cls_b.assign(net.cls_b.size(), 0.0);
    return g;
}

void GradientSet::add_scaled(const GradientSet& other, double scale) {
    auto self = param_refs(*this);
    auto o = param_refs(const_cast<GradientSet&>(other));
    for (std::size_t p = 0; p < self.size(); ++p) {
        if (self[p].data->size() != o[p].data->size())
            throw std::invalid_argument("GradientSet::add_scaled: shape mismatch");
        for (std::size_t i = 0; i < self[p].data->size(); ++i)
            (*self[p].data)[i] += scale * (*o[p].data)[i];
    }
}

ForwardPass forward(const SegNetwork& net, const Grid<double>& image) {
    if (image.width < 1 || image.height < 1)
        throw std::invalid_argument("forward: empty image");
    const int W = image.width, H = image.height;
    const int E = net.encoder_channels, F = net.latent_dim, K = net.num_classes;

    ForwardPass fp;
    fp.input = Tensor(W, H, 1);
    std::copy(image.data.begin(), image.data.end(), fp.input.v.begin());

    fp.pre1 = Tensor(W, H, E);
    conv3x3_circular(fp.input, net.conv1_w, net.conv1_b, fp.pre1);
    fp.a1 = relu(fp.pre1);

    fp.pre2 = Tensor(W, H, E);
    conv3x3_circular(fp.a1, net.conv2_w, net.conv2_b, fp.pre2);
    fp.a2 = relu(fp.pre2);

    fp.pre3 = Tensor(W, H, F);
    conv3x3_circular(fp.a2, net.conv3_w, net.conv3_b, fp.pre3);
    fp.latent = relu(fp.pre3);

    fp.probs = Tensor(W, H, K);
    std::vector<double> logits(K);
    for (std::size_t p = 0; p < fp.latent.pixel_count(); ++p) {
        const double* z = &fp.latent.v[p * F];
        for (int k = 0; k < K; ++k) {
            double s = net.cls_b[k];
            const double* wr = &net.cls_w[static_cast<std::size_t>(k) * F];
            for (int f = 0; f < F; ++f) s += wr[f] * z[f];
            logits[k] = s;
        }
        softmax_row(logits.data(), &fp.probs.v[p * K], K);
    }
    return fp;
}

double ce_loss(const Tensor& probs, const Mask& mask, const std::vector<double>* class_weights) {
    if (probs.width != mask.width || probs.height != mask.height)
        throw std::invalid_argument("ce_loss: shape mismatch");
    const int K = probs.channels;
    if (class_weights && static_cast<int>(class_weights->size()) != K)
        throw std::invalid_argument("ce_loss: class_weights size mismatch");
    double total = 0.0;
    const std::size_t n = probs.pixel_count();
    for (std::size_t p = 0; p < n; ++p) {
        const int y = mask.data[p];
        if (y >= K) throw std::invalid_argument("ce_loss: mask label >= num_classes");
        const double w = class_weights ? (*class_weights)[y] : 1.0;
        total -= w * std::log(std::max(probs.v[p * K + y], kLogClamp));
    }
    return total / static_cast<double>(n);
}

GradientSet backward(const SegNetwork& net, const ForwardPass& fp, const LossGradientSpec& spec) {
    const int W = fp.input.width, H = fp.input.height;
    const int E = net.encoder_channels, F = net.latent_dim, K = net.num_classes;
    GradientSet g = GradientSet::zeros_like(net);

    Tensor d_latent(W, H, F);
    if (spec.latent_gradient) {
        if (spec.latent_gradient->v.size() != d_latent.v.size())
            throw std::invalid_argument("backward: latent gradient shape mismatch");
        d_latent.v = spec.latent_gradient->v;
    }

    if (spec.ce_mask) {
        const Mask& mask = *spec.ce_mask;
        if (mask.width != W || mask.height != H)
            throw std::invalid_argument("backward: ce mask shape mismatch");
        const double inv_n = 1.0 / static_cast<double>(fp.probs.pixel_count());
        std::vector<double> d_logits(K);
        for (std::size_t p = 0; p < fp.probs.pixel_count(); ++p) {
            const int y = mask.data[p];
            if (y >= K) throw std::invalid_argument("backward: mask label >= num_classes");
            const double w =
                (spec.class_weights ? (*spec.class_weights)[y] : 1.0) * inv_n * spec.ce_scale;
            const double* pr = &fp.probs.v[p * K];
            for (int k = 0; k < K; ++k) d_logits[k] = w * (pr[k] - (k == y ? 1.0 : 0.0));
            // classifier grads and latent grads from this pixel
            const double* z = &fp.latent.v[p * F];
            double* dz = &d_latent.v[p * F];
            for (int k = 0; k < K; ++k) {
                const double dk = d_logits[k];
                g.cls_b[k] += dk;
                double* dwr = &g.cls_w[static_cast<std::size_t>(k) * F];
                const double* wr = &net.cls_w[static_cast<std::size_t>(k) * F];
                for (int f = 0; f < F; ++f) {
                    dwr[f] += dk * z[f];
                    dz[f] += dk * wr[f];
                }
            }
        }
    }

    Tensor d_pre3 = d_latent;
    relu_backward_inplace(fp.pre3, d_pre3);

    Tensor d_a2(W, H, E);
    conv3x3_circular_backward(fp.a2, net.conv3_w, d_pre3, g.conv3_w, g.conv3_b, &d_a2);
    relu_backward_inplace(fp.pre2, d_a2);  // d_a2 becomes d_pre2

    Tensor d_a1(W, H, E);
    conv3x3_circular_backward(fp.a1, net.conv2_w, d_a2, g.conv2_w, g.conv2_b, &d_a1);
    relu_backward_inplace(fp.pre1, d_a1);  // d_a1 becomes d_pre1

    conv3x3_circular_backward(fp.input, net.conv1_w, d_a1, g.conv1_w, g.conv1_b, nullptr);
    return g;
}

std::vector<double> classifier_forward(const SegNetwork& net, const Points& z) {
    if (z.dim != net.latent_dim) throw std::invalid_argument("classifier_forward: dim mismatch");
    const int F = net.latent_dim, K = net.num_classes;
    const std::size_t n = z.count();
    std::vector<double> probs(n * K);
    std::vector<double> logits(K);
    for (std::size_t i = 0; i < n; ++i) {
        const double* zi = z.p(i);
        for (int k = 0; k < K; ++k) {
            double s = net.cls_b[k];
            const double* wr = &net.cls_w[static_cast<std::size_t>(k) * F];
            for (int f = 0; f < F; ++f) s += wr[f] * zi[f];
            logits[k] = s;
        }
        softmax_row(logits.data(), &probs[i * K], K);
    }
    return probs;
}

double classifier_ce_and_grad(const SegNetwork& net, const Points& z,
                              const std::vector<std::uint8_t>& labels,
                              const std::vector<double>* class_weights, double scale,
                              GradientSet& grads) {
    const std::size_t n = z.count();
    if (labels.size() != n) throw std::invalid_argument("classifier_ce: label count mismatch");
    if (n == 0) throw std::invalid_argument("classifier_ce: empty sample");
    const int F = net.latent_dim, K = net.num_classes;
    const std::vector<double> probs = classifier_forward(net, z);

    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y >= K) throw std::invalid_argument("classifier_ce: label >= num_classes");
        const double w = class_weights ? (*class_weights)[y] : 1.0;
        loss -= w * std::log(std::max(probs[i * K + y], kLogClamp));
        const double* zi = z.p(i);
        for (int k = 0; k < K; ++k) {
            const double dk = scale * w * inv_n * (probs[i * K + k] - (k == y ? 1.0 : 0.0));
            grads.cls_b[k] += dk;
            double* dwr = &grads.cls_w[static_cast<std::size_t>(k) * F];
            for (int f = 0; f < F; ++f) dwr[f] += dk * zi[f];
        }
    }
    return loss * inv_n;
}

AdamState AdamState::init(const SegNetwork& net, const AdamParams& hp) {
    AdamState s;
    s.hp = hp;
    s.m = GradientSet::zeros_like(net);
    s.v = GradientSet::zeros_like(net);
    return s;
}

void adam_step(SegNetwork& net, const GradientSet& grads, AdamState& state) {
    auto params = param_refs(net);
    auto gs = param_refs(const_cast<GradientSet&>(grads));
    for (const auto& gref : gs)
        for (double v : *gref.data)
            if (!std::isfinite(v)) throw NumericalError("non-finite gradient");

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double lr_t = state.hp.lr / (1.0 + state.hp.lr_decay * (t - 1.0));
    const double bc1 = 1.0 - std::pow(state.hp.beta1, t);
    const double bc2 = 1.0 - std::pow(state.hp.beta2, t);

    auto ms = param_refs(state.m);
    auto vs = param_refs(state.v);
    for (std::size_t p = 0; p < params.size(); ++p) {
        std::vector<double>& w = *params[p].data;
        const std::vector<double>& g = *gs[p].data;
        std::vector<double>& m = *ms[p].data;
        std::vector<double>& v = *vs[p].data;
        if (g.size() != w.size()) throw std::invalid_argument("adam_step: gradient shape mismatch");
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.hp.beta1 * m[i] + (1.0 - state.hp.beta1) * g[i];
            v[i] = state.hp.beta2 * v[i] + (1.0 - state.hp.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr_t * mhat / (std::sqrt(vhat) + state.hp.eps);
        }
    }
}

}  // namespace sfs
