#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sfs/network.hpp"

using namespace sfs;

namespace {

Grid<double> random_image(int w, int h, Rng& rng) {
    Grid<double> img(w, h);
    for (double& v : img.data) v = rng.normal();
    return img;
}

Mask random_labels(int w, int h, int num_classes, Rng& rng) {
    Mask m(w, h);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.uniform_int(num_classes));
    return m;
}

Tensor random_tensor(int w, int h, int c, Rng& rng, double scale = 1.0) {
    Tensor t(w, h, c);
    for (double& v : t.v) v = scale * rng.normal();
    return t;
}

// the loss whose gradient backward() claims to produce
double composite_loss(const SegNetwork& net, const Grid<double>& img, const Mask* mask,
                      const std::vector<double>* weights, double ce_scale,
                      const Tensor* latent_grad) {
    const ForwardPass fp = forward(net, img);
    double loss = 0.0;
    if (mask) loss += ce_scale * ce_loss(fp.probs, *mask, weights);
    if (latent_grad)
        for (std::size_t i = 0; i < fp.latent.v.size(); ++i)
            loss += latent_grad->v[i] * fp.latent.v[i];
    return loss;
}

}  // namespace

TEST_CASE("zero classifier weights give the uniform distribution") {
    SegNetwork net = SegNetwork::init(6, 5, 4, 1);
    std::fill(net.cls_w.begin(), net.cls_w.end(), 0.0);
    std::fill(net.cls_b.begin(), net.cls_b.end(), 0.0);
    Rng rng(2);
    const ForwardPass fp = forward(net, random_image(10, 9, rng));
    for (double p : fp.probs.v) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("probabilities sum to one per pixel") {
    const SegNetwork net = SegNetwork::init(8, 6, 5, 3);
    Rng rng(4);
    const ForwardPass fp = forward(net, random_image(12, 7, rng));
    for (std::size_t p = 0; p < fp.probs.pixel_count(); ++p) {
        double s = 0.0;
        for (int k = 0; k < 5; ++k) s += fp.probs.v[p * 5 + k];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
    for (double v : fp.latent.v) CHECK(std::isfinite(v));
    for (double v : fp.probs.v) CHECK(std::isfinite(v));
}

TEST_CASE("forward is deterministic for fixed weights and input") {
    const SegNetwork a = SegNetwork::init(8, 6, 4, 7);
    const SegNetwork b = SegNetwork::init(8, 6, 4, 7);
    Rng rng(5);
    const Grid<double> img = random_image(9, 9, rng);
    CHECK(forward(a, img).probs.v == forward(b, img).probs.v);
}

TEST_CASE("wraparound translation equivariance") {
    const SegNetwork net = SegNetwork::init(6, 4, 3, 11);
    Rng rng(6);
    const int W = 12, H = 10, dx = 3, dy = 5;
    const Grid<double> img = random_image(W, H, rng);
    Grid<double> shifted(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) shifted(x, y) = img((x - dx + W) % W, (y - dy + H) % H);

    const ForwardPass base = forward(net, img);
    const ForwardPass moved = forward(net, shifted);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            for (int f = 0; f < 4; ++f)
                CHECK(moved.latent.at(x, y, f) ==
                      base.latent.at((x - dx + W) % W, (y - dy + H) % H, f));
            for (int k = 0; k < 3; ++k)
                CHECK(moved.probs.at(x, y, k) ==
                      base.probs.at((x - dx + W) % W, (y - dy + H) % H, k));
        }
}

TEST_CASE("cross-entropy closed forms") {
    SUBCASE("all mass on the true label") {
        Tensor probs(2, 1, 2);
        probs.at(0, 0, 0) = 1.0;
        probs.at(1, 0, 1) = 1.0;
        Mask mask(2, 1);
        mask.data = {0, 1};
        CHECK(ce_loss(probs, mask) == doctest::Approx(0.0));
    }
    SUBCASE("uniform probabilities give ln K") {
        Tensor probs(3, 2, 4);
        for (double& v : probs.v) v = 0.25;
        Mask mask(3, 2, 2);
        CHECK(ce_loss(probs, mask) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
        CHECK(ce_loss(probs, mask) == doctest::Approx(1.3863).epsilon(1e-4));
    }
    SUBCASE("two-pixel hand computation") {
        Tensor probs(2, 1, 2);
        probs.at(0, 0, 0) = 0.5;
        probs.at(0, 0, 1) = 0.5;
        probs.at(1, 0, 0) = 0.9;
        probs.at(1, 0, 1) = 0.1;
        Mask mask(2, 1);
        mask.data = {0, 1};
        const double expect = -(std::log(0.5) + std::log(0.1)) / 2.0;
        CHECK(expect == doctest::Approx(1.49786).epsilon(1e-5));
        CHECK(ce_loss(probs, mask) == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("class weights scale per-pixel terms") {
        Tensor probs(2, 1, 2);
        probs.at(0, 0, 0) = 0.5;
        probs.at(0, 0, 1) = 0.5;
        probs.at(1, 0, 0) = 0.9;
        probs.at(1, 0, 1) = 0.1;
        Mask mask(2, 1);
        mask.data = {0, 1};
        const std::vector<double> w = {2.0, 3.0};
        const double expect = -(2.0 * std::log(0.5) + 3.0 * std::log(0.1)) / 2.0;
        CHECK(ce_loss(probs, mask, &w) == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("label out of range") {
        Tensor probs(1, 1, 2);
        probs.at(0, 0, 0) = 1.0;
        Mask mask(1, 1, 5);
        CHECK_THROWS_AS(ce_loss(probs, mask), std::invalid_argument);
    }
}

TEST_CASE("backward with a zero upstream is zero") {
    const SegNetwork net = SegNetwork::init(5, 4, 3, 9);
    Rng rng(10);
    const ForwardPass fp = forward(net, random_image(8, 8, rng));
    GradientSet g = backward(net, fp, LossGradientSpec{});
    for (const auto& ref : param_refs(g))
        for (double v : *ref.data) CHECK(v == 0.0);
}

TEST_CASE("analytic gradients match central finite differences") {
    SegNetwork net = SegNetwork::init(6, 5, 3, 13);
    Rng rng(14);
    const Grid<double> img = random_image(8, 8, rng);
    const Mask mask = random_labels(8, 8, 3, rng);
    const std::vector<double> weights = {1.0, 1.7, 0.6};
    Tensor latent_grad = random_tensor(8, 8, 5, rng, 0.3);

    struct Scenario {
        const Mask* mask;
        const std::vector<double>* weights;
        const Tensor* latent;
        const char* name;
    };
    const Scenario scenarios[] = {
        {&mask, nullptr, nullptr, "plain ce"},
        {&mask, &weights, nullptr, "weighted ce"},
        {nullptr, nullptr, &latent_grad, "latent injection"},
        {&mask, &weights, &latent_grad, "combined"},
    };

    const double h = 1e-4;
    int checked = 0;
    for (const auto& sc : scenarios) {
        LossGradientSpec spec;
        spec.ce_mask = sc.mask;
        spec.class_weights = sc.weights;
        spec.latent_gradient = sc.latent;
        const ForwardPass fp = forward(net, img);
        GradientSet grads = backward(net, fp, spec);
        auto prefs = param_refs(net);
        auto grefs = param_refs(grads);

        Rng pick(100);
        for (int rep = 0; rep < 40; ++rep) {
            const std::size_t pi = pick.uniform_int(prefs.size());
            if (prefs[pi].data->empty()) continue;
            const std::size_t ci = pick.uniform_int(prefs[pi].data->size());
            double& param = (*prefs[pi].data)[ci];
            const double saved = param;
            param = saved + h;
            const double up = composite_loss(net, img, sc.mask, sc.weights, 1.0, sc.latent);
            param = saved - h;
            const double down = composite_loss(net, img, sc.mask, sc.weights, 1.0, sc.latent);
            param = saved;
            const double fd = (up - down) / (2.0 * h);
            const double ana = (*grefs[pi].data)[ci];
            const double denom = std::max({std::abs(fd), std::abs(ana), 1e-7});
            INFO(sc.name << " " << prefs[pi].name << "[" << ci << "]");
            CHECK(std::abs(fd - ana) / denom < 1e-3);
            ++checked;
        }
    }
    CHECK(checked >= 100);
}

TEST_CASE("latent-only upstream leaves the classifier untouched") {
    const SegNetwork net = SegNetwork::init(6, 5, 3, 15);
    Rng rng(16);
    const ForwardPass fp = forward(net, random_image(8, 8, rng));
    const Tensor latent_grad = random_tensor(8, 8, 5, rng);
    LossGradientSpec spec;
    spec.latent_gradient = &latent_grad;
    const GradientSet g = backward(net, fp, spec);
    for (double v : g.cls_w) CHECK(v == 0.0);
    for (double v : g.cls_b) CHECK(v == 0.0);
    // but the convolutions do receive gradient
    double conv_norm = 0.0;
    for (double v : g.conv3_w) conv_norm += std::abs(v);
    CHECK(conv_norm > 0.0);
}

TEST_CASE("classifier-only cross entropy on latent samples") {
    const SegNetwork net = SegNetwork::init(4, 3, 3, 17);
    Rng rng(18);
    Points z(3, 20);
    for (double& v : z.coords) v = rng.normal();
    std::vector<std::uint8_t> labels(20);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(3));

    GradientSet g = GradientSet::zeros_like(net);
    const double loss = classifier_ce_and_grad(net, z, labels, nullptr, 1.0, g);
    CHECK(loss > 0.0);
    for (double v : g.conv1_w) CHECK(v == 0.0);
    for (double v : g.conv2_w) CHECK(v == 0.0);
    for (double v : g.conv3_w) CHECK(v == 0.0);

    // finite-difference check on classifier parameters
    SegNetwork mutable_net = net;
    const double h = 1e-5;
    for (std::size_t i = 0; i < mutable_net.cls_w.size(); i += 3) {
        const double saved = mutable_net.cls_w[i];
        GradientSet scratch = GradientSet::zeros_like(net);
        mutable_net.cls_w[i] = saved + h;
        const double up = classifier_ce_and_grad(mutable_net, z, labels, nullptr, 0.0, scratch);
        mutable_net.cls_w[i] = saved - h;
        const double down = classifier_ce_and_grad(mutable_net, z, labels, nullptr, 0.0, scratch);
        mutable_net.cls_w[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        CHECK(std::abs(fd - g.cls_w[i]) / std::max({std::abs(fd), std::abs(g.cls_w[i]), 1e-7}) <
              1e-4);
    }
}

TEST_CASE("adam with zero gradients never moves parameters") {
    SegNetwork net = SegNetwork::init(4, 3, 2, 19);
    const SegNetwork before = net;
    AdamState state = AdamState::init(net, AdamParams{1e-2, 0.9, 0.999, 1e-8, 1e-6});
    const GradientSet zeros = GradientSet::zeros_like(net);
    for (int i = 0; i < 50; ++i) adam_step(net, zeros, state);
    auto a = param_refs(net);
    auto b = param_refs(const_cast<SegNetwork&>(before));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].data == *b[i].data);
}

TEST_CASE("adam solves a scalar quadratic") {
    // drive a single parameter toward 3 on loss (p - 3)^2
    SegNetwork net = SegNetwork::init(1, 1, 2, 21);
    AdamState state = AdamState::init(net, AdamParams{0.1, 0.9, 0.999, 1e-8, 0.0});
    net.conv1_b[0] = 0.0;
    bool converged = false;
    for (int step = 0; step < 500; ++step) {
        GradientSet g = GradientSet::zeros_like(net);
        g.conv1_b[0] = 2.0 * (net.conv1_b[0] - 3.0);
        adam_step(net, g, state);
        if (std::abs(net.conv1_b[0] - 3.0) < 1e-3) {
            converged = true;
            break;
        }
    }
    CHECK(converged);
}

TEST_CASE("identical gradient streams give identical trajectories") {
    SegNetwork a = SegNetwork::init(4, 3, 2, 22);
    SegNetwork b = SegNetwork::init(4, 3, 2, 22);
    AdamState sa = AdamState::init(a, AdamParams{});
    AdamState sb = AdamState::init(b, AdamParams{});
    Rng rng(23);
    for (int step = 0; step < 10; ++step) {
        GradientSet g = GradientSet::zeros_like(a);
        for (const auto& ref : param_refs(g))
            for (double& v : *ref.data) v = rng.normal();
        GradientSet g2 = g;
        adam_step(a, g, sa);
        adam_step(b, g2, sb);
    }
    auto ra = param_refs(a);
    auto rb = param_refs(b);
    for (std::size_t i = 0; i < ra.size(); ++i) CHECK(*ra[i].data == *rb[i].data);
}

TEST_CASE("non-finite gradients are rejected") {
    SegNetwork net = SegNetwork::init(4, 3, 2, 24);
    AdamState state = AdamState::init(net, AdamParams{});
    GradientSet g = GradientSet::zeros_like(net);
    g.conv2_w[0] = std::nan("");
    CHECK_THROWS_WITH_AS(adam_step(net, g, state), "non-finite gradient", NumericalError);
}

TEST_CASE("parameter count is reported") {
    const SegNetwork net = SegNetwork::init(16, 8, 4, 25);
    // conv1 16*9+16, conv2 16*16*9+16, conv3 8*16*9+8, classifier 4*8+4
    CHECK(net.param_count() == 16 * 9 + 16 + 16 * 16 * 9 + 16 + 8 * 16 * 9 + 8 + 4 * 8 + 4);
}
