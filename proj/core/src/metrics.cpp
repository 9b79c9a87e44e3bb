#include "sfs/metrics.hpp"

#include <cmath>
#include <limits>

namespace sfs {

namespace {

void require_same_shape(const Mask& a, const Mask& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("masks have different shapes");
}

}  // namespace

std::optional<double> dice(const Mask& pred, const Mask& truth, int k) {
    require_same_shape(pred, truth);
    std::size_t np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] == k;
        const bool g = truth.data[i] == k;
        np += p;
        ng += g;
        inter += p && g;
    }
    if (np + ng == 0) return std::nullopt;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

std::vector<std::pair<int, int>> surface_pixels(const Mask& mask, int k) {
    std::vector<std::pair<int, int>> out;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask(x, y) != k) continue;
            const bool boundary =
                x == 0 || x == mask.width - 1 || y == 0 || y == mask.height - 1 ||
                mask(x - 1, y) != k || mask(x + 1, y) != k ||
                mask(x, y - 1) != k || mask(x, y + 1) != k;
            if (boundary) out.emplace_back(x, y);
        }
    }
    return out;
}

namespace {

double sum_nearest_distances(const std::vector<std::pair<int, int>>& from,
                             const std::vector<std::pair<int, int>>& to) {
    double total = 0.0;
    for (const auto& [ax, ay] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [bx, by] : to) {
            const double dx = ax - bx, dy = ay - by;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best) best = d2;
        }
        total += std::sqrt(best);
    }
    return total;
}

}  // namespace

std::optional<double> assd(const Mask& pred, const Mask& truth, int k) {
    require_same_shape(pred, truth);
    const auto sp = surface_pixels(pred, k);
    const auto sg = surface_pixels(truth, k);
    if (sp.empty() || sg.empty()) return std::nullopt;
    const double total = sum_nearest_distances(sp, sg) + sum_nearest_distances(sg, sp);
    return total / static_cast<double>(sp.size() + sg.size());
}

ClassScores score_classes(const Mask& pred, const Mask& truth, int num_classes) {
    ClassScores s;
    s.dice.resize(num_classes);
    s.assd.resize(num_classes);
    for (int k = 0; k < num_classes; ++k) {
        s.dice[k] = dice(pred, truth, k);
        s.assd[k] = assd(pred, truth, k);
    }
    auto macro = [&](const std::vector<std::optional<double>>& per_class) {
        double sum = 0.0;
        int n = 0;
        for (int k = 1; k < num_classes; ++k) {
            if (per_class[k]) { sum += *per_class[k]; ++n; }
        }
        if (n == 0 && num_classes > 0 && per_class[0]) { sum = *per_class[0]; n = 1; }
        return n > 0 ? std::optional<double>(sum / n) : std::nullopt;
    };
    s.macro_dice = macro(s.dice);
    s.macro_assd = macro(s.assd);
    return s;
}

MigrationTable migration_table(const Mask& pre, const Mask& post, const Mask& truth,
                               int num_classes) {
    require_same_shape(pre, post);
    require_same_shape(pre, truth);
    const int K = num_classes;
    MigrationTable t;
    t.num_classes = K;
    t.row_present.assign(K, false);
    t.cells.assign(static_cast<std::size_t>(K) * K, MigrationCell{});

    std::vector<std::size_t> n_pre(K, 0);
    std::vector<std::size_t> moved(static_cast<std::size_t>(K) * K, 0);
    std::vector<std::size_t> moved_true_src(static_cast<std::size_t>(K) * K, 0);
    std::vector<std::size_t> moved_true_dst(static_cast<std::size_t>(K) * K, 0);

    for (std::size_t p = 0; p < pre.data.size(); ++p) {
        const int i = pre.data[p];
        const int j = post.data[p];
        const int g = truth.data[p];
        if (i >= K || j >= K || g >= K) throw std::invalid_argument("mask label >= num_classes");
        const std::size_t ij = static_cast<std::size_t>(i) * K + j;
        ++n_pre[i];
        ++moved[ij];
        moved_true_src[ij] += g == i;
        moved_true_dst[ij] += g == j;
    }

    for (int i = 0; i < K; ++i) {
        if (n_pre[i] == 0) continue;
        t.row_present[i] = true;
        for (int j = 0; j < K; ++j) {
            const std::size_t ij = static_cast<std::size_t>(i) * K + j;
            MigrationCell& c = t.cell(i, j);
            c.pct_moved = 100.0 * static_cast<double>(moved[ij]) / static_cast<double>(n_pre[i]);
            if (moved[ij] > 0) {
                c.pct_true_source =
                    100.0 * static_cast<double>(moved_true_src[ij]) / static_cast<double>(moved[ij]);
                c.pct_true_dest =
                    100.0 * static_cast<double>(moved_true_dst[ij]) / static_cast<double>(moved[ij]);
            }
        }
    }
    return t;
}

}  // namespace sfs
