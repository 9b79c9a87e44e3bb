#pragma once

#include <optional>
#include <vector>

#include "sfs/common.hpp"

namespace sfs {

/// Per-class segmentation scores for one (prediction, ground truth) pair.
/// A class is skipped by a metric (nullopt) when it is missing from both
/// masks (dice) or from either mask (assd); skipped classes are excluded
/// from the macro averages.
struct ClassScores {
    std::vector<std::optional<double>> dice;
    std::vector<std::optional<double>> assd;
    std::optional<double> macro_dice;
    std::optional<double> macro_assd;
};

struct MigrationCell {
    double pct_moved = 0.0;        // % of source-class pixels that end in this column
    double pct_true_source = 0.0;  // % of those pixels whose true label is the row class
    double pct_true_dest = 0.0;    // % of those pixels whose true label is the column class
};

/// K x K accounting of how pixel labels change between two predictions.
struct MigrationTable {
    int num_classes = 0;
    std::vector<bool> row_present;      // false when the source class has no pixels
    std::vector<MigrationCell> cells;   // row-major K x K

    MigrationCell& cell(int i, int j) { return cells[static_cast<std::size_t>(i) * num_classes + j]; }
    const MigrationCell& cell(int i, int j) const {
        return cells[static_cast<std::size_t>(i) * num_classes + j];
    }
};

/// 2|P∩G| / (|P|+|G|); nullopt when the class appears in neither mask.
std::optional<double> dice(const Mask& pred, const Mask& truth, int k);

/// Average symmetric surface distance in pixel units. Surfaces use
/// 4-connectivity and the image border counts as outside the class.
/// nullopt when either surface is empty.
std::optional<double> assd(const Mask& pred, const Mask& truth, int k);

/// Surface pixels of class k: class members with at least one 4-neighbor
/// (or image border) outside the class.
std::vector<std::pair<int, int>> surface_pixels(const Mask& mask, int k);

/// All per-class scores plus macro averages. Macro averages run over the
/// present classes excluding background (class 0); if no foreground class
/// is present they fall back to all present classes.
ClassScores score_classes(const Mask& pred, const Mask& truth, int num_classes);

MigrationTable migration_table(const Mask& pre, const Mask& post, const Mask& truth,
                               int num_classes);

}  // namespace sfs
