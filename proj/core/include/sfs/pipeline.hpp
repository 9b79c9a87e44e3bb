#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "sfs/config.hpp"
#include "sfs/gmm.hpp"
#include "sfs/io.hpp"
#include "sfs/metrics.hpp"
#include "sfs/network.hpp"

namespace sfs {

struct TrainLogRow {
    long long step = 0;
    double loss = 0.0;
    bool has_val = false;
    double val_dice = 0.0;
};

struct TrainResult {
    SegNetwork net;  // best-validation parameters
    std::vector<TrainLogRow> log;
    double best_val_dice = 0.0;
    long long best_val_step = 0;
};

/// Supervised training with Adam on (optionally class-weighted, optionally
/// augmented) pixel-wise cross-entropy; validation macro Dice is logged
/// every val_every steps and the best-validation checkpoint is returned.
TrainResult train_source(const SfsConfig& cfg, const std::vector<LabeledImage>& train,
                         const std::vector<LabeledImage>& val, std::uint64_t weight_seed,
                         std::uint64_t train_seed);

/// Confident-pixel selection followed by the class-conditional EM fit.
/// Selected pixel counts per class and EM likelihood traces are reported
/// through the optional out-parameters.
InternalDistribution estimate_internal(const SegNetwork& net,
                                       const std::vector<LabeledImage>& source_train,
                                       const SfsConfig& cfg, EmDiagnostics* diag = nullptr,
                                       std::vector<std::size_t>* selected_counts = nullptr);

struct AdaptLogRow {
    long long step = 0;
    double ce = 0.0;
    double swd = 0.0;
    double total = 0.0;
};

struct AdaptResult {
    SegNetwork net;
    std::vector<AdaptLogRow> log;
};

/// Source-free adaptation: per step, pseudo-label the target batch, draw a
/// pseudo-dataset from the mixture with the batch label proportions, and
/// minimize ce(classifier on pseudo samples) + lambda * swd(target pixel
/// subsample, pseudo samples). The classifier term can only move the
/// classifier; the alignment term injects its gradient at the latent field
/// and moves encoder and decoder. Takes unlabeled images only.
AdaptResult adapt(const SegNetwork& net, const InternalDistribution& dist,
                  const std::vector<Grid<double>>& target_images, const SfsConfig& cfg);

struct ImageEval {
    int image_id = 0;
    ClassScores scores;
};

struct EvalReport {
    std::vector<ImageEval> per_image;
    // per-class averages over the images where the class is present
    std::vector<std::optional<double>> mean_dice;
    std::vector<std::optional<double>> mean_assd;
    std::optional<double> macro_dice;
    std::optional<double> macro_assd;
    bool has_migration = false;
    std::vector<MigrationTable> per_image_migration;
    MigrationTable aggregate_migration;  // over all pixels of all images
};

/// Dice/ASSD per class and image; when a baseline network is supplied its
/// predictions serve as the pre-adaptation masks for migration tables.
EvalReport evaluate(const SegNetwork& net, const std::vector<LabeledImage>& test,
                    const SegNetwork* baseline);

/// Macro Dice only (validation helper; skips the ASSD computation).
double validation_macro_dice(const SegNetwork& net, const std::vector<LabeledImage>& images);

/// total / (K * class_count), clamped to [0.05, 20]; missing classes get 1.
std::vector<double> inverse_frequency_weights(const std::vector<LabeledImage>& images,
                                              int num_classes);

/// CSV dump of an M-pixel latent subsample per image with predicted and
/// true labels (columns x0..x{F-1},pred,true).
void dump_embeddings(const SegNetwork& net, const std::vector<LabeledImage>& images,
                     int pixels_per_image, std::uint64_t seed,
                     const std::filesystem::path& csv_path);

// ---------------------------------------------------------------------
// Workspace commands backing the CLI. All phases share one workspace
// directory; each reads its inputs from the canonical paths written by
// the previous phase.
void cmd_generate_data(const SfsConfig& cfg, const std::filesystem::path& out);
void cmd_train_source(const SfsConfig& cfg, const std::filesystem::path& out);
void cmd_estimate_gmm(const SfsConfig& cfg, const std::filesystem::path& out);
void cmd_adapt(const SfsConfig& cfg, const std::filesystem::path& out);
void cmd_evaluate(const SfsConfig& cfg, const std::filesystem::path& out);
void cmd_ablate(const SfsConfig& cfg, const std::filesystem::path& out);

}  // namespace sfs
