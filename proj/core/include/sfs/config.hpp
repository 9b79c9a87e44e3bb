#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sfs/datagen.hpp"

namespace sfs {

struct DataConfig {
    SceneSpec scene;  // rng_seed comes from seeds.data
    ModalitySpec source_modality;
    ModalitySpec target_modality;
    int source_train = 64;
    int source_val = 8;
    int target_train = 64;
    int target_val = 8;
    int target_test = 16;
    std::string format = "binary";  // "binary" | "csv"
    AugmentSpec augment;
};

struct NetworkConfig {
    int encoder_channels = 16;
    int latent_dim = 8;
};

struct AdamConfig {
    double lr = 1e-4;
    double eps = 1e-6;
    double decay = 1e-6;
};

struct SourceTrainingConfig {
    int iters = 4000;
    int batch_size = 4;
    AdamConfig adam{1e-4, 1e-6, 1e-6};
    int val_every = 200;
    bool class_weighted_ce = false;
    bool augment = true;
};

struct GmmConfig {
    double rho = 0.97;
    int omega = 3;
    double eps_reg = 1e-4;
    int max_iters = 200;
    double tol = 1e-6;
    int max_pixels_per_class = 20000;
};

struct AdaptationConfig {
    int iters = 3000;
    int batch_size = 4;
    double lambda = 0.5;
    int pixels_per_batch = 1024;
    int projections = 64;
    AdamConfig adam{5e-5, 1e-1, 1e-6};
    bool finetune_classifier = true;
    bool augment = true;
};

struct EvalConfig {
    int embed_pixels_per_image = 256;
};

struct AblationConfig {
    std::string kind = "omega";  // "omega" | "rho" | "finetune"
    std::vector<double> values = {1, 3};
};

struct Seeds {
    std::uint64_t data = 101;
    std::uint64_t weights = 202;
    std::uint64_t source_train = 303;
    std::uint64_t gmm = 404;
    std::uint64_t adapt = 505;
    std::uint64_t eval = 606;
};

/// Whole-run configuration. Parsed from a single JSON document whose
/// unknown keys are rejected; every key is optional and defaults to the
/// values above.
struct SfsConfig {
    DataConfig data;
    NetworkConfig network;
    SourceTrainingConfig source_training;
    GmmConfig gmm;
    AdaptationConfig adaptation;
    EvalConfig eval;
    AblationConfig ablation;
    Seeds seeds;

    static SfsConfig from_json_text(const std::string& text);
    static SfsConfig from_json_file(const std::filesystem::path& path);

    /// Canonical JSON dump of the resolved configuration.
    std::string to_json_text() const;

    /// FNV-1a hash (hex) of the canonical dump; stamped into artifacts.
    std::string hash() const;

    /// Rederives every named seed from a master seed (the CLI --seed flag).
    void override_master_seed(std::uint64_t master);

    void validate() const;
};

}  // namespace sfs
