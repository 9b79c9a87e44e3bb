#pragma once

#include <cstdint>
#include <vector>

#include "sfs/common.hpp"
#include "sfs/network.hpp"
#include "sfs/swd.hpp"

namespace sfs {

/// Gaussian mixture over the latent space with components_per_class
/// components for each class; component c belongs to class
/// c / components_per_class. Weights are class-conditional: within each
/// class the components_per_class weights sum to 1, and callers supply the
/// class proportions when sampling or evaluating densities.
struct InternalDistribution {
    int num_classes = 0;
    int components_per_class = 0;
    int dim = 0;
    double confidence_threshold = 0.0;  // rho used when selecting fit samples

    std::vector<double> weights;  // K * omega
    std::vector<double> means;    // (K * omega) x F
    std::vector<double> covs;     // (K * omega) x F x F

    // caches rebuilt by finalize()
    std::vector<double> chol;      // lower Cholesky factor per component
    std::vector<double> log_norm;  // -(F/2) ln 2pi - (1/2) ln det Sigma

    int component_count() const { return num_classes * components_per_class; }
    int component_class(int c) const { return c / components_per_class; }
    const double* mean(int c) const { return &means[static_cast<std::size_t>(c) * dim]; }
    const double* cov(int c) const { return &covs[static_cast<std::size_t>(c) * dim * dim]; }

    /// Validates positive-definiteness and rebuilds the Cholesky cache.
    void finalize();
};

/// Latent vectors of pixels that pass the confidence filter, keyed by the
/// pixel's true class.
struct SelectedPixelSet {
    int dim = 0;
    double rho = 0.0;
    std::vector<std::vector<double>> per_class;  // class -> flat n_k x F
    std::vector<std::size_t> counts;

    std::size_t total() const;
};

/// Pixel (i,j) of an image joins class y_ij iff max_k prob_ijk > rho.
/// Throws NumericalError naming the starved classes when any class ends
/// up empty.
SelectedPixelSet select_confident(const SegNetwork& net, const std::vector<LabeledImage>& images,
                                  double rho);

struct EmOptions {
    int components_per_class = 3;
    double eps_reg = 1e-4;
    int max_iters = 200;
    double tol = 1e-6;
    std::uint64_t seed = 0;
};

/// Per-class log-likelihood traces; each trace is non-decreasing.
struct EmDiagnostics {
    std::vector<std::vector<double>> log_likelihood;
};

/// Class-conditional EM fit with k-means++ seeding. Every M-step adds
/// eps_reg * I to the covariances, so all eigenvalues stay >= eps_reg.
InternalDistribution fit_em(const SelectedPixelSet& samples, const EmOptions& opts,
                            EmDiagnostics* diag = nullptr);

/// Labeled draws from the mixture.
struct PseudoDataset {
    Points z;
    std::vector<std::uint8_t> labels;
};

/// n samples: class from class_proportions, component from the class-
/// conditional weights, value from N(mu, Sigma) via the Cholesky factor.
PseudoDataset sample(const InternalDistribution& dist, const std::vector<double>& class_proportions,
                     std::size_t n, Rng& rng);

/// log P(z) under the mixture with the given class proportions (uniform
/// when omitted), computed with log-sum-exp.
double log_density(const InternalDistribution& dist, const double* z,
                   const std::vector<double>* class_proportions = nullptr);

/// Mixture mean of one class (weight-averaged component means).
std::vector<double> class_mean(const InternalDistribution& dist, int k);

}  // namespace sfs
