#include "sfs/gmm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace sfs {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<const RowMat>;

// log N(x | mu, Sigma) given the lower Cholesky factor L of Sigma and the
// precomputed log normalizer
double log_gaussian(const Eigen::VectorXd& x, const Eigen::VectorXd& mu,
                    const Eigen::MatrixXd& chol_l, double log_norm) {
    const Eigen::VectorXd y = chol_l.triangularView<Eigen::Lower>().solve(x - mu);
    return log_norm - 0.5 * y.squaredNorm();
}

double log_sum_exp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

// k-means++ seeding; ties and degenerate (all-equal) distances resolve to
// the lowest index
std::vector<Eigen::VectorXd> kmeanspp_centers(const MapRowMat& data, int k, Rng& rng) {
    const Eigen::Index n = data.rows();
    std::vector<Eigen::VectorXd> centers;
    centers.reserve(k);
    centers.push_back(data.row(static_cast<Eigen::Index>(rng.uniform_int(n))).transpose());

    Eigen::VectorXd d2 = (data.rowwise() - centers[0].transpose()).rowwise().squaredNorm();
    while (static_cast<int>(centers.size()) < k) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            const double r = rng.u01() * total;
            double acc = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > r) {
                    pick = i;
                    break;
                }
            }
        }
        centers.push_back(data.row(pick).transpose());
        d2 = d2.cwiseMin((data.rowwise() - centers.back().transpose()).rowwise().squaredNorm());
    }
    return centers;
}

struct ClassFit {
    std::vector<double> weights;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::MatrixXd> covs;
};

struct ComponentCache {
    Eigen::MatrixXd chol;
    double log_norm = 0.0;
};

ComponentCache make_cache(const Eigen::MatrixXd& cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    ComponentCache c;
    c.chol = llt.matrixL();
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < c.chol.rows(); ++i) log_det += std::log(c.chol(i, i));
    log_det *= 2.0;
    c.log_norm = -0.5 * (cov.rows() * kLog2Pi + log_det);
    return c;
}

ClassFit fit_class(const MapRowMat& data, const EmOptions& opts, Rng& rng,
                   std::vector<double>* ll_trace) {
    const Eigen::Index n = data.rows();
    const int F = static_cast<int>(data.cols());
    const int m = opts.components_per_class;
    const Eigen::MatrixXd ridge = opts.eps_reg * Eigen::MatrixXd::Identity(F, F);

    // --- init: k-means++ centers, hard assignment, moment estimates
    ClassFit fit;
    {
        const auto centers = kmeanspp_centers(data, m, rng);
        std::vector<int> assign(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int bj = 0;
            for (int j = 0; j < m; ++j) {
                const double d = (data.row(i).transpose() - centers[j]).squaredNorm();
                if (d < best) {
                    best = d;
                    bj = j;
                }
            }
            assign[i] = bj;
        }
        Eigen::VectorXd global_mean = data.colwise().mean();
        Eigen::MatrixXd centered = data.rowwise() - global_mean.transpose();
        Eigen::MatrixXd global_cov = centered.transpose() * centered / static_cast<double>(n) + ridge;

        fit.weights.assign(m, 0.0);
        fit.means.assign(m, Eigen::VectorXd::Zero(F));
        fit.covs.assign(m, Eigen::MatrixXd::Zero(F, F));
        std::vector<double> cnt(m, 0.0);
        for (Eigen::Index i = 0; i < n; ++i) {
            cnt[assign[i]] += 1.0;
            fit.means[assign[i]] += data.row(i).transpose();
        }
        for (int j = 0; j < m; ++j) {
            if (cnt[j] < 1.0) {  // empty cluster: fall back to global moments
                fit.weights[j] = 1.0 / static_cast<double>(n);
                fit.means[j] = centers[j];
                fit.covs[j] = global_cov;
                continue;
            }
            fit.weights[j] = cnt[j] / static_cast<double>(n);
            fit.means[j] /= cnt[j];
            Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(F, F);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (assign[i] != j) continue;
                const Eigen::VectorXd d = data.row(i).transpose() - fit.means[j];
                scatter.noalias() += d * d.transpose();
            }
            fit.covs[j] = scatter / cnt[j] + ridge;
        }
        const double wsum = std::accumulate(fit.weights.begin(), fit.weights.end(), 0.0);
        for (double& w : fit.weights) w /= wsum;
    }

    // --- EM loop; at most max_iters M-steps. A likelihood drop (possible
    // only through the ridge) is treated as convergence and rolled back, so
    // the recorded trace is non-decreasing and always matches the returned
    // parameters.
    RowMat resp(n, m);
    std::vector<ComponentCache> cache(m);
    ClassFit snapshot;
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0;; ++iter) {
        for (int j = 0; j < m; ++j) cache[j] = make_cache(fit.covs[j]);

        double ll = 0.0;
        std::vector<double> lps(m);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd x = data.row(i).transpose();
            for (int j = 0; j < m; ++j)
                lps[j] = std::log(std::max(fit.weights[j], 1e-300)) +
                         log_gaussian(x, fit.means[j], cache[j].chol, cache[j].log_norm);
            const double lse = log_sum_exp(lps);
            ll += lse;
            for (int j = 0; j < m; ++j) resp(i, j) = std::exp(lps[j] - lse);
        }
        if (!std::isfinite(ll)) throw NumericalError("non-finite likelihood in EM");

        if (iter > 0) {
            if (ll < prev_ll) {
                fit = snapshot;
                break;
            }
            if (ll_trace) ll_trace->push_back(ll);
            if (ll - prev_ll < opts.tol) break;
        } else if (ll_trace) {
            ll_trace->push_back(ll);
        }
        if (iter == opts.max_iters) break;

        snapshot = fit;
        prev_ll = ll;

        // M-step
        for (int j = 0; j < m; ++j) {
            const double rj = resp.col(j).sum();
            if (rj < 1e-12) continue;  // keep the component where it is
            fit.weights[j] = rj / static_cast<double>(n);
            const Eigen::VectorXd mu = (resp.col(j).transpose() * data).transpose() / rj;
            Eigen::MatrixXd centered = data.rowwise() - mu.transpose();
            fit.means[j] = mu;
            fit.covs[j] =
                centered.transpose() * resp.col(j).asDiagonal() * centered / rj + ridge;
        }
        const double wsum = std::accumulate(fit.weights.begin(), fit.weights.end(), 0.0);
        for (double& w : fit.weights) w /= wsum;
    }
    return fit;
}

}  // namespace

std::size_t SelectedPixelSet::total() const {
    std::size_t t = 0;
    for (std::size_t c : counts) t += c;
    return t;
}

SelectedPixelSet select_confident(const SegNetwork& net, const std::vector<LabeledImage>& images,
                                  double rho) {
    if (rho < 0.0 || rho >= 1.0) throw ConfigError("select_confident: rho must be in [0, 1)");
    const int K = net.num_classes, F = net.latent_dim;
    SelectedPixelSet set;
    set.dim = F;
    set.rho = rho;
    set.per_class.resize(K);
    set.counts.assign(K, 0);

    for (const auto& img : images) {
        const ForwardPass fp = forward(net, img.pixels);
        for (std::size_t p = 0; p < fp.probs.pixel_count(); ++p) {
            const double* pr = &fp.probs.v[p * K];
            double conf = pr[0];
            for (int k = 1; k < K; ++k) conf = std::max(conf, pr[k]);
            if (conf > rho) {
                const int y = img.mask.data[p];
                if (y >= K) throw std::invalid_argument("select_confident: mask label >= K");
                const double* z = &fp.latent.v[p * static_cast<std::size_t>(F)];
                set.per_class[y].insert(set.per_class[y].end(), z, z + F);
                ++set.counts[y];
            }
        }
    }

    std::string starved;
    for (int k = 0; k < K; ++k)
        if (set.counts[k] == 0) starved += (starved.empty() ? "" : ", ") + std::to_string(k);
    if (!starved.empty())
        throw NumericalError("no pixels pass the confidence threshold for class(es) " + starved);
    return set;
}

void InternalDistribution::finalize() {
    const int C = component_count(), F = dim;
    chol.assign(static_cast<std::size_t>(C) * F * F, 0.0);
    log_norm.assign(C, 0.0);
    for (int c = 0; c < C; ++c) {
        Eigen::Map<const RowMat> cov(this->cov(c), F, F);
        const ComponentCache cc = make_cache(cov);
        Eigen::Map<RowMat>(&chol[static_cast<std::size_t>(c) * F * F], F, F) = cc.chol;
        log_norm[c] = cc.log_norm;
    }
}

InternalDistribution fit_em(const SelectedPixelSet& samples, const EmOptions& opts,
                            EmDiagnostics* diag) {
    const int K = static_cast<int>(samples.per_class.size());
    const int F = samples.dim;
    const int m = opts.components_per_class;
    if (K < 1 || F < 1 || m < 1) throw ConfigError("fit_em: invalid sizes");

    for (int k = 0; k < K; ++k)
        if (samples.counts[k] < static_cast<std::size_t>(m) * F)
            throw NumericalError("class " + std::to_string(k) + " has " +
                                 std::to_string(samples.counts[k]) + " samples; needs >= " +
                                 std::to_string(static_cast<std::size_t>(m) * F));

    InternalDistribution dist;
    dist.num_classes = K;
    dist.components_per_class = m;
    dist.dim = F;
    dist.confidence_threshold = samples.rho;
    dist.weights.assign(static_cast<std::size_t>(K) * m, 0.0);
    dist.means.assign(static_cast<std::size_t>(K) * m * F, 0.0);
    dist.covs.assign(static_cast<std::size_t>(K) * m * F * F, 0.0);
    if (diag) diag->log_likelihood.assign(K, {});

    for (int k = 0; k < K; ++k) {
        Rng rng(mix_seed(opts.seed, static_cast<std::uint64_t>(k)));
        MapRowMat data(samples.per_class[k].data(),
                       static_cast<Eigen::Index>(samples.counts[k]), F);
        const ClassFit fit =
            fit_class(data, opts, rng, diag ? &diag->log_likelihood[k] : nullptr);
        for (int j = 0; j < m; ++j) {
            const int c = k * m + j;
            dist.weights[c] = fit.weights[j];
            Eigen::Map<Eigen::VectorXd>(&dist.means[static_cast<std::size_t>(c) * F], F) =
                fit.means[j];
            Eigen::Map<RowMat>(&dist.covs[static_cast<std::size_t>(c) * F * F], F, F) =
                fit.covs[j];
        }
    }
    dist.finalize();
    return dist;
}

PseudoDataset sample(const InternalDistribution& dist, const std::vector<double>& class_proportions,
                     std::size_t n, Rng& rng) {
    const int K = dist.num_classes, F = dist.dim, m = dist.components_per_class;
    if (static_cast<int>(class_proportions.size()) != K)
        throw std::invalid_argument("sample: class_proportions size mismatch");
    double psum = 0.0;
    for (double p : class_proportions) {
        if (p < 0.0) throw std::invalid_argument("sample: negative class proportion");
        psum += p;
    }
    if (std::abs(psum - 1.0) > 1e-6)
        throw std::invalid_argument("sample: class proportions must sum to 1");
    if (dist.chol.empty()) throw std::logic_error("sample: distribution not finalized");

    PseudoDataset out;
    out.z = Points(F, n);
    out.labels.resize(n);
    std::vector<double> eps(F);
    for (std::size_t i = 0; i < n; ++i) {
        double r = rng.u01() * psum;
        int k = K - 1;
        for (int c = 0; c < K; ++c) {
            r -= class_proportions[c];
            if (r < 0.0) {
                k = c;
                break;
            }
        }
        double rw = rng.u01();
        int j = m - 1;
        for (int c = 0; c < m; ++c) {
            rw -= dist.weights[static_cast<std::size_t>(k) * m + c];
            if (rw < 0.0) {
                j = c;
                break;
            }
        }
        const int comp = k * m + j;
        for (int f = 0; f < F; ++f) eps[f] = rng.normal();
        const double* L = &dist.chol[static_cast<std::size_t>(comp) * F * F];
        const double* mu = dist.mean(comp);
        double* z = out.z.p(i);
        for (int f = 0; f < F; ++f) {
            double s = mu[f];
            for (int g = 0; g <= f; ++g) s += L[static_cast<std::size_t>(f) * F + g] * eps[g];
            z[f] = s;
        }
        out.labels[i] = static_cast<std::uint8_t>(k);
    }
    return out;
}

double log_density(const InternalDistribution& dist, const double* z,
                   const std::vector<double>* class_proportions) {
    const int K = dist.num_classes, F = dist.dim, m = dist.components_per_class;
    if (dist.chol.empty()) throw std::logic_error("log_density: distribution not finalized");
    Eigen::Map<const Eigen::VectorXd> x(z, F);
    std::vector<double> terms;
    terms.reserve(dist.component_count());
    for (int c = 0; c < dist.component_count(); ++c) {
        const double pk = class_proportions ? (*class_proportions)[dist.component_class(c)]
                                            : 1.0 / static_cast<double>(K);
        const double alpha = pk * dist.weights[c];
        if (alpha <= 0.0) continue;
        Eigen::Map<const RowMat> L(&dist.chol[static_cast<std::size_t>(c) * F * F], F, F);
        Eigen::Map<const Eigen::VectorXd> mu(dist.mean(c), F);
        const Eigen::VectorXd y = L.triangularView<Eigen::Lower>().solve(x - mu);
        terms.push_back(std::log(alpha) + dist.log_norm[c] - 0.5 * y.squaredNorm());
    }
    (void)m;
    return log_sum_exp(terms);
}

std::vector<double> class_mean(const InternalDistribution& dist, int k) {
    const int F = dist.dim, m = dist.components_per_class;
    std::vector<double> mu(F, 0.0);
    for (int j = 0; j < m; ++j) {
        const int c = k * m + j;
        for (int f = 0; f < F; ++f) mu[f] += dist.weights[c] * dist.mean(c)[f];
    }
    return mu;
}

}  // namespace sfs
