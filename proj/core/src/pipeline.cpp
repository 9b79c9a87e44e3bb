#include "sfs/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

namespace sfs {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

// shuffled epoch stream of dataset indices
class BatchStream {
public:
    BatchStream(std::size_t n, Rng& rng) : rng_(rng), order_(n) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_);
    }
    std::size_t next() {
        if (pos_ == order_.size()) {
            rng_.shuffle(order_);
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    Rng& rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

Mask argmax_mask(const Tensor& probs) {
    Mask m(probs.width, probs.height);
    const int K = probs.channels;
    for (std::size_t p = 0; p < probs.pixel_count(); ++p) {
        const double* pr = &probs.v[p * K];
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (pr[k] > pr[best]) best = k;
        m.data[p] = static_cast<std::uint8_t>(best);
    }
    return m;
}

void ensure_dir(const fs::path& dir) { fs::create_directories(dir); }

json read_manifest(const fs::path& out) {
    const fs::path p = out / "run_manifest.json";
    if (!fs::exists(p)) return json::object();
    std::ifstream in(p);
    json j;
    in >> j;
    return j;
}

void update_manifest(const fs::path& out, const std::string& phase, json entry) {
    json j = read_manifest(out);
    j[phase] = std::move(entry);
    std::ofstream o(out / "run_manifest.json");
    o << j.dump(2) << "\n";
}

json seeds_to_json(const Seeds& s) {
    return {{"data", s.data},       {"weights", s.weights}, {"source_train", s.source_train},
            {"gmm", s.gmm},         {"adapt", s.adapt},     {"eval", s.eval}};
}

}  // namespace

std::vector<double> inverse_frequency_weights(const std::vector<LabeledImage>& images,
                                              int num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    std::size_t total = 0;
    for (const auto& img : images)
        for (std::uint8_t v : img.mask.data) {
            ++counts[v];
            ++total;
        }
    std::vector<double> w(num_classes, 1.0);
    for (int k = 0; k < num_classes; ++k) {
        if (counts[k] == 0) continue;
        w[k] = std::clamp(static_cast<double>(total) /
                              (static_cast<double>(num_classes) * static_cast<double>(counts[k])),
                          0.05, 20.0);
    }
    return w;
}

double validation_macro_dice(const SegNetwork& net, const std::vector<LabeledImage>& images) {
    const int K = net.num_classes;
    std::vector<double> sums(K, 0.0);
    std::vector<int> n(K, 0);
    for (const auto& img : images) {
        const ForwardPass fp = forward(net, img.pixels);
        const Mask pred = argmax_mask(fp.probs);
        for (int k = 0; k < K; ++k) {
            if (auto d = dice(pred, img.mask, k)) {
                sums[k] += *d;
                ++n[k];
            }
        }
    }
    double acc = 0.0;
    int cnt = 0;
    for (int k = 1; k < K; ++k)
        if (n[k] > 0) {
            acc += sums[k] / n[k];
            ++cnt;
        }
    if (cnt == 0 && n[0] > 0) return sums[0] / n[0];
    return cnt > 0 ? acc / cnt : 0.0;
}

TrainResult train_source(const SfsConfig& cfg, const std::vector<LabeledImage>& train,
                         const std::vector<LabeledImage>& val, std::uint64_t weight_seed,
                         std::uint64_t train_seed) {
    if (train.empty() || val.empty())
        throw std::invalid_argument("train_source: empty train or val set");
    const int K = cfg.data.scene.num_classes;
    const auto& tc = cfg.source_training;

    SegNetwork net =
        SegNetwork::init(cfg.network.encoder_channels, cfg.network.latent_dim, K, weight_seed);
    AdamState adam = AdamState::init(
        net, AdamParams{tc.adam.lr, 0.9, 0.999, tc.adam.eps, tc.adam.decay});

    std::optional<std::vector<double>> weights;
    if (tc.class_weighted_ce) weights = inverse_frequency_weights(train, K);

    Rng rng(train_seed);
    BatchStream stream(train.size(), rng);

    TrainResult result;
    result.net = net;
    result.best_val_dice = -1.0;

    const double inv_batch = 1.0 / static_cast<double>(tc.batch_size);
    for (long long step = 1; step <= tc.iters; ++step) {
        GradientSet grads = GradientSet::zeros_like(net);
        double loss = 0.0;
        for (int b = 0; b < tc.batch_size; ++b) {
            const LabeledImage& base = train[stream.next()];
            const LabeledImage img =
                tc.augment ? augment(base, cfg.data.augment, rng) : base;
            const ForwardPass fp = forward(net, img.pixels);
            loss += ce_loss(fp.probs, img.mask, weights ? &*weights : nullptr) * inv_batch;
            LossGradientSpec spec;
            spec.ce_mask = &img.mask;
            spec.class_weights = weights ? &*weights : nullptr;
            spec.ce_scale = inv_batch;
            grads.add_scaled(backward(net, fp, spec), 1.0);
        }
        if (!std::isfinite(loss))
            throw NumericalError("source training diverged (non-finite loss) at step " +
                                 std::to_string(step));
        adam_step(net, grads, adam);

        TrainLogRow row;
        row.step = step;
        row.loss = loss;
        if (step % tc.val_every == 0 || step == tc.iters) {
            row.has_val = true;
            row.val_dice = validation_macro_dice(net, val);
            if (row.val_dice > result.best_val_dice) {
                result.best_val_dice = row.val_dice;
                result.best_val_step = step;
                result.net = net;
            }
        }
        result.log.push_back(row);
    }
    if (result.best_val_dice < 0.0) {  // no validation step ran
        result.net = net;
        result.best_val_dice = validation_macro_dice(net, val);
        result.best_val_step = tc.iters;
    }
    return result;
}

InternalDistribution estimate_internal(const SegNetwork& net,
                                       const std::vector<LabeledImage>& source_train,
                                       const SfsConfig& cfg, EmDiagnostics* diag,
                                       std::vector<std::size_t>* selected_counts) {
    SelectedPixelSet set;
    try {
        set = select_confident(net, source_train, cfg.gmm.rho);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + "; consider lowering rho");
    }
    if (selected_counts) *selected_counts = set.counts;

    // cap per class so the EM stays desk-sized
    const std::size_t cap = static_cast<std::size_t>(cfg.gmm.max_pixels_per_class);
    const int F = set.dim;
    for (std::size_t k = 0; k < set.per_class.size(); ++k) {
        if (set.counts[k] <= cap) continue;
        Rng rng(mix_seed(cfg.seeds.gmm, 0x5ca1eULL + k));
        const auto keep = rng.sample_indices(set.counts[k], cap);
        std::vector<double> reduced(cap * F);
        for (std::size_t i = 0; i < keep.size(); ++i)
            std::copy_n(set.per_class[k].begin() + static_cast<std::ptrdiff_t>(keep[i]) * F, F,
                        reduced.begin() + static_cast<std::ptrdiff_t>(i) * F);
        set.per_class[k] = std::move(reduced);
        set.counts[k] = cap;
    }

    EmOptions opts;
    opts.components_per_class = cfg.gmm.omega;
    opts.eps_reg = cfg.gmm.eps_reg;
    opts.max_iters = cfg.gmm.max_iters;
    opts.tol = cfg.gmm.tol;
    opts.seed = cfg.seeds.gmm;
    return fit_em(set, opts, diag);
}

AdaptResult adapt(const SegNetwork& net, const InternalDistribution& dist,
                  const std::vector<Grid<double>>& target_images, const SfsConfig& cfg) {
    if (target_images.empty()) throw std::invalid_argument("adapt: empty target set");
    if (dist.dim != net.latent_dim || dist.num_classes != net.num_classes)
        throw std::invalid_argument("adapt: distribution does not match the network");
    const auto& ac = cfg.adaptation;
    const int K = net.num_classes, F = net.latent_dim;
    const int B = ac.batch_size;
    const std::size_t M = static_cast<std::size_t>(ac.pixels_per_batch);

    const std::size_t px_per_img = target_images[0].size();
    if (M > px_per_img * static_cast<std::size_t>(B))
        throw ConfigError("adapt: pixels_per_batch exceeds batch pixel capacity");

    AdaptResult result;
    result.net = net;
    AdamState adam = AdamState::init(
        result.net, AdamParams{ac.adam.lr, 0.9, 0.999, ac.adam.eps, ac.adam.decay});

    Rng rng(cfg.seeds.adapt);
    BatchStream stream(target_images.size(), rng);
    const std::uint64_t bank_base = mix_seed(cfg.seeds.adapt, 0xba4cULL);

    // spread the pixel budget over the batch
    std::vector<std::size_t> m_per(B, M / B);
    for (std::size_t r = 0; r < M % B; ++r) ++m_per[r];

    const Mask dummy_mask(target_images[0].width, target_images[0].height, 0);

    for (long long step = 1; step <= ac.iters; ++step) {
        std::vector<ForwardPass> fps;
        fps.reserve(B);
        std::vector<std::size_t> class_hist(K, 0);
        for (int b = 0; b < B; ++b) {
            const Grid<double>* px = &target_images[stream.next()];
            Grid<double> augmented;
            if (ac.augment) {
                LabeledImage tmp{*px, dummy_mask};
                augmented = augment(tmp, cfg.data.augment, rng).pixels;
                px = &augmented;
            }
            fps.push_back(forward(result.net, *px));
            const Tensor& probs = fps.back().probs;
            for (std::size_t p = 0; p < probs.pixel_count(); ++p) {
                const double* pr = &probs.v[p * K];
                int best = 0;
                for (int k = 1; k < K; ++k)
                    if (pr[k] > pr[best]) best = k;
                ++class_hist[best];
            }
        }
        // pseudo-labels of the batch define the sampling proportions
        const double total_px = static_cast<double>(
            std::accumulate(class_hist.begin(), class_hist.end(), std::size_t{0}));
        std::vector<double> proportions(K);
        for (int k = 0; k < K; ++k) proportions[k] = static_cast<double>(class_hist[k]) / total_px;

        const PseudoDataset pseudo = sample(dist, proportions, M, rng);

        std::vector<PixelSample> samples;
        samples.reserve(B);
        Points target_points(F, M);
        std::size_t offset = 0;
        for (int b = 0; b < B; ++b) {
            samples.push_back(latent_field_to_points(fps[b].latent, nullptr, m_per[b], rng));
            std::copy(samples.back().points.coords.begin(), samples.back().points.coords.end(),
                      target_points.coords.begin() + static_cast<std::ptrdiff_t>(offset) * F);
            offset += m_per[b];
        }

        Rng bank_rng(mix_seed(bank_base, static_cast<std::uint64_t>(step)));
        const ProjectionBank bank = sample_projections(F, ac.projections, bank_rng);
        const SwdResult swd_res = swd(target_points, pseudo.z, bank);

        GradientSet grads = GradientSet::zeros_like(result.net);
        double ce = 0.0;
        if (ac.finetune_classifier)
            ce = classifier_ce_and_grad(result.net, pseudo.z, pseudo.labels, nullptr, 1.0, grads);

        if (ac.lambda > 0.0) {
            offset = 0;
            for (int b = 0; b < B; ++b) {
                const std::size_t mb = m_per[b];
                std::vector<double> grad_slice(
                    swd_res.grad_a.begin() + static_cast<std::ptrdiff_t>(offset) * F,
                    swd_res.grad_a.begin() + static_cast<std::ptrdiff_t>(offset + mb) * F);
                Tensor d_latent(fps[b].latent.width, fps[b].latent.height, F);
                scatter_point_gradients(samples[b], grad_slice, ac.lambda, d_latent);
                LossGradientSpec spec;
                spec.latent_gradient = &d_latent;
                grads.add_scaled(backward(result.net, fps[b], spec), 1.0);
                offset += mb;
            }
        }

        const double total = ce + ac.lambda * swd_res.distance;
        if (!std::isfinite(total))
            throw NumericalError("adaptation diverged (non-finite loss) at step " +
                                 std::to_string(step));
        adam_step(result.net, grads, adam);
        result.log.push_back({step, ce, swd_res.distance, total});
    }
    return result;
}

EvalReport evaluate(const SegNetwork& net, const std::vector<LabeledImage>& test,
                    const SegNetwork* baseline) {
    const int K = net.num_classes;
    EvalReport report;
    report.mean_dice.resize(K);
    report.mean_assd.resize(K);

    std::vector<Mask> post_masks, pre_masks;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const ForwardPass fp = forward(net, test[i].pixels);
        post_masks.push_back(argmax_mask(fp.probs));
        report.per_image.push_back(
            {static_cast<int>(i), score_classes(post_masks.back(), test[i].mask, K)});
        if (baseline) {
            const ForwardPass bp = forward(*baseline, test[i].pixels);
            pre_masks.push_back(argmax_mask(bp.probs));
        }
    }

    std::vector<double> dsum(K, 0.0), asum(K, 0.0);
    std::vector<int> dn(K, 0), an(K, 0);
    for (const auto& ie : report.per_image) {
        for (int k = 0; k < K; ++k) {
            if (ie.scores.dice[k]) {
                dsum[k] += *ie.scores.dice[k];
                ++dn[k];
            }
            if (ie.scores.assd[k]) {
                asum[k] += *ie.scores.assd[k];
                ++an[k];
            }
        }
    }
    for (int k = 0; k < K; ++k) {
        if (dn[k] > 0) report.mean_dice[k] = dsum[k] / dn[k];
        if (an[k] > 0) report.mean_assd[k] = asum[k] / an[k];
    }
    auto macro = [&](const std::vector<std::optional<double>>& per_class) {
        double s = 0.0;
        int n = 0;
        for (int k = 1; k < K; ++k)
            if (per_class[k]) {
                s += *per_class[k];
                ++n;
            }
        if (n == 0 && per_class[0]) return std::optional<double>(*per_class[0]);
        return n > 0 ? std::optional<double>(s / n) : std::nullopt;
    };
    report.macro_dice = macro(report.mean_dice);
    report.macro_assd = macro(report.mean_assd);

    if (baseline) {
        report.has_migration = true;
        std::size_t total_px = 0;
        for (const auto& img : test) total_px += img.mask.size();
        Mask all_pre(static_cast<int>(total_px), 1), all_post(static_cast<int>(total_px), 1),
            all_true(static_cast<int>(total_px), 1);
        std::size_t off = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            report.per_image_migration.push_back(
                migration_table(pre_masks[i], post_masks[i], test[i].mask, K));
            std::copy(pre_masks[i].data.begin(), pre_masks[i].data.end(),
                      all_pre.data.begin() + static_cast<std::ptrdiff_t>(off));
            std::copy(post_masks[i].data.begin(), post_masks[i].data.end(),
                      all_post.data.begin() + static_cast<std::ptrdiff_t>(off));
            std::copy(test[i].mask.data.begin(), test[i].mask.data.end(),
                      all_true.data.begin() + static_cast<std::ptrdiff_t>(off));
            off += test[i].mask.size();
        }
        report.aggregate_migration = migration_table(all_pre, all_post, all_true, K);
    }
    return report;
}

void dump_embeddings(const SegNetwork& net, const std::vector<LabeledImage>& images,
                     int pixels_per_image, std::uint64_t seed, const fs::path& csv_path) {
    const int F = net.latent_dim, K = net.num_classes;
    std::ofstream out(csv_path);
    if (!out) throw ConfigError("cannot write " + csv_path.string());
    for (int f = 0; f < F; ++f) out << "x" << f << ",";
    out << "pred,true\n";
    Rng rng(seed);
    for (const auto& img : images) {
        const ForwardPass fp = forward(net, img.pixels);
        const std::size_t m =
            std::min<std::size_t>(static_cast<std::size_t>(pixels_per_image), fp.latent.pixel_count());
        const auto idx = rng.sample_indices(fp.latent.pixel_count(), m);
        for (std::size_t p : idx) {
            const double* z = &fp.latent.v[p * F];
            const double* pr = &fp.probs.v[p * K];
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (pr[k] > pr[best]) best = k;
            for (int f = 0; f < F; ++f) out << fmt(z[f]) << ",";
            out << best << "," << static_cast<int>(img.mask.data[p]) << "\n";
        }
    }
}

// ---------------------------------------------------------------------
// workspace commands

namespace {

struct SplitPlan {
    const char* name;
    int count;
    bool target;
    std::uint64_t seed_tag;
};

constexpr const char* kSourceNet = "source_net.json";
constexpr const char* kAdaptedNet = "adapted_net.json";
constexpr const char* kGmmFile = "gmm.json";

std::vector<LabeledImage> load_split_checked(const fs::path& out, const char* split) {
    const fs::path dir = out / "data" / split;
    if (!fs::exists(dir / "manifest.json"))
        throw ConfigError("missing split " + dir.string() + "; run generate-data first");
    return read_split(dir);
}

void write_train_log(const fs::path& path, const std::vector<TrainLogRow>& log) {
    std::ofstream out(path);
    out << "step,ce,val_dice\n";
    for (const auto& r : log) {
        out << r.step << "," << fmt(r.loss) << ",";
        if (r.has_val) out << fmt(r.val_dice);
        out << "\n";
    }
}

void write_adapt_log(const fs::path& path, const std::vector<AdaptLogRow>& log) {
    std::ofstream out(path);
    out << "step,ce,swd,total\n";
    for (const auto& r : log)
        out << r.step << "," << fmt(r.ce) << "," << fmt(r.swd) << "," << fmt(r.total) << "\n";
}

void append_metrics_rows(std::ofstream& out, const std::string& phase, const EvalReport& report) {
    for (const auto& ie : report.per_image) {
        const int K = static_cast<int>(ie.scores.dice.size());
        for (int k = 0; k < K; ++k) {
            out << phase << "," << ie.image_id << "," << k << "," << fmt_opt(ie.scores.dice[k])
                << "," << fmt_opt(ie.scores.assd[k]) << "\n";
        }
    }
}

void write_migration_csv(const fs::path& path, const MigrationTable& t) {
    std::ofstream out(path);
    out << "pre_class,post_class,pct_moved,pct_true_source,pct_true_dest\n";
    for (int i = 0; i < t.num_classes; ++i) {
        if (!t.row_present[i]) continue;
        for (int j = 0; j < t.num_classes; ++j) {
            const MigrationCell& c = t.cell(i, j);
            out << i << "," << j << "," << fmt(c.pct_moved) << "," << fmt(c.pct_true_source) << ","
                << fmt(c.pct_true_dest) << "\n";
        }
    }
}

json report_to_json(const EvalReport& report) {
    auto opt_arr = [](const std::vector<std::optional<double>>& v) {
        json a = json::array();
        for (const auto& x : v) {
            if (x)
                a.push_back(*x);
            else
                a.push_back(nullptr);
        }
        return a;
    };
    json j;
    j["mean_dice"] = opt_arr(report.mean_dice);
    j["mean_assd"] = opt_arr(report.mean_assd);
    j["macro_dice"] = report.macro_dice ? json(*report.macro_dice) : json(nullptr);
    j["macro_assd"] = report.macro_assd ? json(*report.macro_assd) : json(nullptr);
    return j;
}

json migration_to_json(const MigrationTable& t) {
    json rows = json::array();
    for (int i = 0; i < t.num_classes; ++i) {
        if (!t.row_present[i]) {
            rows.push_back(nullptr);
            continue;
        }
        json row = json::array();
        for (int j = 0; j < t.num_classes; ++j) {
            const MigrationCell& c = t.cell(i, j);
            row.push_back({c.pct_moved, c.pct_true_source, c.pct_true_dest});
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

void cmd_generate_data(const SfsConfig& cfg, const fs::path& out) {
    ensure_dir(out / "data");
    const SplitPlan plan[] = {
        {"source_train", cfg.data.source_train, false, 0},
        {"source_val", cfg.data.source_val, false, 1},
        {"target_train", cfg.data.target_train, true, 2},
        {"target_val", cfg.data.target_val, true, 3},
        {"target_test", cfg.data.target_test, true, 4},
    };
    for (const auto& split : plan) {
        SceneSpec scene = cfg.data.scene;
        scene.rng_seed = mix_seed(cfg.seeds.data, split.seed_tag);
        const ModalitySpec& modality =
            split.target ? cfg.data.target_modality : cfg.data.source_modality;
        const auto images = preprocess(generate_dataset(scene, modality, split.count));
        SplitManifest manifest;
        manifest.width = scene.width;
        manifest.height = scene.height;
        manifest.num_classes = scene.num_classes;
        manifest.count = split.count;
        manifest.format = cfg.data.format;
        manifest.seed = scene.rng_seed;
        manifest.config_hash = cfg.hash();
        write_split(out / "data" / split.name, images, manifest);
    }
    update_manifest(out, "generate_data",
                    {{"config_hash", cfg.hash()}, {"seeds", seeds_to_json(cfg.seeds)}});
}

void cmd_train_source(const SfsConfig& cfg, const fs::path& out) {
    const auto train = load_split_checked(out, "source_train");
    const auto val = load_split_checked(out, "source_val");
    const TrainResult result =
        train_source(cfg, train, val, cfg.seeds.weights, cfg.seeds.source_train);

    CheckpointMeta meta;
    meta.phase = "source";
    meta.step = cfg.source_training.iters;
    meta.optimizer = AdamParams{cfg.source_training.adam.lr, 0.9, 0.999,
                                cfg.source_training.adam.eps, cfg.source_training.adam.decay};
    meta.config_hash = cfg.hash();
    meta.seed = cfg.seeds.source_train;
    save_checkpoint(out / kSourceNet, result.net, meta);
    write_train_log(out / "source_train_log.csv", result.log);
    update_manifest(out, "train_source",
                    {{"config_hash", cfg.hash()},
                     {"seeds", seeds_to_json(cfg.seeds)},
                     {"param_count", result.net.param_count()},
                     {"best_val_dice", result.best_val_dice},
                     {"best_val_step", result.best_val_step}});
}

void cmd_estimate_gmm(const SfsConfig& cfg, const fs::path& out) {
    if (!fs::exists(out / kSourceNet))
        throw ConfigError("missing " + (out / kSourceNet).string() + "; run train-source first");
    const SegNetwork net = load_checkpoint(out / kSourceNet);
    const auto source_train = load_split_checked(out, "source_train");

    std::vector<std::size_t> counts;
    const InternalDistribution dist = estimate_internal(net, source_train, cfg, nullptr, &counts);
    save_gmm(out / kGmmFile, dist, cfg.hash(), cfg.seeds.gmm);
    update_manifest(out, "estimate_gmm",
                    {{"config_hash", cfg.hash()},
                     {"seeds", seeds_to_json(cfg.seeds)},
                     {"rho", cfg.gmm.rho},
                     {"omega", cfg.gmm.omega},
                     {"selected_pixels_per_class", counts}});
}

void cmd_adapt(const SfsConfig& cfg, const fs::path& out) {
    if (!fs::exists(out / kSourceNet))
        throw ConfigError("missing " + (out / kSourceNet).string() + "; run train-source first");
    if (!fs::exists(out / kGmmFile))
        throw ConfigError("missing " + (out / kGmmFile).string() + "; run estimate-gmm first");
    const SegNetwork net = load_checkpoint(out / kSourceNet);
    const InternalDistribution dist = load_gmm(out / kGmmFile);

    // adaptation never touches source data: only target pixels are loaded
    std::vector<Grid<double>> target;
    for (auto& img : load_split_checked(out, "target_train")) target.push_back(std::move(img.pixels));

    const AdaptResult result = adapt(net, dist, target, cfg);

    CheckpointMeta meta;
    meta.phase = "adapted";
    meta.step = cfg.adaptation.iters;
    meta.optimizer = AdamParams{cfg.adaptation.adam.lr, 0.9, 0.999, cfg.adaptation.adam.eps,
                                cfg.adaptation.adam.decay};
    meta.config_hash = cfg.hash();
    meta.seed = cfg.seeds.adapt;
    save_checkpoint(out / kAdaptedNet, result.net, meta);
    write_adapt_log(out / "loss.csv", result.log);
    update_manifest(out, "adapt",
                    {{"config_hash", cfg.hash()},
                     {"seeds", seeds_to_json(cfg.seeds)},
                     {"lambda", cfg.adaptation.lambda},
                     {"bank_seed_base", mix_seed(cfg.seeds.adapt, 0xba4cULL)}});
}

void cmd_evaluate(const SfsConfig& cfg, const fs::path& out) {
    const auto test = load_split_checked(out, "target_test");
    const bool have_source = fs::exists(out / kSourceNet);
    const bool have_adapted = fs::exists(out / kAdaptedNet);
    if (!have_source && !have_adapted)
        throw ConfigError("no checkpoint in " + out.string() + "; run train-source first");

    std::optional<SegNetwork> source_net, adapted_net;
    if (have_source) source_net = load_checkpoint(out / kSourceNet);
    if (have_adapted) adapted_net = load_checkpoint(out / kAdaptedNet);

    std::ofstream metrics(out / "metrics.csv");
    metrics << "phase,image_id,class,dice,assd\n";

    json report_json;
    report_json["config_hash"] = cfg.hash();
    report_json["seeds"] = seeds_to_json(cfg.seeds);
    report_json["assd_connectivity"] = 4;
    report_json["pixel_spacing"] = 1.0;

    std::optional<EvalReport> source_report;
    if (have_source) {
        source_report = evaluate(*source_net, test, nullptr);
        append_metrics_rows(metrics, "source", *source_report);
        report_json["source"] = report_to_json(*source_report);
    }

    if (have_adapted) {
        const EvalReport report =
            evaluate(*adapted_net, test, have_source ? &*source_net : nullptr);
        append_metrics_rows(metrics, "adapted", report);
        report_json["adapted"] = report_to_json(report);
        if (report.has_migration) {
            for (std::size_t i = 0; i < report.per_image_migration.size(); ++i)
                write_migration_csv(out / ("migration_" + std::to_string(i) + ".csv"),
                                    report.per_image_migration[i]);
            report_json["aggregate_migration"] = migration_to_json(report.aggregate_migration);
        }
        if (source_report && source_report->macro_dice && report.macro_dice)
            report_json["macro_dice_improvement"] = *report.macro_dice - *source_report->macro_dice;
        dump_embeddings(*adapted_net, test, cfg.eval.embed_pixels_per_image, cfg.seeds.eval,
                        out / "embeddings_post.csv");
    }
    if (have_source)
        dump_embeddings(*source_net, test, cfg.eval.embed_pixels_per_image, cfg.seeds.eval,
                        out / "embeddings_pre.csv");

    std::ofstream rj(out / "report.json");
    rj << report_json.dump(2) << "\n";
    update_manifest(out, "evaluate",
                    {{"config_hash", cfg.hash()}, {"seeds", seeds_to_json(cfg.seeds)}});
}

void cmd_ablate(const SfsConfig& cfg, const fs::path& out) {
    // shared prerequisites; the swept parameters never affect them
    if (!fs::exists(out / "data" / "source_train" / "manifest.json")) cmd_generate_data(cfg, out);
    if (!fs::exists(out / kSourceNet)) cmd_train_source(cfg, out);

    const SegNetwork net = load_checkpoint(out / kSourceNet);
    const auto source_train = load_split_checked(out, "source_train");
    const auto test = load_split_checked(out, "target_test");
    std::vector<Grid<double>> target;
    for (auto& img : load_split_checked(out, "target_train")) target.push_back(std::move(img.pixels));

    const int K = cfg.data.scene.num_classes;
    std::ofstream csv(out / ("ablation_" + cfg.ablation.kind + ".csv"));
    csv << "kind,value,status,selected_pixels,dice_macro,assd_macro,delta_dice_macro";
    for (int k = 0; k < K; ++k) csv << ",dice_" << k;
    for (int k = 0; k < K; ++k) csv << ",assd_" << k;
    csv << "\n";

    std::optional<double> first_dice;
    for (double value : cfg.ablation.values) {
        SfsConfig point = cfg;
        if (cfg.ablation.kind == "omega")
            point.gmm.omega = static_cast<int>(value);
        else if (cfg.ablation.kind == "rho")
            point.gmm.rho = value;
        else
            point.adaptation.finetune_classifier = value != 0.0;

        csv << cfg.ablation.kind << "," << fmt(value) << ",";
        try {
            std::vector<std::size_t> counts;
            const InternalDistribution dist =
                estimate_internal(net, source_train, point, nullptr, &counts);
            const AdaptResult adapted = adapt(net, dist, target, point);
            const EvalReport report = evaluate(adapted.net, test, &net);

            const fs::path point_dir =
                out / "ablation" / (cfg.ablation.kind + "_" + fmt(value));
            ensure_dir(point_dir);
            save_gmm(point_dir / kGmmFile, dist, point.hash(), point.seeds.gmm);
            CheckpointMeta meta;
            meta.phase = "adapted";
            meta.step = point.adaptation.iters;
            meta.optimizer = AdamParams{point.adaptation.adam.lr, 0.9, 0.999,
                                        point.adaptation.adam.eps, point.adaptation.adam.decay};
            meta.config_hash = point.hash();
            meta.seed = point.seeds.adapt;
            save_checkpoint(point_dir / kAdaptedNet, adapted.net, meta);

            const std::size_t selected =
                std::accumulate(counts.begin(), counts.end(), std::size_t{0});
            const double dice_macro = report.macro_dice.value_or(0.0);
            if (!first_dice) first_dice = dice_macro;
            csv << "ok," << selected << "," << fmt_opt(report.macro_dice) << ","
                << fmt_opt(report.macro_assd) << "," << fmt(dice_macro - *first_dice);
            for (int k = 0; k < K; ++k) csv << "," << fmt_opt(report.mean_dice[k]);
            for (int k = 0; k < K; ++k) csv << "," << fmt_opt(report.mean_assd[k]);
            csv << "\n";
        } catch (const std::exception& e) {
            std::string what = e.what();
            for (char& c : what)
                if (c == ',' || c == '\n') c = ' ';
            csv << "failed,,,,,";
            for (int k = 0; k < 2 * K; ++k) csv << ",";
            csv << what << "\n";
        }
    }
    update_manifest(out, "ablate",
                    {{"config_hash", cfg.hash()},
                     {"seeds", seeds_to_json(cfg.seeds)},
                     {"kind", cfg.ablation.kind},
                     {"values", cfg.ablation.values}});
}

}  // namespace sfs
