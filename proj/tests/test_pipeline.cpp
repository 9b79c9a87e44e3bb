#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sfs/pipeline.hpp"

using namespace sfs;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "sfs_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// small end-to-end configuration that runs in seconds
SfsConfig mini_config() {
    SfsConfig cfg = SfsConfig::from_json_text(R"({
      "data": {"width": 16, "height": 16, "num_classes": 3,
               "source_train": 8, "source_val": 2, "target_train": 8,
               "target_val": 2, "target_test": 4},
      "network": {"encoder_channels": 6, "latent_dim": 4},
      "source_training": {"iters": 120, "batch_size": 2, "val_every": 40},
      "gmm": {"rho": 0.0, "omega": 1, "max_pixels_per_class": 2000},
      "adaptation": {"iters": 40, "batch_size": 2, "pixels_per_batch": 128,
                      "projections": 16}
    })");
    return cfg;
}

std::vector<LabeledImage> class_covering_images(int num_classes) {
    std::vector<LabeledImage> out;
    Rng rng(500);
    for (int i = 0; i < 2; ++i) {
        LabeledImage img;
        img.pixels = Grid<double>(8, 8);
        img.mask = Mask(8, 8);
        for (std::size_t p = 0; p < img.mask.data.size(); ++p) {
            img.mask.data[p] = static_cast<std::uint8_t>((p + i) % num_classes);
            img.pixels.data[p] = rng.normal();
        }
        out.push_back(std::move(img));
    }
    return out;
}

}  // namespace

TEST_CASE("config parsing") {
    SUBCASE("empty document yields the defaults") {
        const SfsConfig cfg = SfsConfig::from_json_text("{}");
        CHECK(cfg.gmm.rho == doctest::Approx(0.97));
        CHECK(cfg.gmm.omega == 3);
        CHECK(cfg.adaptation.lambda == doctest::Approx(0.5));
        CHECK(cfg.adaptation.finetune_classifier);
        CHECK(cfg.network.latent_dim == 8);
        CHECK(cfg.source_training.adam.lr == doctest::Approx(1e-4));
        CHECK(cfg.source_training.adam.eps == doctest::Approx(1e-6));
        CHECK(cfg.adaptation.adam.lr == doctest::Approx(5e-5));
        CHECK(cfg.adaptation.adam.eps == doctest::Approx(1e-1));
    }
    SUBCASE("unknown keys are rejected at any depth") {
        CHECK_THROWS_AS(SfsConfig::from_json_text(R"({"bogus": 1})"), ConfigError);
        CHECK_THROWS_AS(SfsConfig::from_json_text(R"({"data": {"widht": 32}})"), ConfigError);
        CHECK_THROWS_AS(SfsConfig::from_json_text(R"({"gmm": {"rho": 0.9, "extra": true}})"),
                        ConfigError);
    }
    SUBCASE("invalid values are rejected") {
        CHECK_THROWS_AS(SfsConfig::from_json_text(R"({"gmm": {"rho": 1.0}})"), ConfigError);
        CHECK_THROWS_AS(SfsConfig::from_json_text(R"({"gmm": {"omega": 0}})"), ConfigError);
        CHECK_THROWS_AS(SfsConfig::from_json_text(R"({"adaptation": {"lambda": -1}})"), ConfigError);
        CHECK_THROWS_AS(SfsConfig::from_json_text(R"({"data": {"format": "xml"}})"), ConfigError);
        CHECK_THROWS_AS(SfsConfig::from_json_text("not json"), ConfigError);
    }
    SUBCASE("canonical dump round-trips and hashes stably") {
        const SfsConfig a = SfsConfig::from_json_text(R"({"gmm": {"omega": 5}})");
        const SfsConfig b = SfsConfig::from_json_text(a.to_json_text());
        CHECK(a.hash() == b.hash());
        CHECK(a.hash() != SfsConfig::from_json_text("{}").hash());
    }
    SUBCASE("master seed override rederives every seed") {
        SfsConfig a = SfsConfig::from_json_text("{}");
        SfsConfig b = a;
        a.override_master_seed(42);
        b.override_master_seed(42);
        CHECK(a.seeds.data == b.seeds.data);
        CHECK(a.seeds.adapt == b.seeds.adapt);
        b.override_master_seed(43);
        CHECK(a.seeds.data != b.seeds.data);
        CHECK(a.data.scene.rng_seed == a.seeds.data);
    }
}

TEST_CASE("image container round-trips") {
    const fs::path dir = fresh_dir("io");
    SceneSpec spec;
    spec.rng_seed = 5;
    ModalitySpec mod;
    mod.noise_std = 0.2;
    const auto imgs = preprocess(generate_dataset(spec, mod, 2));

    SUBCASE("binary container is float32-exact") {
        write_image_sfsd(dir / "a.sfsd", imgs[0]);
        const LabeledImage back = read_image_sfsd(dir / "a.sfsd");
        CHECK(back.mask.data == imgs[0].mask.data);
        REQUIRE(back.pixels.data.size() == imgs[0].pixels.data.size());
        for (std::size_t p = 0; p < back.pixels.data.size(); ++p)
            CHECK(back.pixels.data[p] ==
                  static_cast<double>(static_cast<float>(imgs[0].pixels.data[p])));
    }
    SUBCASE("csv pair round-trips") {
        write_image_csv(dir / "a.pixels.csv", dir / "a.mask.csv", imgs[0]);
        const LabeledImage back = read_image_csv(dir / "a.pixels.csv", dir / "a.mask.csv");
        CHECK(back.mask.data == imgs[0].mask.data);
        for (std::size_t p = 0; p < back.pixels.data.size(); ++p)
            CHECK(back.pixels.data[p] == imgs[0].pixels.data[p]);
    }
    SUBCASE("split directory with manifest") {
        SplitManifest m;
        m.width = spec.width;
        m.height = spec.height;
        m.num_classes = spec.num_classes;
        m.count = 2;
        m.format = "binary";
        m.seed = 5;
        m.config_hash = "abc";
        write_split(dir / "split", imgs, m);
        const auto back = read_split(dir / "split");
        REQUIRE(back.size() == 2);
        CHECK(back[1].mask.data == imgs[1].mask.data);
        const SplitManifest rm = read_split_manifest(dir / "split");
        CHECK(rm.config_hash == "abc");
        CHECK(rm.format == "binary");
    }
    SUBCASE("corrupt magic is rejected") {
        std::ofstream bad(dir / "bad.sfsd", std::ios::binary);
        bad << "NOPElolol";
        bad.close();
        CHECK_THROWS_AS(read_image_sfsd(dir / "bad.sfsd"), ConfigError);
    }
}

TEST_CASE("checkpoint save/load round-trip") {
    const fs::path dir = fresh_dir("ckpt");
    const SegNetwork net = SegNetwork::init(5, 4, 3, 77);
    CheckpointMeta meta;
    meta.phase = "source";
    meta.step = 123;
    meta.optimizer = AdamParams{1e-4, 0.9, 0.999, 1e-6, 1e-6};
    meta.config_hash = "deadbeef";
    meta.seed = 9;
    save_checkpoint(dir / "net.json", net, meta);

    CheckpointMeta back_meta;
    const SegNetwork back = load_checkpoint(dir / "net.json", &back_meta);
    CHECK(back.encoder_channels == 5);
    CHECK(back.latent_dim == 4);
    CHECK(back.num_classes == 3);
    CHECK(back_meta.phase == "source");
    CHECK(back_meta.step == 123);
    CHECK(back_meta.config_hash == "deadbeef");
    CHECK(back_meta.optimizer.eps == doctest::Approx(1e-6));

    // parameters round-trip exactly at float32 resolution: saving the
    // reloaded network reproduces the blob byte for byte
    save_checkpoint(dir / "net2.json", back, meta);
    CHECK(slurp(dir / "net.bin") == slurp(dir / "net2.bin"));
}

TEST_CASE("gmm file round-trip preserves densities") {
    const fs::path dir = fresh_dir("gmmio");
    Rng rng(8);
    std::vector<double> cloud;
    for (int i = 0; i < 300; ++i) {
        cloud.push_back(rng.normal());
        cloud.push_back(2.0 + 0.5 * rng.normal());
    }
    SelectedPixelSet set;
    set.dim = 2;
    set.rho = 0.5;
    set.per_class = {cloud};
    set.counts = {150};
    EmOptions opts;
    opts.components_per_class = 2;
    const InternalDistribution dist = fit_em(set, opts);

    save_gmm(dir / "gmm.json", dist, "cafe", 4);
    const InternalDistribution back = load_gmm(dir / "gmm.json");
    CHECK(back.confidence_threshold == doctest::Approx(0.5));
    for (int i = 0; i < 100; ++i) {
        const double z[2] = {rng.normal() * 3.0, rng.normal() * 3.0};
        CHECK(std::abs(log_density(dist, z) - log_density(back, z)) < 1e-9);
    }
}

TEST_CASE("inverse frequency weights") {
    std::vector<LabeledImage> imgs(1);
    imgs[0].pixels = Grid<double>(4, 2, 0.0);
    imgs[0].mask = Mask(4, 2);
    imgs[0].mask.data = {0, 0, 0, 0, 0, 0, 1, 2};  // 6/8, 1/8, 1/8
    const auto w = inverse_frequency_weights(imgs, 3);
    CHECK(w[0] == doctest::Approx(8.0 / (3.0 * 6.0)));
    CHECK(w[1] == doctest::Approx(8.0 / 3.0));
    CHECK(w[2] == doctest::Approx(8.0 / 3.0));
}

TEST_CASE("adaptation no-op and classifier-only modes") {
    SfsConfig cfg = mini_config();
    cfg.adaptation.iters = 5;
    cfg.adaptation.batch_size = 1;
    cfg.adaptation.pixels_per_batch = 64;

    const SegNetwork net = SegNetwork::init(6, 4, 3, 31);
    // any positive-definite mixture in the right dimension works here
    InternalDistribution dist;
    dist.num_classes = 3;
    dist.components_per_class = 1;
    dist.dim = 4;
    dist.weights = {1.0, 1.0, 1.0};
    dist.means.assign(12, 0.5);
    dist.covs.assign(3 * 16, 0.0);
    for (int c = 0; c < 3; ++c)
        for (int f = 0; f < 4; ++f) dist.covs[c * 16 + f * 4 + f] = 1.0;
    dist.finalize();

    std::vector<Grid<double>> target;
    Rng rng(32);
    for (int i = 0; i < 3; ++i) {
        Grid<double> img(16, 16);
        for (double& v : img.data) v = rng.normal();
        target.push_back(std::move(img));
    }

    SUBCASE("lambda zero with frozen classifier changes nothing") {
        cfg.adaptation.lambda = 0.0;
        cfg.adaptation.finetune_classifier = false;
        AdaptResult res = adapt(net, dist, target, cfg);
        auto a = param_refs(res.net);
        auto b = param_refs(const_cast<SegNetwork&>(net));
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].data == *b[i].data);
        for (const auto& row : res.log) {
            CHECK(row.ce == 0.0);
            CHECK(row.total == 0.0);
        }
    }
    SUBCASE("lambda zero with fine-tuning moves only the classifier") {
        cfg.adaptation.lambda = 0.0;
        cfg.adaptation.finetune_classifier = true;
        const AdaptResult res = adapt(net, dist, target, cfg);
        CHECK(res.net.conv1_w == net.conv1_w);
        CHECK(res.net.conv2_w == net.conv2_w);
        CHECK(res.net.conv3_w == net.conv3_w);
        CHECK(res.net.conv1_b == net.conv1_b);
        CHECK(res.net.cls_w != net.cls_w);
    }
    SUBCASE("alignment term moves encoder and decoder") {
        cfg.adaptation.lambda = 0.5;
        cfg.adaptation.finetune_classifier = false;
        const AdaptResult res = adapt(net, dist, target, cfg);
        CHECK(res.net.conv1_w != net.conv1_w);
        CHECK(res.net.conv3_w != net.conv3_w);
        CHECK(res.net.cls_w == net.cls_w);  // nothing reaches the classifier
        for (const auto& row : res.log) CHECK(row.swd >= 0.0);
    }
    SUBCASE("dimension mismatch is rejected") {
        InternalDistribution wrong = dist;
        wrong.dim = 3;
        CHECK_THROWS_AS(adapt(net, wrong, target, cfg), std::invalid_argument);
    }
}

TEST_CASE("estimate_internal with rho zero and one component hits the latent class means") {
    SfsConfig cfg = mini_config();
    cfg.gmm.rho = 0.0;
    cfg.gmm.omega = 1;
    cfg.data.scene.num_classes = 3;
    const SegNetwork net = SegNetwork::init(cfg.network.encoder_channels, cfg.network.latent_dim,
                                            3, 51);
    const auto images = class_covering_images(3);

    std::vector<std::size_t> counts;
    const InternalDistribution dist = estimate_internal(net, images, cfg, nullptr, &counts);

    // oracle: per-class mean of every pixel latent
    const int F = cfg.network.latent_dim;
    std::vector<std::vector<double>> sums(3, std::vector<double>(F, 0.0));
    std::vector<std::size_t> n(3, 0);
    for (const auto& img : images) {
        const ForwardPass fp = forward(net, img.pixels);
        for (std::size_t p = 0; p < fp.latent.pixel_count(); ++p) {
            const int k = img.mask.data[p];
            for (int f = 0; f < F; ++f) sums[k][f] += fp.latent.v[p * F + f];
            ++n[k];
        }
    }
    for (int k = 0; k < 3; ++k) {
        CHECK(counts[k] == n[k]);
        for (int f = 0; f < F; ++f)
            CHECK(dist.mean(k)[f] == doctest::Approx(sums[k][f] / n[k]).epsilon(1e-9));
    }
}

TEST_CASE("starvation carries a remediation hint") {
    SfsConfig cfg = mini_config();
    cfg.gmm.rho = 0.999;
    SegNetwork net = SegNetwork::init(cfg.network.encoder_channels, cfg.network.latent_dim, 3, 52);
    std::fill(net.cls_w.begin(), net.cls_w.end(), 0.0);
    std::fill(net.cls_b.begin(), net.cls_b.end(), 0.0);
    const auto images = class_covering_images(3);
    try {
        estimate_internal(net, images, cfg);
        FAIL("expected starvation");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("lowering rho") != std::string::npos);
    }
}

TEST_CASE("degenerate single-class training reaches loss zero and dice one") {
    SfsConfig cfg = mini_config();
    cfg.data.scene.num_classes = 2;
    cfg.source_training.iters = 400;
    cfg.source_training.val_every = 100;
    cfg.source_training.augment = false;
    cfg.source_training.adam.lr = 3e-3;  // desk-scale rate for a 400-step fit
    cfg.network.encoder_channels = 4;
    cfg.network.latent_dim = 3;

    std::vector<LabeledImage> train, val;
    Rng rng(53);
    for (int i = 0; i < 6; ++i) {
        LabeledImage img;
        img.pixels = Grid<double>(8, 8);
        for (double& v : img.pixels.data) v = rng.normal();
        img.mask = Mask(8, 8, 1);  // every pixel carries the same label
        (i < 4 ? train : val).push_back(std::move(img));
    }
    const TrainResult res = train_source(cfg, train, val, 1, 2);
    CHECK(res.best_val_dice == doctest::Approx(1.0));
    CHECK(res.log.back().loss < 0.05);
}

TEST_CASE("mini pipeline end to end") {
    const SfsConfig cfg = mini_config();
    const fs::path ws = fresh_dir("mini_ws");

    cmd_generate_data(cfg, ws);
    for (const char* split :
         {"source_train", "source_val", "target_train", "target_val", "target_test"})
        CHECK(fs::exists(ws / "data" / split / "manifest.json"));

    // generated data is preprocessed: z-scored (mean drifts only through
    // clipping) and clipped to [-3, 3]
    const auto sample_split = read_split(ws / "data" / "source_train");
    for (const auto& img : sample_split) {
        double mean = 0.0;
        for (double v : img.pixels.data) {
            CHECK(std::abs(v) <= 3.0);
            mean += v;
        }
        CHECK(std::abs(mean / img.pixels.data.size()) < 0.05);
    }

    cmd_train_source(cfg, ws);
    CHECK(fs::exists(ws / "source_net.json"));
    CHECK(fs::exists(ws / "source_train_log.csv"));

    cmd_estimate_gmm(cfg, ws);
    CHECK(fs::exists(ws / "gmm.json"));

    // source-free guarantee: physically remove the source splits
    fs::remove_all(ws / "data" / "source_train");
    fs::remove_all(ws / "data" / "source_val");
    cmd_adapt(cfg, ws);
    CHECK(fs::exists(ws / "adapted_net.json"));
    CHECK(fs::exists(ws / "loss.csv"));

    cmd_evaluate(cfg, ws);
    CHECK(fs::exists(ws / "metrics.csv"));
    CHECK(fs::exists(ws / "report.json"));
    CHECK(fs::exists(ws / "embeddings_pre.csv"));
    CHECK(fs::exists(ws / "embeddings_post.csv"));
    CHECK(fs::exists(ws / "migration_0.csv"));

    const std::string metrics = slurp(ws / "metrics.csv");
    CHECK(metrics.rfind("phase,image_id,class,dice,assd\n", 0) == 0);
    CHECK(metrics.find("source,") != std::string::npos);
    CHECK(metrics.find("adapted,") != std::string::npos);

    // loss.csv carries the pinned header
    CHECK(slurp(ws / "loss.csv").rfind("step,ce,swd,total\n", 0) == 0);
}

TEST_CASE("two identical runs are bitwise identical") {
    const SfsConfig cfg = mini_config();
    const fs::path w1 = fresh_dir("det_a");
    const fs::path w2 = fresh_dir("det_b");
    for (const fs::path& ws : {w1, w2}) {
        cmd_generate_data(cfg, ws);
        cmd_train_source(cfg, ws);
        cmd_estimate_gmm(cfg, ws);
        cmd_adapt(cfg, ws);
        cmd_evaluate(cfg, ws);
    }
    for (const char* f : {"metrics.csv", "source_net.bin", "adapted_net.bin", "loss.csv",
                          "gmm.json", "source_net.json", "adapted_net.json", "report.json"})
        CHECK(slurp(w1 / f) == slurp(w2 / f));
}

TEST_CASE("evaluate is deterministic and self-consistent") {
    const SegNetwork net = SegNetwork::init(4, 3, 3, 61);
    const auto images = class_covering_images(3);
    const EvalReport a = evaluate(net, images, nullptr);
    const EvalReport b = evaluate(net, images, nullptr);
    REQUIRE(a.macro_dice.has_value() == b.macro_dice.has_value());
    if (a.macro_dice) CHECK(*a.macro_dice == *b.macro_dice);

    // perfect predictor: evaluate a net against its own argmax output
    const EvalReport self = evaluate(net, images, &net);
    REQUIRE(self.has_migration);
    for (int i = 0; i < 3; ++i) {
        if (!self.aggregate_migration.row_present[i]) continue;
        CHECK(self.aggregate_migration.cell(i, i).pct_moved == doctest::Approx(100.0));
        double row = 0.0;
        for (int j = 0; j < 3; ++j) row += self.aggregate_migration.cell(i, j).pct_moved;
        CHECK(row == doctest::Approx(100.0).epsilon(1e-6));
    }
}

TEST_CASE("csv data format is an accepted alternative") {
    SfsConfig cfg = mini_config();
    cfg.data.format = "csv";
    const fs::path ws = fresh_dir("csv_ws");
    cmd_generate_data(cfg, ws);
    CHECK(fs::exists(ws / "data" / "source_train" / "img_00000.pixels.csv"));
    const auto imgs = read_split(ws / "data" / "source_train");
    CHECK(imgs.size() == static_cast<std::size_t>(cfg.data.source_train));
}
