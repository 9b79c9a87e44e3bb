#include "sfs/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>

namespace sfs {

using json = nlohmann::ordered_json;

namespace {

// rejects keys that are not in the allowed set
void check_keys(const json& j, const std::string& scope,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: " + scope + " must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok)
            throw ConfigError("config: unknown key \"" + (scope.empty() ? key : scope + "." + key) +
                              "\"");
    }
}

template <typename T>
void get_to(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) {
        try {
            it->get_to(out);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: bad value for \"") + key + "\": " + e.what());
        }
    }
}

void parse_modality(const json& j, const std::string& scope, ModalitySpec& m) {
    check_keys(j, scope, {"intensity_map", "noise_std", "blur_radius", "bias_field_amplitude"});
    if (auto it = j.find("intensity_map"); it != j.end()) {
        m.intensity_map.clear();
        for (const auto& pt : *it) {
            if (!pt.is_array() || pt.size() != 2)
                throw ConfigError("config: " + scope + ".intensity_map entries must be [x, y]");
            m.intensity_map.emplace_back(pt[0].get<double>(), pt[1].get<double>());
        }
    }
    get_to(j, "noise_std", m.noise_std);
    get_to(j, "blur_radius", m.blur_radius);
    get_to(j, "bias_field_amplitude", m.bias_field_amplitude);
}

void parse_augment(const json& j, const std::string& scope, AugmentSpec& a) {
    check_keys(j, scope,
               {"rotation_prob", "rotation_max_deg", "negate_prob", "noise_prob", "noise_std",
                "crop_prob", "crop_min_area"});
    get_to(j, "rotation_prob", a.rotation_prob);
    get_to(j, "rotation_max_deg", a.rotation_max_deg);
    get_to(j, "negate_prob", a.negate_prob);
    get_to(j, "noise_prob", a.noise_prob);
    get_to(j, "noise_std", a.noise_std);
    get_to(j, "crop_prob", a.crop_prob);
    get_to(j, "crop_min_area", a.crop_min_area);
}

void parse_adam(const json& j, const std::string& scope, AdamConfig& a) {
    check_keys(j, scope, {"lr", "eps", "decay"});
    get_to(j, "lr", a.lr);
    get_to(j, "eps", a.eps);
    get_to(j, "decay", a.decay);
}

json modality_to_json(const ModalitySpec& m) {
    json pts = json::array();
    for (const auto& [x, y] : m.intensity_map) pts.push_back({x, y});
    return {{"intensity_map", pts},
            {"noise_std", m.noise_std},
            {"blur_radius", m.blur_radius},
            {"bias_field_amplitude", m.bias_field_amplitude}};
}

json augment_to_json(const AugmentSpec& a) {
    return {{"rotation_prob", a.rotation_prob}, {"rotation_max_deg", a.rotation_max_deg},
            {"negate_prob", a.negate_prob},     {"noise_prob", a.noise_prob},
            {"noise_std", a.noise_std},         {"crop_prob", a.crop_prob},
            {"crop_min_area", a.crop_min_area}};
}

json adam_to_json(const AdamConfig& a) {
    return {{"lr", a.lr}, {"eps", a.eps}, {"decay", a.decay}};
}

ModalitySpec default_target_modality() {
    ModalitySpec m;
    // order-inverting map with warped spacing, plus blur, bias and noise:
    // same geometry renders with a substantially different appearance
    m.intensity_map = {{0.0, 1.0}, {0.35, 0.72}, {0.65, 0.32}, {1.0, 0.0}};
    m.noise_std = 0.05;
    m.blur_radius = 1;
    m.bias_field_amplitude = 0.15;
    return m;
}

ModalitySpec default_source_modality() {
    ModalitySpec m;
    m.noise_std = 0.03;
    return m;
}

}  // namespace

SfsConfig SfsConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }

    SfsConfig cfg;
    cfg.data.source_modality = default_source_modality();
    cfg.data.target_modality = default_target_modality();

    check_keys(j, "",
               {"data", "network", "source_training", "gmm", "adaptation", "eval", "ablation",
                "seeds"});

    if (auto it = j.find("data"); it != j.end()) {
        const json& d = *it;
        check_keys(d, "data",
                   {"width", "height", "num_classes", "shapes_min", "shapes_max", "source_train",
                    "source_val", "target_train", "target_val", "target_test", "format",
                    "source_modality", "target_modality", "augment"});
        get_to(d, "width", cfg.data.scene.width);
        get_to(d, "height", cfg.data.scene.height);
        get_to(d, "num_classes", cfg.data.scene.num_classes);
        get_to(d, "shapes_min", cfg.data.scene.shapes_min);
        get_to(d, "shapes_max", cfg.data.scene.shapes_max);
        get_to(d, "source_train", cfg.data.source_train);
        get_to(d, "source_val", cfg.data.source_val);
        get_to(d, "target_train", cfg.data.target_train);
        get_to(d, "target_val", cfg.data.target_val);
        get_to(d, "target_test", cfg.data.target_test);
        get_to(d, "format", cfg.data.format);
        if (auto m = d.find("source_modality"); m != d.end())
            parse_modality(*m, "data.source_modality", cfg.data.source_modality);
        if (auto m = d.find("target_modality"); m != d.end())
            parse_modality(*m, "data.target_modality", cfg.data.target_modality);
        if (auto a = d.find("augment"); a != d.end())
            parse_augment(*a, "data.augment", cfg.data.augment);
    }

    if (auto it = j.find("network"); it != j.end()) {
        check_keys(*it, "network", {"encoder_channels", "latent_dim"});
        get_to(*it, "encoder_channels", cfg.network.encoder_channels);
        get_to(*it, "latent_dim", cfg.network.latent_dim);
    }

    if (auto it = j.find("source_training"); it != j.end()) {
        check_keys(*it, "source_training",
                   {"iters", "batch_size", "adam", "val_every", "class_weighted_ce", "augment"});
        get_to(*it, "iters", cfg.source_training.iters);
        get_to(*it, "batch_size", cfg.source_training.batch_size);
        get_to(*it, "val_every", cfg.source_training.val_every);
        get_to(*it, "class_weighted_ce", cfg.source_training.class_weighted_ce);
        get_to(*it, "augment", cfg.source_training.augment);
        if (auto a = it->find("adam"); a != it->end())
            parse_adam(*a, "source_training.adam", cfg.source_training.adam);
    }

    if (auto it = j.find("gmm"); it != j.end()) {
        check_keys(*it, "gmm", {"rho", "omega", "eps_reg", "max_iters", "tol", "max_pixels_per_class"});
        get_to(*it, "rho", cfg.gmm.rho);
        get_to(*it, "omega", cfg.gmm.omega);
        get_to(*it, "eps_reg", cfg.gmm.eps_reg);
        get_to(*it, "max_iters", cfg.gmm.max_iters);
        get_to(*it, "tol", cfg.gmm.tol);
        get_to(*it, "max_pixels_per_class", cfg.gmm.max_pixels_per_class);
    }

    if (auto it = j.find("adaptation"); it != j.end()) {
        check_keys(*it, "adaptation",
                   {"iters", "batch_size", "lambda", "pixels_per_batch", "projections", "adam",
                    "finetune_classifier", "augment"});
        get_to(*it, "iters", cfg.adaptation.iters);
        get_to(*it, "batch_size", cfg.adaptation.batch_size);
        get_to(*it, "lambda", cfg.adaptation.lambda);
        get_to(*it, "pixels_per_batch", cfg.adaptation.pixels_per_batch);
        get_to(*it, "projections", cfg.adaptation.projections);
        get_to(*it, "finetune_classifier", cfg.adaptation.finetune_classifier);
        get_to(*it, "augment", cfg.adaptation.augment);
        if (auto a = it->find("adam"); a != it->end())
            parse_adam(*a, "adaptation.adam", cfg.adaptation.adam);
    }

    if (auto it = j.find("eval"); it != j.end()) {
        check_keys(*it, "eval", {"embed_pixels_per_image"});
        get_to(*it, "embed_pixels_per_image", cfg.eval.embed_pixels_per_image);
    }

    if (auto it = j.find("ablation"); it != j.end()) {
        check_keys(*it, "ablation", {"kind", "values"});
        get_to(*it, "kind", cfg.ablation.kind);
        get_to(*it, "values", cfg.ablation.values);
    }

    if (auto it = j.find("seeds"); it != j.end()) {
        check_keys(*it, "seeds", {"data", "weights", "source_train", "gmm", "adapt", "eval"});
        get_to(*it, "data", cfg.seeds.data);
        get_to(*it, "weights", cfg.seeds.weights);
        get_to(*it, "source_train", cfg.seeds.source_train);
        get_to(*it, "gmm", cfg.seeds.gmm);
        get_to(*it, "adapt", cfg.seeds.adapt);
        get_to(*it, "eval", cfg.seeds.eval);
    }

    cfg.data.scene.rng_seed = cfg.seeds.data;
    cfg.validate();
    return cfg;
}

SfsConfig SfsConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string SfsConfig::to_json_text() const {
    json j;
    j["data"] = {{"width", data.scene.width},
                 {"height", data.scene.height},
                 {"num_classes", data.scene.num_classes},
                 {"shapes_min", data.scene.shapes_min},
                 {"shapes_max", data.scene.shapes_max},
                 {"source_train", data.source_train},
                 {"source_val", data.source_val},
                 {"target_train", data.target_train},
                 {"target_val", data.target_val},
                 {"target_test", data.target_test},
                 {"format", data.format},
                 {"source_modality", modality_to_json(data.source_modality)},
                 {"target_modality", modality_to_json(data.target_modality)},
                 {"augment", augment_to_json(data.augment)}};
    j["network"] = {{"encoder_channels", network.encoder_channels},
                    {"latent_dim", network.latent_dim}};
    j["source_training"] = {{"iters", source_training.iters},
                            {"batch_size", source_training.batch_size},
                            {"adam", adam_to_json(source_training.adam)},
                            {"val_every", source_training.val_every},
                            {"class_weighted_ce", source_training.class_weighted_ce},
                            {"augment", source_training.augment}};
    j["gmm"] = {{"rho", gmm.rho},
                {"omega", gmm.omega},
                {"eps_reg", gmm.eps_reg},
                {"max_iters", gmm.max_iters},
                {"tol", gmm.tol},
                {"max_pixels_per_class", gmm.max_pixels_per_class}};
    j["adaptation"] = {{"iters", adaptation.iters},
                       {"batch_size", adaptation.batch_size},
                       {"lambda", adaptation.lambda},
                       {"pixels_per_batch", adaptation.pixels_per_batch},
                       {"projections", adaptation.projections},
                       {"adam", adam_to_json(adaptation.adam)},
                       {"finetune_classifier", adaptation.finetune_classifier},
                       {"augment", adaptation.augment}};
    j["eval"] = {{"embed_pixels_per_image", eval.embed_pixels_per_image}};
    j["ablation"] = {{"kind", ablation.kind}, {"values", ablation.values}};
    j["seeds"] = {{"data", seeds.data},       {"weights", seeds.weights},
                  {"source_train", seeds.source_train}, {"gmm", seeds.gmm},
                  {"adapt", seeds.adapt},     {"eval", seeds.eval}};
    return j.dump(2) + "\n";
}

std::string SfsConfig::hash() const {
    const std::string text = to_json_text();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void SfsConfig::override_master_seed(std::uint64_t master) {
    seeds.data = mix_seed(master, 1);
    seeds.weights = mix_seed(master, 2);
    seeds.source_train = mix_seed(master, 3);
    seeds.gmm = mix_seed(master, 4);
    seeds.adapt = mix_seed(master, 5);
    seeds.eval = mix_seed(master, 6);
    data.scene.rng_seed = seeds.data;
}

void SfsConfig::validate() const {
    if (gmm.rho < 0.0 || gmm.rho >= 1.0) throw ConfigError("config: gmm.rho must be in [0, 1)");
    if (gmm.omega < 1) throw ConfigError("config: gmm.omega must be >= 1");
    if (gmm.eps_reg <= 0.0) throw ConfigError("config: gmm.eps_reg must be positive");
    if (adaptation.lambda < 0.0) throw ConfigError("config: adaptation.lambda must be >= 0");
    if (network.encoder_channels < 1 || network.latent_dim < 1)
        throw ConfigError("config: network dimensions must be positive");
    if (source_training.iters < 1 || adaptation.iters < 1)
        throw ConfigError("config: iteration counts must be positive");
    if (source_training.batch_size < 1 || adaptation.batch_size < 1)
        throw ConfigError("config: batch sizes must be positive");
    if (adaptation.pixels_per_batch < 1 || adaptation.projections < 1)
        throw ConfigError("config: pixels_per_batch and projections must be positive");
    if (data.format != "binary" && data.format != "csv")
        throw ConfigError("config: data.format must be \"binary\" or \"csv\"");
    if (data.source_train < 1 || data.source_val < 1 || data.target_train < 1 ||
        data.target_val < 1 || data.target_test < 1)
        throw ConfigError("config: split counts must be positive");
    if (ablation.kind != "omega" && ablation.kind != "rho" && ablation.kind != "finetune")
        throw ConfigError("config: ablation.kind must be omega, rho or finetune");
    if (ablation.values.empty()) throw ConfigError("config: ablation.values must be nonempty");
}

}  // namespace sfs
