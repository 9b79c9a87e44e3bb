#include "sfs/io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sfs {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint32_t kSfsdVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

float get_f32(std::istream& is) {
    const std::uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("bad JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

std::string image_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d", index);
    return buf;
}

}  // namespace

void write_image_sfsd(const fs::path& path, const LabeledImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.write("SFSD", 4);
    put_u32(out, kSfsdVersion);
    put_u32(out, static_cast<std::uint32_t>(image.pixels.width));
    put_u32(out, static_cast<std::uint32_t>(image.pixels.height));
    for (double v : image.pixels.data) put_f32(out, static_cast<float>(v));
    out.write(reinterpret_cast<const char*>(image.mask.data.data()),
              static_cast<std::streamsize>(image.mask.data.size()));
    if (!out) throw ConfigError("write failed: " + path.string());
}

LabeledImage read_image_sfsd(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SFSD", 4) != 0)
        throw ConfigError("not an SFSD file: " + path.string());
    const std::uint32_t version = get_u32(in);
    if (version != kSfsdVersion)
        throw ConfigError("unsupported SFSD version in " + path.string());
    const std::uint32_t w = get_u32(in), h = get_u32(in);
    if (w == 0 || h == 0 || w > 4096 || h > 4096)
        throw ConfigError("implausible dimensions in " + path.string());

    LabeledImage img;
    img.pixels = Grid<double>(static_cast<int>(w), static_cast<int>(h));
    img.mask = Mask(static_cast<int>(w), static_cast<int>(h));
    for (double& v : img.pixels.data) v = static_cast<double>(get_f32(in));
    in.read(reinterpret_cast<char*>(img.mask.data.data()),
            static_cast<std::streamsize>(img.mask.data.size()));
    if (!in) throw ConfigError("truncated SFSD file: " + path.string());
    return img;
}

void write_image_csv(const fs::path& pixels_path, const fs::path& mask_path,
                     const LabeledImage& image) {
    std::ofstream px(pixels_path);
    std::ofstream mk(mask_path);
    if (!px || !mk) throw ConfigError("cannot write CSV image files");
    char buf[40];
    for (int y = 0; y < image.pixels.height; ++y) {
        for (int x = 0; x < image.pixels.width; ++x) {
            std::snprintf(buf, sizeof(buf), "%.17g", image.pixels(x, y));
            px << (x ? "," : "") << buf;
            mk << (x ? "," : "") << static_cast<int>(image.mask(x, y));
        }
        px << "\n";
        mk << "\n";
    }
}

LabeledImage read_image_csv(const fs::path& pixels_path, const fs::path& mask_path) {
    auto read_rows = [](const fs::path& p) {
        std::ifstream in(p);
        if (!in) throw ConfigError("cannot open " + p.string());
        std::vector<std::vector<double>> rows;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<double> row;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
            rows.push_back(std::move(row));
        }
        return rows;
    };
    const auto prow = read_rows(pixels_path);
    const auto mrow = read_rows(mask_path);
    if (prow.empty() || prow.size() != mrow.size() || prow[0].empty() ||
        prow[0].size() != mrow[0].size())
        throw ConfigError("inconsistent CSV image pair");
    const int h = static_cast<int>(prow.size());
    const int w = static_cast<int>(prow[0].size());
    LabeledImage img;
    img.pixels = Grid<double>(w, h);
    img.mask = Mask(w, h);
    for (int y = 0; y < h; ++y) {
        if (static_cast<int>(prow[y].size()) != w || static_cast<int>(mrow[y].size()) != w)
            throw ConfigError("ragged CSV image rows");
        for (int x = 0; x < w; ++x) {
            img.pixels(x, y) = prow[y][x];
            img.mask(x, y) = static_cast<std::uint8_t>(mrow[y][x]);
        }
    }
    return img;
}

void write_split(const fs::path& dir, const std::vector<LabeledImage>& images,
                 const SplitManifest& manifest) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const std::string stem = image_stem(static_cast<int>(i));
        if (manifest.format == "csv")
            write_image_csv(dir / (stem + ".pixels.csv"), dir / (stem + ".mask.csv"), images[i]);
        else
            write_image_sfsd(dir / (stem + ".sfsd"), images[i]);
    }
    json j;
    j["width"] = manifest.width;
    j["height"] = manifest.height;
    j["num_classes"] = manifest.num_classes;
    j["count"] = static_cast<int>(images.size());
    j["format"] = manifest.format;
    j["seed"] = manifest.seed;
    j["config_hash"] = manifest.config_hash;
    write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

SplitManifest read_split_manifest(const fs::path& dir) {
    const json j = read_json_file(dir / "manifest.json");
    SplitManifest m;
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    m.count = j.at("count").get<int>();
    m.format = j.at("format").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    return m;
}

std::vector<LabeledImage> read_split(const fs::path& dir) {
    const SplitManifest m = read_split_manifest(dir);
    std::vector<LabeledImage> images;
    images.reserve(m.count);
    for (int i = 0; i < m.count; ++i) {
        const std::string stem = image_stem(i);
        LabeledImage img;
        if (m.format == "csv")
            img = read_image_csv(dir / (stem + ".pixels.csv"), dir / (stem + ".mask.csv"));
        else
            img = read_image_sfsd(dir / (stem + ".sfsd"));
        if (img.pixels.width != m.width || img.pixels.height != m.height)
            throw ConfigError("image dimensions disagree with manifest in " + dir.string());
        for (std::uint8_t v : img.mask.data)
            if (v >= m.num_classes) throw ConfigError("mask label out of range in " + dir.string());
        images.push_back(std::move(img));
    }
    return images;
}

void save_checkpoint(const fs::path& json_path, const SegNetwork& net, const CheckpointMeta& meta) {
    const fs::path blob_path = fs::path(json_path).replace_extension(".bin");

    json layers = json::array();
    auto refs = param_refs(const_cast<SegNetwork&>(net));
    for (const auto& r : refs)
        layers.push_back({{"name", r.name}, {"size", r.data->size()}});

    json j;
    j["format"] = "sfs-checkpoint";
    j["version"] = 1;
    j["phase"] = meta.phase;
    j["step"] = meta.step;
    j["encoder_channels"] = net.encoder_channels;
    j["latent_dim"] = net.latent_dim;
    j["num_classes"] = net.num_classes;
    j["layers"] = layers;
    j["optimizer"] = {{"lr", meta.optimizer.lr},
                      {"beta1", meta.optimizer.beta1},
                      {"beta2", meta.optimizer.beta2},
                      {"eps", meta.optimizer.eps},
                      {"lr_decay", meta.optimizer.lr_decay}};
    j["config_hash"] = meta.config_hash;
    j["seed"] = meta.seed;
    j["blob"] = blob_path.filename().string();
    write_text_file(json_path, j.dump(2) + "\n");

    std::ofstream out(blob_path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + blob_path.string());
    for (const auto& r : refs)
        for (double v : *r.data) put_f32(out, static_cast<float>(v));
    if (!out) throw ConfigError("write failed: " + blob_path.string());
}

SegNetwork load_checkpoint(const fs::path& json_path, CheckpointMeta* meta) {
    const json j = read_json_file(json_path);
    if (j.value("format", "") != "sfs-checkpoint")
        throw ConfigError("not a checkpoint manifest: " + json_path.string());

    SegNetwork net = SegNetwork::init(j.at("encoder_channels").get<int>(),
                                      j.at("latent_dim").get<int>(),
                                      j.at("num_classes").get<int>(), 0);
    auto refs = param_refs(net);
    const json& layers = j.at("layers");
    if (layers.size() != refs.size()) throw ConfigError("unexpected layer list in checkpoint");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (layers[i].at("name").get<std::string>() != refs[i].name ||
            layers[i].at("size").get<std::size_t>() != refs[i].data->size())
            throw ConfigError("checkpoint layer mismatch: " + layers[i].dump());
    }

    const fs::path blob_path = json_path.parent_path() / j.at("blob").get<std::string>();
    std::ifstream in(blob_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + blob_path.string());
    for (auto& r : refs)
        for (double& v : *r.data) v = static_cast<double>(get_f32(in));
    if (!in) throw ConfigError("truncated checkpoint blob: " + blob_path.string());

    if (meta) {
        meta->phase = j.value("phase", "");
        meta->step = j.value("step", 0LL);
        meta->optimizer.lr = j.at("optimizer").at("lr").get<double>();
        meta->optimizer.beta1 = j.at("optimizer").at("beta1").get<double>();
        meta->optimizer.beta2 = j.at("optimizer").at("beta2").get<double>();
        meta->optimizer.eps = j.at("optimizer").at("eps").get<double>();
        meta->optimizer.lr_decay = j.at("optimizer").at("lr_decay").get<double>();
        meta->config_hash = j.value("config_hash", "");
        meta->seed = j.value("seed", static_cast<std::uint64_t>(0));
    }
    return net;
}

void save_gmm(const fs::path& path, const InternalDistribution& dist,
              const std::string& config_hash, std::uint64_t seed) {
    json comps = json::array();
    const int F = dist.dim;
    for (int c = 0; c < dist.component_count(); ++c) {
        json jc;
        jc["class"] = dist.component_class(c);
        jc["weight"] = dist.weights[c];
        jc["mean"] = std::vector<double>(dist.mean(c), dist.mean(c) + F);
        jc["cov"] = std::vector<double>(dist.cov(c), dist.cov(c) + F * F);
        comps.push_back(std::move(jc));
    }
    json j;
    j["format"] = "sfs-gmm";
    j["version"] = 1;
    j["num_classes"] = dist.num_classes;
    j["components_per_class"] = dist.components_per_class;
    j["dim"] = dist.dim;
    j["rho"] = dist.confidence_threshold;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["components"] = std::move(comps);
    write_text_file(path, j.dump(2) + "\n");
}

InternalDistribution load_gmm(const fs::path& path) {
    const json j = read_json_file(path);
    if (j.value("format", "") != "sfs-gmm")
        throw ConfigError("not a GMM file: " + path.string());
    InternalDistribution dist;
    dist.num_classes = j.at("num_classes").get<int>();
    dist.components_per_class = j.at("components_per_class").get<int>();
    dist.dim = j.at("dim").get<int>();
    dist.confidence_threshold = j.at("rho").get<double>();
    const int C = dist.component_count(), F = dist.dim;
    const json& comps = j.at("components");
    if (static_cast<int>(comps.size()) != C) throw ConfigError("wrong component count in " + path.string());
    dist.weights.resize(C);
    dist.means.resize(static_cast<std::size_t>(C) * F);
    dist.covs.resize(static_cast<std::size_t>(C) * F * F);
    for (int c = 0; c < C; ++c) {
        const json& jc = comps[c];
        if (jc.at("class").get<int>() != dist.component_class(c))
            throw ConfigError("component order mismatch in " + path.string());
        dist.weights[c] = jc.at("weight").get<double>();
        const auto mean = jc.at("mean").get<std::vector<double>>();
        const auto cov = jc.at("cov").get<std::vector<double>>();
        if (static_cast<int>(mean.size()) != F || static_cast<int>(cov.size()) != F * F)
            throw ConfigError("component size mismatch in " + path.string());
        std::copy(mean.begin(), mean.end(), dist.means.begin() + static_cast<std::size_t>(c) * F);
        std::copy(cov.begin(), cov.end(), dist.covs.begin() + static_cast<std::size_t>(c) * F * F);
    }
    dist.finalize();
    return dist;
}

}  // namespace sfs
