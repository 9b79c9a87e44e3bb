#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfs/common.hpp"
#include "sfs/gmm.hpp"
#include "sfs/network.hpp"

namespace sfs {

/// Binary image container (.sfsd): 16-byte header (magic "SFSD", version
/// u32, width u32, height u32, little-endian), then width*height float32
/// pixels row-major, then width*height uint8 labels.
void write_image_sfsd(const std::filesystem::path& path, const LabeledImage& image);
LabeledImage read_image_sfsd(const std::filesystem::path& path);

/// CSV alternative: one file of pixel rows, one of label rows.
void write_image_csv(const std::filesystem::path& pixels_path,
                     const std::filesystem::path& mask_path, const LabeledImage& image);
LabeledImage read_image_csv(const std::filesystem::path& pixels_path,
                            const std::filesystem::path& mask_path);

struct SplitManifest {
    int width = 0;
    int height = 0;
    int num_classes = 0;
    int count = 0;
    std::string format = "binary";  // "binary" | "csv"
    std::uint64_t seed = 0;
    std::string config_hash;
};

/// One directory per split: images plus a manifest describing them.
void write_split(const std::filesystem::path& dir, const std::vector<LabeledImage>& images,
                 const SplitManifest& manifest);
SplitManifest read_split_manifest(const std::filesystem::path& dir);
std::vector<LabeledImage> read_split(const std::filesystem::path& dir);

/// Checkpoint metadata stored in the JSON manifest next to the blob.
struct CheckpointMeta {
    std::string phase;
    long long step = 0;
    AdamParams optimizer;
    std::string config_hash;
    std::uint64_t seed = 0;
};

/// JSON manifest (layer shapes, optimizer hyperparameters, step count)
/// plus a binary blob of little-endian float32 parameters in manifest
/// layer order.
void save_checkpoint(const std::filesystem::path& json_path, const SegNetwork& net,
                     const CheckpointMeta& meta);
SegNetwork load_checkpoint(const std::filesystem::path& json_path, CheckpointMeta* meta = nullptr);

/// Full-precision JSON serialization of the internal distribution.
void save_gmm(const std::filesystem::path& path, const InternalDistribution& dist,
              const std::string& config_hash, std::uint64_t seed);
InternalDistribution load_gmm(const std::filesystem::path& path);

}  // namespace sfs
