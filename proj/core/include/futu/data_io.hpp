#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "futu/image.hpp"

// Dataset indexing (FUSeg-style folder layout), mask reading/writing with the
// 0/255 grayscale convention, corpus statistics, and the synthetic-wound
// generator for desk-scale experiments.
namespace futu::data {

enum class Split { train, validation, test };

std::string split_name(Split split);

struct IndexEntry {
    std::filesystem::path image;
    std::optional<std::filesystem::path> mask; // absent for the test split
};

struct DatasetIndex {
    Split split = Split::train;
    std::filesystem::path root;
    std::vector<IndexEntry> entries;

    std::size_t size() const { return entries.size(); }
};

// Expects `<root>/<split>/<images_dir>` and, for labeled splits,
// `<root>/<split>/<labels_dir>` with masks paired by identical filename.
// Entries are sorted lexicographically by filename.
DatasetIndex load_index(const std::filesystem::path& root, Split split,
                        const std::string& images_dir = "images",
                        const std::string& labels_dir = "labels");

// Binarizes a probability map at the (strict) threshold and writes an 8-bit
// grayscale PNG holding only {0, 255}.
void write_prediction(const std::vector<float>& prob, std::size_t height, std::size_t width,
                      const std::filesystem::path& out_path, double threshold = 0.5);

struct StatsReport {
    std::array<std::array<std::uint64_t, 256>, 3> intensity_histogram{}; // per RGB channel
    std::uint64_t mask_background = 0; // mask pixels of value 0
    std::uint64_t mask_foreground = 0; // mask pixels of value 255
    std::uint64_t image_pixels = 0;    // per-channel pixel total across images
    std::size_t image_count = 0;
    std::size_t mask_count = 0;

    double wound_fraction() const {
        const std::uint64_t total = mask_background + mask_foreground;
        return total ? static_cast<double>(mask_foreground) / static_cast<double>(total) : 0.0;
    }
};

// Image intensity histograms plus mask class counts. Masks containing values
// other than {0, 255} fail validation with the offending values listed.
StatsReport compute_stats(const DatasetIndex& index);

void write_stats_json(const StatsReport& stats, const std::string& split,
                      const std::filesystem::path& path);
void write_stats_csv(const StatsReport& stats, const std::filesystem::path& path);

struct SynthConfig {
    std::size_t count = 8;
    std::size_t image_hw = 64;
    double min_radius = 6.0;
    double max_radius = 14.0;
    double noise = 0.04; // background texture amplitude, fraction of full scale
    std::uint64_t seed = 0;

    void validate() const;
};

// Writes `count` RGB images (textured skin-tone background with one darker
// elliptical wound each) and exact {0,255} masks under the standard split
// layout; fully determined by the seed. Returns the loaded index.
// A pixel is wound iff its center lies inside the rotated ellipse:
//   ((dx cos a + dy sin a)/rx)^2 + ((dy cos a - dx sin a)/ry)^2 <= 1.
DatasetIndex generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir,
                                Split split = Split::train);

} // namespace futu::data
