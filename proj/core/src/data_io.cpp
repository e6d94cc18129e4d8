#include "futu/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "futu/errors.hpp"
#include "futu/metrics.hpp"
#include "futu/random.hpp"

namespace futu::data {

std::string split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "?";
}

namespace {

bool is_image_file(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

} // namespace

DatasetIndex load_index(const std::filesystem::path& root, Split split,
                        const std::string& images_dir, const std::string& labels_dir) {
    const std::filesystem::path base = root / split_name(split);
    const std::filesystem::path img_dir = base / images_dir;
    if (!std::filesystem::is_directory(img_dir))
        throw IoError("missing images directory: " + img_dir.string());

    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(img_dir))
        if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    if (files.empty()) throw IoError("no images found under " + img_dir.string());
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename() < b.filename(); });

    std::set<std::string> seen;
    DatasetIndex index;
    index.split = split;
    index.root = root;
    const bool labeled = split != Split::test;
    const std::filesystem::path lbl_dir = base / labels_dir;
    if (labeled && !std::filesystem::is_directory(lbl_dir))
        throw IoError("missing labels directory: " + lbl_dir.string());
    for (const auto& f : files) {
        if (!seen.insert(f.filename().string()).second)
            throw IoError("duplicate filename in split: " + f.filename().string());
        IndexEntry entry;
        entry.image = f;
        if (labeled) {
            const std::filesystem::path mask = lbl_dir / f.filename();
            if (!std::filesystem::is_regular_file(mask))
                throw IoError("missing mask for image '" + f.filename().string() +
                              "' (expected " + mask.string() + ")");
            entry.mask = mask;
        }
        index.entries.push_back(std::move(entry));
    }
    return index;
}

void write_prediction(const std::vector<float>& prob, std::size_t height, std::size_t width,
                      const std::filesystem::path& out_path, double threshold) {
    if (prob.size() != height * width)
        throw ContractError("write_prediction: buffer does not match dimensions");
    const metrics::Mask mask = metrics::binarize(prob, threshold);
    img::ImageU8 out;
    out.width = width;
    out.height = height;
    out.channels = 1;
    out.pixels.resize(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) out.pixels[i] = mask[i] ? 255 : 0;
    img::write_png(out, out_path);
}

StatsReport compute_stats(const DatasetIndex& index) {
    if (index.entries.empty()) throw ContractError("compute_stats: empty index");
    StatsReport stats;
    for (const auto& entry : index.entries) {
        const img::ImageU8 image = img::read_image(entry.image, 3);
        for (std::size_t i = 0; i < image.width * image.height; ++i)
            for (std::size_t c = 0; c < 3; ++c)
                ++stats.intensity_histogram[c][image.pixels[i * 3 + c]];
        stats.image_pixels += image.width * image.height;
        ++stats.image_count;
        if (!entry.mask) continue;
        const img::ImageU8 mask = img::read_image(*entry.mask, 1);
        std::set<int> offenders;
        for (std::uint8_t v : mask.pixels) {
            if (v == 0)
                ++stats.mask_background;
            else if (v == 255)
                ++stats.mask_foreground;
            else
                offenders.insert(v);
        }
        if (!offenders.empty()) {
            std::ostringstream os;
            os << "mask " << entry.mask->string() << " contains values outside {0,255}:";
            for (int v : offenders) os << " " << v;
            throw ContractError(os.str());
        }
        ++stats.mask_count;
    }
    return stats;
}

void write_stats_json(const StatsReport& stats, const std::string& split,
                      const std::filesystem::path& path) {
    nlohmann::json j;
    j["split"] = split;
    j["image_count"] = stats.image_count;
    j["mask_count"] = stats.mask_count;
    j["image_pixels"] = stats.image_pixels;
    j["mask_pixel_counts"] = {{"0", stats.mask_background}, {"255", stats.mask_foreground}};
    j["wound_fraction"] = stats.wound_fraction();
    const char* channel_names[3] = {"r", "g", "b"};
    for (std::size_t c = 0; c < 3; ++c)
        j["intensity_histogram"][channel_names[c]] = stats.intensity_histogram[c];
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write stats to " + path.string());
    os << j.dump(2) << "\n";
}

void write_stats_csv(const StatsReport& stats, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write stats to " + path.string());
    os << "bin,r,g,b\n";
    for (std::size_t bin = 0; bin < 256; ++bin)
        os << bin << "," << stats.intensity_histogram[0][bin] << ","
           << stats.intensity_histogram[1][bin] << "," << stats.intensity_histogram[2][bin]
           << "\n";
    os << "mask_0," << stats.mask_background << ",,\n";
    os << "mask_255," << stats.mask_foreground << ",,\n";
}

void SynthConfig::validate() const {
    if (count < 1) throw ConfigError("synthetic corpus needs count >= 1");
    if (image_hw < 16) throw ConfigError("synthetic images must be at least 16x16");
    if (min_radius < 2.0 || max_radius < min_radius)
        throw ConfigError("wound radius range is invalid");
    if (2.0 * max_radius >= static_cast<double>(image_hw))
        throw ConfigError("wound radii do not fit inside the image");
}

DatasetIndex generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir,
                                Split split) {
    config.validate();
    const std::filesystem::path base = out_dir / split_name(split);
    const std::filesystem::path img_dir = base / "images";
    const std::filesystem::path lbl_dir = base / "labels";
    std::filesystem::create_directories(img_dir);
    std::filesystem::create_directories(lbl_dir);

    std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(config.seed, 0x73796e7468ULL)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t hw = config.image_hw;
    nlohmann::json geometry = nlohmann::json::array();

    for (std::size_t i = 0; i < config.count; ++i) {
        // wound geometry: rotated ellipse kept fully inside the frame
        const double rx = config.min_radius + (config.max_radius - config.min_radius) * unit(rng);
        const double ry = config.min_radius + (config.max_radius - config.min_radius) * unit(rng);
        const double margin = std::max(rx, ry) + 1.0;
        const double cx = margin + (hw - 2.0 * margin) * unit(rng);
        const double cy = margin + (hw - 2.0 * margin) * unit(rng);
        const double angle = 2.0 * M_PI * unit(rng);
        const double ca = std::cos(angle), sa = std::sin(angle);

        // per-image tint around a skin-tone base and a darker wound color
        const double tint = 0.9 + 0.2 * unit(rng);
        const double skin[3] = {205.0 * tint, 158.0 * tint, 138.0 * tint};
        const double wound[3] = {128.0 * tint, 48.0 * tint, 44.0 * tint};

        img::ImageU8 image;
        image.width = image.height = hw;
        image.channels = 3;
        image.pixels.resize(hw * hw * 3);
        img::ImageU8 mask;
        mask.width = mask.height = hw;
        mask.channels = 1;
        mask.pixels.resize(hw * hw);

        for (std::size_t y = 0; y < hw; ++y) {
            for (std::size_t x = 0; x < hw; ++x) {
                const double dx = (x + 0.5) - cx;
                const double dy = (y + 0.5) - cy;
                const double u = (dx * ca + dy * sa) / rx;
                const double v = (dy * ca - dx * sa) / ry;
                const bool inside = u * u + v * v <= 1.0;
                mask.pixels[y * hw + x] = inside ? 255 : 0;
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    const double base = inside ? wound[ch] : skin[ch];
                    const double n = (unit(rng) - 0.5) * 2.0 * config.noise * 255.0;
                    const double val = std::clamp(base + n, 0.0, 255.0);
                    image.pixels[(y * hw + x) * 3 + ch] = static_cast<std::uint8_t>(val + 0.5);
                }
            }
        }

        char name[32];
        std::snprintf(name, sizeof(name), "synth_%04zu.png", i);
        img::write_png(image, img_dir / name);
        img::write_png(mask, lbl_dir / name);
        geometry.push_back({{"name", name},
                            {"cx", cx},
                            {"cy", cy},
                            {"rx", rx},
                            {"ry", ry},
                            {"angle", angle}});
    }
    {
        // wound geometry provenance; lets downstream checks recompute masks
        std::ofstream os(base / "geometry.json", std::ios::trunc);
        if (!os) throw IoError("cannot write " + (base / "geometry.json").string());
        os << geometry.dump(2) << "\n";
    }
    return load_index(out_dir, split);
}

} // namespace futu::data
