#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "futu/data_io.hpp"
#include "futu/image.hpp"
#include "futu/metrics.hpp"

using namespace futu;
using namespace futu::data;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("png round trip preserves gray and rgb pixels exactly") {
    std::mt19937 rng(1);
    const fs::path dir = fresh_dir("futu_png_rt");
    for (std::size_t channels : {std::size_t(1), std::size_t(3)}) {
        img::ImageU8 image;
        image.width = 13;
        image.height = 7;
        image.channels = channels;
        image.pixels.resize(image.size_bytes());
        for (auto& p : image.pixels) p = static_cast<std::uint8_t>(rng());
        const fs::path file = dir / ("rt_" + std::to_string(channels) + ".png");
        img::write_png(image, file);
        const img::ImageU8 back = img::read_image(file, channels);
        REQUIRE(back.width == image.width);
        REQUIRE(back.height == image.height);
        REQUIRE(back.channels == channels);
        CHECK(back.pixels == image.pixels);
    }
    CHECK_THROWS_AS(img::read_image(dir / "nope.png"), IoError);
}

TEST_CASE("resize_bilinear: identity at equal size; 2x2 checker to 4x4 matches the formula") {
    std::vector<float> src{0.0f, 1.0f, 1.0f, 0.0f};
    CHECK(img::resize_bilinear(src, 2, 2, 1, 2, 2) == src);

    const auto up = img::resize_bilinear(src, 2, 2, 1, 4, 4);
    // corner-aligned oracle evaluated directly: f(u,v) = u + v - 2uv with
    // u,v in {0, 1/3, 2/3, 1}
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            const double v = y / 3.0, u = x / 3.0;
            const double want = u + v - 2.0 * u * v;
            CHECK(up[y * 4 + x] == doctest::Approx(want).epsilon(1e-6));
        }
    // interior of the upsampled checker forms the mid band
    CHECK(up[1 * 4 + 1] == doctest::Approx(4.0 / 9.0));
    CHECK(up[1 * 4 + 2] == doctest::Approx(5.0 / 9.0));
    // convex combinations stay inside the value range
    for (float v : up) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("resize_nearest: preserves binary values at any scale") {
    std::mt19937 rng(2);
    std::vector<float> src(31 * 17);
    for (auto& v : src) v = rng() % 2 ? 1.0f : 0.0f;
    for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{8, 8}, {64, 64}, {31, 17}}) {
        const auto out = img::resize_nearest(src, 31, 17, 1, oh, ow);
        for (float v : out) CHECK((v == 0.0f || v == 1.0f));
    }
    // identity when sizes match
    CHECK(img::resize_nearest(src, 31, 17, 1, 31, 17) == src);
}

TEST_CASE("generate_synthetic: deterministic, masks binary, geometry oracle agrees") {
    SynthConfig cfg;
    cfg.count = 6;
    cfg.image_hw = 64;
    cfg.seed = 41;
    const fs::path dir_a = fresh_dir("futu_synth_a");
    const fs::path dir_b = fresh_dir("futu_synth_b");
    DatasetIndex a = generate_synthetic(cfg, dir_a);
    DatasetIndex b = generate_synthetic(cfg, dir_b);
    REQUIRE(a.size() == 6);
    REQUIRE(b.size() == 6);

    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(slurp(a.entries[i].image) == slurp(b.entries[i].image));
        CHECK(slurp(*a.entries[i].mask) == slurp(*b.entries[i].mask));
    }

    // masks hold only {0,255}; counts match an independent point-in-ellipse test
    const auto geometry =
        nlohmann::json::parse(std::ifstream(dir_a / "train" / "geometry.json"));
    REQUIRE(geometry.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const img::ImageU8 mask = img::read_image(*a.entries[i].mask, 1);
        std::uint64_t count = 0;
        for (std::uint8_t v : mask.pixels) {
            REQUIRE((v == 0 || v == 255));
            count += v == 255;
        }
        const auto& g = geometry[i];
        const double cx = g["cx"], cy = g["cy"], rx = g["rx"], ry = g["ry"],
                     angle = g["angle"];
        std::uint64_t oracle = 0;
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x) {
                const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
                const double u = (dx * std::cos(angle) + dy * std::sin(angle)) / rx;
                const double v = (dy * std::cos(angle) - dx * std::sin(angle)) / ry;
                oracle += (u * u + v * v <= 1.0) ? 1 : 0;
            }
        CHECK(count == oracle);
    }
}

TEST_CASE("load_index: pairing, ordering, and negative cases") {
    SynthConfig cfg;
    cfg.count = 8;
    cfg.image_hw = 32;
    cfg.min_radius = 4;
    cfg.max_radius = 9;
    cfg.seed = 5;
    const fs::path dir = fresh_dir("futu_index");
    DatasetIndex index = generate_synthetic(cfg, dir);
    REQUIRE(index.size() == 8);
    for (std::size_t i = 1; i < index.size(); ++i)
        CHECK(index.entries[i - 1].image.filename() < index.entries[i].image.filename());
    for (const auto& e : index.entries) {
        REQUIRE(e.mask.has_value());
        CHECK(e.image.filename() == e.mask->filename());
    }

    // deleting one mask must fail with the filename in the message
    fs::remove(*index.entries[3].mask);
    CHECK_THROWS_WITH_AS(load_index(dir, Split::train),
                         doctest::Contains("synth_0003.png"), IoError);

    CHECK_THROWS_AS(load_index(dir / "missing", Split::train), IoError);

    // a test split needs no labels directory
    const fs::path test_root = fresh_dir("futu_index_test");
    fs::create_directories(test_root / "test" / "images");
    img::ImageU8 px;
    px.width = px.height = 4;
    px.channels = 3;
    px.pixels.assign(48, 128);
    img::write_png(px, test_root / "test" / "images" / "a.png");
    DatasetIndex t = load_index(test_root, Split::test);
    REQUIRE(t.size() == 1);
    CHECK_FALSE(t.entries[0].mask.has_value());
}

TEST_CASE("write_prediction: 0/255 convention and exact round trip") {
    const fs::path dir = fresh_dir("futu_pred");

    write_prediction(std::vector<float>(64, 0.9f), 8, 8, dir / "high.png");
    const img::ImageU8 high = img::read_image(dir / "high.png", 1);
    for (std::uint8_t v : high.pixels) CHECK(v == 255);

    write_prediction(std::vector<float>(64, 0.5f), 8, 8, dir / "tie.png");
    const img::ImageU8 tie = img::read_image(dir / "tie.png", 1);
    for (std::uint8_t v : tie.pixels) CHECK(v == 0); // strict threshold

    std::mt19937 rng(9);
    std::vector<float> prob(64);
    for (auto& p : prob) p = static_cast<float>(rng() % 1000) / 999.0f;
    write_prediction(prob, 8, 8, dir / "rand.png");
    const img::ImageU8 back = img::read_image(dir / "rand.png", 1);
    const metrics::Mask want = metrics::binarize(prob);
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(static_cast<int>(back.pixels[i]) / 255 == static_cast<int>(want[i]));
}

TEST_CASE("compute_stats: conservation, wound fractions, offender detection") {
    SynthConfig cfg;
    cfg.count = 8;
    cfg.image_hw = 64;
    cfg.seed = 13;
    const fs::path dir = fresh_dir("futu_stats");
    DatasetIndex index = generate_synthetic(cfg, dir);
    StatsReport stats = compute_stats(index);
    CHECK(stats.image_count == 8);
    CHECK(stats.mask_count == 8);
    // each channel histogram sums to the pixel total H*W*count
    for (std::size_t c = 0; c < 3; ++c) {
        std::uint64_t sum = 0;
        for (std::uint64_t v : stats.intensity_histogram[c]) sum += v;
        CHECK(sum == 64ull * 64ull * 8ull);
    }
    CHECK(stats.mask_background + stats.mask_foreground == 64ull * 64ull * 8ull);

    // wound fraction against the analytic ellipse-area sum, within 2%
    const auto geometry =
        nlohmann::json::parse(std::ifstream(dir / "train" / "geometry.json"));
    double analytic_area = 0.0;
    for (const auto& g : geometry)
        analytic_area += M_PI * static_cast<double>(g["rx"]) * static_cast<double>(g["ry"]);
    const double analytic_fraction = analytic_area / (64.0 * 64.0 * 8.0);
    CHECK(stats.wound_fraction() ==
          doctest::Approx(analytic_fraction).epsilon(0.02));

    // all-background masks give wound fraction zero
    const fs::path flat_root = fresh_dir("futu_stats_flat");
    fs::create_directories(flat_root / "train" / "images");
    fs::create_directories(flat_root / "train" / "labels");
    img::ImageU8 rgb;
    rgb.width = rgb.height = 8;
    rgb.channels = 3;
    rgb.pixels.assign(192, 100);
    img::ImageU8 black;
    black.width = black.height = 8;
    black.channels = 1;
    black.pixels.assign(64, 0);
    img::write_png(rgb, flat_root / "train" / "images" / "a.png");
    img::write_png(black, flat_root / "train" / "labels" / "a.png");
    CHECK(compute_stats(load_index(flat_root, Split::train)).wound_fraction() == 0.0);

    // a mask with a stray value fails validation and names the value
    img::ImageU8 bad = black;
    bad.pixels[5] = 7;
    img::write_png(bad, flat_root / "train" / "labels" / "a.png");
    CHECK_THROWS_WITH_AS(compute_stats(load_index(flat_root, Split::train)),
                         doctest::Contains("7"), ContractError);
}

TEST_CASE("stats serialization writes JSON and CSV") {
    SynthConfig cfg;
    cfg.count = 2;
    cfg.image_hw = 32;
    cfg.min_radius = 4;
    cfg.max_radius = 8;
    cfg.seed = 3;
    const fs::path dir = fresh_dir("futu_stats_io");
    StatsReport stats = compute_stats(generate_synthetic(cfg, dir));
    write_stats_json(stats, "train", dir / "stats.json");
    write_stats_csv(stats, dir / "stats.csv");
    auto j = nlohmann::json::parse(std::ifstream(dir / "stats.json"));
    CHECK(j["image_count"] == 2);
    CHECK(j["intensity_histogram"]["r"].size() == 256);
    std::ifstream csv(dir / "stats.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "bin,r,g,b");
}
