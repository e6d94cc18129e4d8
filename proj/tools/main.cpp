// futransunet: hybrid CNN-transformer wound segmentation toolkit.
//
// Subcommands: synth (synthetic corpus), train, predict, gradcam, stats.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "futu/data_io.hpp"
#include "futu/explain.hpp"
#include "futu/image.hpp"
#include "futu/metrics.hpp"
#include "futu/model.hpp"
#include "futu/training.hpp"

namespace fs = std::filesystem;
using namespace futu;

namespace {

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    if (files.empty()) throw IoError("no images found under " + dir.string());
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
    return files;
}

// Loads one image as a [1,hw,hw,3] tensor in [0,1].
Tensor load_input(const fs::path& path, std::size_t hw) {
    const img::ImageU8 image = img::read_image(path, 3);
    std::vector<float> fimg(image.pixels.size());
    for (std::size_t i = 0; i < fimg.size(); ++i) fimg[i] = image.pixels[i] / 255.0f;
    auto resized = img::resize_bilinear(fimg, image.height, image.width, 3, hw, hw);
    return Tensor({1, hw, hw, 3}, std::move(resized));
}

img::ImageU8 tensor_to_rgb(const Tensor& t) {
    img::ImageU8 out;
    out.height = t.dim(1);
    out.width = t.dim(2);
    out.channels = 3;
    out.pixels.resize(out.size_bytes());
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
        out.pixels[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(t.data()[i], 0.0f, 1.0f) * 255.0f));
    return out;
}

int cmd_synth(const fs::path& out, std::size_t count, std::size_t size, std::uint64_t seed) {
    data::SynthConfig cfg;
    cfg.count = count;
    cfg.image_hw = size;
    cfg.seed = seed;
    // default radii scale with the frame so wounds stay plausibly sized
    cfg.min_radius = std::max(3.0, size * 3.0 / 32.0);
    cfg.max_radius = std::max(cfg.min_radius + 1.0, size * 7.0 / 32.0);
    auto index = data::generate_synthetic(cfg, out);
    std::printf("wrote %zu image/mask pairs under %s\n", index.size(),
                (out / "train").string().c_str());
    return 0;
}

int cmd_train(const fs::path& data_dir, const fs::path& out, std::size_t epochs,
              std::size_t batch_size, double lr, std::uint64_t seed, bool scaled,
              const std::string& labels_dir, const std::string& upsample) {
    model::ModelConfig mcfg = scaled ? model::ModelConfig::scaled() : model::ModelConfig::paper();
    if (upsample == "nearest")
        mcfg.upsample_kind = model::UpsampleKind::nearest;
    else if (upsample != "transposed")
        throw ConfigError("--upsample must be 'transposed' or 'nearest'");

    training::TrainConfig tcfg;
    tcfg.lr0 = lr;
    tcfg.batch_size = batch_size;
    tcfg.max_epochs = epochs;
    tcfg.seed = seed;
    tcfg.target_hw = mcfg.input_hw;

    auto train_index = data::load_index(data_dir, data::Split::train, "images", labels_dir);
    data::DatasetIndex val_index;
    if (fs::is_directory(data_dir / "validation")) {
        val_index = data::load_index(data_dir, data::Split::validation, "images", labels_dir);
    } else {
        std::printf("no validation split under %s; validating on the training split\n",
                    data_dir.string().c_str());
        val_index = train_index;
    }

    auto weights = model::ModelWeightsT<float>::init(mcfg, seed);
    auto result = training::train(weights, train_index, val_index, tcfg, out);
    const auto& last = result.history.back();
    std::printf("finished after %zu epoch(s)%s: val loss %.6g, dice %.4f, iou %.4f\n",
                result.history.size(), result.early_stopped ? " (early stop)" : "",
                last.val.loss, last.val.dice, last.val.iou);
    std::printf("best weights: %s\n", result.best_weights.string().c_str());
    return 0;
}

int cmd_predict(const fs::path& weights_path, const fs::path& input, const fs::path& out,
                double threshold) {
    auto weights = model::load_model_auto(weights_path);
    weights.set_mode(layers::Mode::infer);
    const std::size_t hw = weights.config.input_hw;
    fs::create_directories(out);
    for (const auto& file : list_images(input)) {
        Tensor image = load_input(file, hw);
        Tape tape(false);
        Tensor probs = model::forward(tape, image, weights);
        const fs::path out_path = out / (file.stem().string() + ".png");
        data::write_prediction(probs.data(), hw, hw, out_path, threshold);
        std::printf("%s -> %s\n", file.filename().string().c_str(),
                    out_path.filename().string().c_str());
    }
    return 0;
}

int cmd_gradcam(const fs::path& weights_path, const fs::path& input, const fs::path& out,
                const std::string& layer, double alpha) {
    auto weights = model::load_model_auto(weights_path);
    const std::size_t hw = weights.config.input_hw;
    fs::create_directories(out);
    explain::OverlayConfig overlay_cfg;
    overlay_cfg.alpha = alpha;
    for (const auto& file : list_images(input)) {
        Tensor image = load_input(file, hw);
        explain::CamMap cam = explain::gradcam(weights, image, layer);
        explain::CamMap full = explain::upsample_cam(cam, hw, hw);

        // colormapped heat map alone
        img::ImageU8 heat;
        heat.width = heat.height = hw;
        heat.channels = 3;
        heat.pixels.resize(heat.size_bytes());
        for (std::size_t i = 0; i < full.values.size(); ++i) {
            const auto rgb = explain::cam_color(full.values[i]);
            for (std::size_t c = 0; c < 3; ++c) heat.pixels[i * 3 + c] = rgb[c];
        }
        const img::ImageU8 rgb = tensor_to_rgb(image);
        const img::ImageU8 blended = explain::render_overlay(rgb, full.values, overlay_cfg);

        Tape tape(false);
        weights.set_mode(layers::Mode::infer);
        Tensor probs = model::forward(tape, image, weights);
        const metrics::Mask mask = metrics::binarize(probs.data());
        const img::ImageU8 sbs = explain::render_side_by_side(rgb, mask);

        const std::string stem = file.stem().string();
        img::write_png(heat, out / (stem + "_cam.png"));
        img::write_png(blended, out / (stem + "_overlay.png"));
        img::write_png(sbs, out / (stem + "_sbs.png"));
        std::printf("%s -> %s_{cam,overlay,sbs}.png\n", file.filename().string().c_str(),
                    stem.c_str());
    }
    return 0;
}

int cmd_stats(const fs::path& data_dir, const fs::path& out_file,
              const std::string& labels_dir) {
    nlohmann::json combined;
    bool any = false;
    for (data::Split split :
         {data::Split::train, data::Split::validation, data::Split::test}) {
        const std::string name = data::split_name(split);
        if (!fs::is_directory(data_dir / name)) continue;
        auto index = data::load_index(data_dir, split, "images", labels_dir);
        auto stats = data::compute_stats(index);
        any = true;
        combined[name] = {{"image_count", stats.image_count},
                          {"mask_count", stats.mask_count},
                          {"mask_pixel_counts",
                           {{"0", stats.mask_background}, {"255", stats.mask_foreground}}},
                          {"wound_fraction", stats.wound_fraction()}};
        const char* channels[3] = {"r", "g", "b"};
        for (std::size_t c = 0; c < 3; ++c)
            combined[name]["intensity_histogram"][channels[c]] = stats.intensity_histogram[c];
        fs::path csv = out_file;
        csv.replace_extension("." + name + ".csv");
        data::write_stats_csv(stats, csv);
    }
    if (!any) throw IoError("no train/validation/test splits under " + data_dir.string());
    std::ofstream os(out_file, std::ios::trunc);
    if (!os) throw IoError("cannot write " + out_file.string());
    os << combined.dump(2) << "\n";
    std::printf("stats written to %s\n", out_file.string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FUTransUNet wound segmentation: train, predict, explain"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::simple);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic wound corpus");
    fs::path synth_out;
    std::size_t synth_count = 8, synth_size = 64;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "Output dataset root")->required();
    synth->add_option("--count", synth_count, "Number of image/mask pairs")
        ->capture_default_str();
    synth->add_option("--size", synth_size, "Image height/width in pixels")
        ->capture_default_str();
    synth->add_option("--seed", synth_seed, "RNG seed")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train on a dataset directory");
    fs::path train_data, train_out;
    std::size_t train_epochs = 50, train_batch = 16;
    double train_lr = 0.001;
    std::uint64_t train_seed = 0;
    bool train_scaled = false;
    std::string train_labels = "labels", train_upsample = "transposed";
    train_cmd->add_option("--data-dir", train_data, "Dataset root (train[/validation] splits)")
        ->required();
    train_cmd->add_option("--out", train_out, "Run output directory")->required();
    train_cmd->add_option("--epochs", train_epochs, "Maximum epochs")->capture_default_str();
    train_cmd->add_option("--batch-size", train_batch, "Minibatch size")->capture_default_str();
    train_cmd->add_option("--lr", train_lr, "Initial Adam learning rate")->capture_default_str();
    train_cmd->add_option("--seed", train_seed, "Seed for init and shuffling")
        ->capture_default_str();
    train_cmd->add_flag("--scaled", train_scaled,
                        "Desk-scale model (64x64 input, filters 8..64, depth-2 transformer)");
    train_cmd->add_option("--labels-dir", train_labels, "Mask folder name")
        ->capture_default_str();
    train_cmd->add_option("--upsample", train_upsample, "Decoder upsampling: transposed|nearest")
        ->capture_default_str();

    // predict
    auto* predict = app.add_subcommand("predict", "Write binary masks for a directory of images");
    fs::path pred_weights, pred_in, pred_out;
    double pred_threshold = 0.5;
    predict->add_option("--weights", pred_weights, "Trained .futw weights")->required();
    predict->add_option("--input", pred_in, "Directory of input images")->required();
    predict->add_option("--out", pred_out, "Directory for 0/255 mask PNGs")->required();
    predict->add_option("--threshold", pred_threshold, "Binarization threshold")
        ->capture_default_str();

    // gradcam
    auto* cam = app.add_subcommand("gradcam", "Write Grad-CAM maps and overlays");
    fs::path cam_weights, cam_in, cam_out;
    std::string cam_layer = "dec4";
    double cam_alpha = 0.45;
    cam->add_option("--weights", cam_weights, "Trained .futw weights")->required();
    cam->add_option("--input", cam_in, "Directory of input images")->required();
    cam->add_option("--out", cam_out, "Directory for _cam/_overlay/_sbs PNGs")->required();
    cam->add_option("--layer", cam_layer, "Target layer (dec1..dec4, head)")
        ->capture_default_str();
    cam->add_option("--alpha", cam_alpha, "Overlay blend weight in [0,1]")
        ->capture_default_str();

    // stats
    auto* stats = app.add_subcommand("stats", "Dataset intensity and mask statistics");
    fs::path stats_data, stats_out;
    std::string stats_labels = "labels";
    stats->add_option("--data-dir", stats_data, "Dataset root")->required();
    stats->add_option("--out", stats_out, "Output JSON file (CSV written alongside)")
        ->required();
    stats->add_option("--labels-dir", stats_labels, "Mask folder name")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // exits 0 after printing help
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2; // usage error
    }

    try {
        if (*synth) return cmd_synth(synth_out, synth_count, synth_size, synth_seed);
        if (*train_cmd)
            return cmd_train(train_data, train_out, train_epochs, train_batch, train_lr,
                             train_seed, train_scaled, train_labels, train_upsample);
        if (*predict) return cmd_predict(pred_weights, pred_in, pred_out, pred_threshold);
        if (*cam) return cmd_gradcam(cam_weights, cam_in, cam_out, cam_layer, cam_alpha);
        if (*stats) return cmd_stats(stats_data, stats_out, stats_labels);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
