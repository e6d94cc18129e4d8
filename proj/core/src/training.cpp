#include "futu/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "futu/image.hpp"
#include "futu/random.hpp"

namespace futu::training {

bool checkpoint(CallbackState& cb, double val_loss, model::ModelWeightsT<float>& weights) {
    if (!cb.improved(val_loss)) return false;
    if (cb.best_weights_path.empty())
        throw IoError("checkpoint: no best_weights_path configured");
    model::save_model(weights, cb.best_weights_path);
    return true;
}

double reduce_lr_on_plateau(CallbackState& cb, double val_loss) {
    if (cb.improved(val_loss)) {
        cb.epochs_since_improve_lr = 0;
    } else {
        ++cb.epochs_since_improve_lr;
        if (cb.epochs_since_improve_lr >= cb.plateau_patience) {
            cb.current_lr *= cb.plateau_factor;
            cb.epochs_since_improve_lr = 0;
        }
    }
    return cb.current_lr;
}

StopDecision early_stopping(CallbackState& cb, double val_loss,
                            model::ModelWeightsT<float>& weights) {
    if (cb.improved(val_loss)) {
        cb.epochs_since_improve_stop = 0;
        return StopDecision::continue_training;
    }
    ++cb.epochs_since_improve_stop;
    if (cb.epochs_since_improve_stop < cb.stop_patience) return StopDecision::continue_training;
    if (!std::filesystem::is_regular_file(cb.best_weights_path))
        throw IoError("early_stopping: checkpoint missing at " + cb.best_weights_path.string());
    model::load_model(weights, cb.best_weights_path);
    return StopDecision::stop;
}

void commit_epoch(CallbackState& cb, double val_loss) {
    cb.best_val_loss = std::min(cb.best_val_loss, val_loss);
}

BatchStream::BatchStream(data::DatasetIndex index, std::size_t batch_size, bool shuffle,
                         std::uint64_t seed, std::size_t target_hw)
    : index_(std::move(index)), batch_size_(batch_size), shuffle_(shuffle), seed_(seed),
      target_hw_(target_hw) {
    if (index_.entries.empty()) throw ContractError("batch stream over an empty index");
    if (batch_size_ == 0) throw ConfigError("batch size must be positive");
    for (const auto& e : index_.entries)
        if (!e.mask)
            throw ContractError("batch stream requires labeled entries; '" +
                                e.image.filename().string() + "' has no mask");
}

std::size_t BatchStream::batch_count() const {
    return (index_.size() + batch_size_ - 1) / batch_size_; // last partial batch kept
}

std::vector<std::size_t> BatchStream::permutation(std::size_t epoch) const {
    std::vector<std::size_t> order(index_.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_) {
        std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed_, 0x65706f6368ULL + epoch)));
        std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
}

metrics::Batch BatchStream::load_batch(std::size_t epoch, std::size_t batch_index) const {
    const auto order = permutation(epoch);
    const std::size_t begin = batch_index * batch_size_;
    if (begin >= order.size())
        throw ContractError("batch index " + std::to_string(batch_index) + " out of range");
    const std::size_t end = std::min(order.size(), begin + batch_size_);
    const std::size_t b = end - begin;
    const std::size_t hw = target_hw_;

    metrics::Batch batch;
    batch.images = Tensor({b, hw, hw, 3});
    batch.masks = Tensor({b, hw, hw, 1});
    for (std::size_t i = 0; i < b; ++i) {
        const auto& entry = index_.entries[order[begin + i]];
        const img::ImageU8 image = img::read_image(entry.image, 3);
        std::vector<float> fimg(image.pixels.size());
        for (std::size_t j = 0; j < fimg.size(); ++j) fimg[j] = image.pixels[j] / 255.0f;
        const auto resized =
            img::resize_bilinear(fimg, image.height, image.width, 3, hw, hw);
        std::copy(resized.begin(), resized.end(), batch.images.data().begin() + i * hw * hw * 3);

        const img::ImageU8 mask = img::read_image(*entry.mask, 1);
        std::vector<float> fmask(mask.pixels.size());
        for (std::size_t j = 0; j < fmask.size(); ++j) fmask[j] = mask.pixels[j] / 255.0f;
        const auto mresized =
            img::resize_nearest(fmask, mask.height, mask.width, 1, hw, hw);
        float* dst = batch.masks.data().data() + i * hw * hw;
        for (std::size_t j = 0; j < mresized.size(); ++j) dst[j] = mresized[j] > 0.5f ? 1.0f : 0.0f;
    }
    return batch;
}

std::vector<metrics::Batch> BatchStream::all_batches(std::size_t epoch) const {
    std::vector<metrics::Batch> out;
    out.reserve(batch_count());
    for (std::size_t i = 0; i < batch_count(); ++i) out.push_back(load_batch(epoch, i));
    return out;
}

std::string history_csv_header() {
    return "epoch,loss,accuracy,dice,iou,val_loss,val_accuracy,val_dice,val_iou";
}

std::string history_csv_row(const EpochLog& log) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", log.epoch,
                  log.train.loss, log.train.accuracy, log.train.dice, log.train.iou,
                  log.val.loss, log.val.accuracy, log.val.dice, log.val.iou);
    return buf;
}

namespace {

void write_run_json(const std::filesystem::path& path, const TrainConfig& cfg,
                    const model::ModelConfig& mcfg) {
    nlohmann::json j;
    j["optimizer"] = {{"kind", "adam"}, {"lr0", cfg.lr0},   {"beta1", 0.9},
                      {"beta2", 0.999}, {"epsilon", 1e-7}};
    j["loss"] = "binary_cross_entropy";
    j["batch_size"] = cfg.batch_size;
    j["max_epochs"] = cfg.max_epochs;
    j["plateau_patience"] = cfg.plateau_patience;
    j["plateau_factor"] = cfg.plateau_factor;
    j["stop_patience"] = cfg.stop_patience;
    j["seed"] = cfg.seed;
    j["target_hw"] = cfg.target_hw;
    j["model"] = {
        {"input_hw", mcfg.input_hw},
        {"input_channels", mcfg.input_channels},
        {"encoder_filters", mcfg.encoder_filters},
        {"decoder_filters", mcfg.decoder_filters},
        {"upsample", mcfg.upsample_kind == model::UpsampleKind::transposed ? "transposed"
                                                                           : "nearest"},
        {"transformer",
         {{"depth", mcfg.transformer.depth},
          {"heads", mcfg.transformer.heads},
          {"model_dim", mcfg.transformer.model_dim},
          {"mlp_hidden", mcfg.transformer.mlp_hidden},
          {"patch_size", mcfg.transformer.patch_size},
          {"tokens", mcfg.transformer.num_tokens()}}}};
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << j.dump(2) << "\n";
}

} // namespace

TrainResult train(model::ModelWeightsT<float>& weights, const data::DatasetIndex& train_index,
                  const data::DatasetIndex& val_index, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const EpochObserver& observer) {
    config.validate();
    std::filesystem::create_directories(out_dir);

    BatchStream train_stream(train_index, config.batch_size, /*shuffle=*/true, config.seed,
                             config.target_hw);
    BatchStream val_stream(val_index, config.batch_size, /*shuffle=*/false, config.seed,
                           config.target_hw);

    // parameter handles stay alive for the whole run
    auto named = weights.named_parameters();
    std::vector<Tensor> params;
    params.reserve(named.size());
    for (auto& [name, t] : named) params.push_back(t);
    AdamState adam(std::move(params), config.lr0);

    CallbackState cb;
    cb.current_lr = config.lr0;
    cb.plateau_patience = config.plateau_patience;
    cb.plateau_factor = config.plateau_factor;
    cb.stop_patience = config.stop_patience;
    cb.best_weights_path = out_dir / "best.futw";

    write_run_json(out_dir / "run.json", config, weights.config);

    TrainResult result;
    result.best_weights = cb.best_weights_path;
    result.history_csv = out_dir / "history.csv";

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        weights.set_mode(layers::Mode::train);
        metrics::MetricAccumulator train_acc;
        const std::size_t batches = train_stream.batch_count();
        for (std::size_t bi = 0; bi < batches; ++bi) {
            metrics::Batch batch = train_stream.load_batch(epoch, bi);
            try {
                Tape tape(true);
                Tensor probs = model::forward(tape, batch.images, weights);
                Tensor loss = metrics::bce_loss(tape, probs, batch.masks);
                if (!std::isfinite(static_cast<double>(loss.value())))
                    throw ContractError("non-finite training loss");
                train_acc.add_batch(probs, batch.masks);
                tape.backward(loss);
            } catch (const ContractError& e) {
                // surface where the run diverged
                throw ContractError(std::string(e.what()) + " (epoch " +
                                    std::to_string(epoch) + ", batch " + std::to_string(bi) +
                                    ", lr " + std::to_string(adam.lr()) + ")");
            }
            adam.step();
            adam.zero_grads();
        }

        EpochLog log;
        log.epoch = epoch;
        log.train = train_acc.report();
        log.val = metrics::evaluate(weights, val_stream.all_batches(epoch));
        log.lr = adam.lr();
        result.history.push_back(log);

        const double val_loss = log.val.loss;
        checkpoint(cb, val_loss, weights);
        adam.set_lr(reduce_lr_on_plateau(cb, val_loss));
        const StopDecision decision = early_stopping(cb, val_loss, weights);
        commit_epoch(cb, val_loss);
        if (decision == StopDecision::stop) {
            result.early_stopped = true;
            break;
        }
        if (observer && observer(log)) break;
    }

    std::ofstream os(result.history_csv, std::ios::trunc);
    if (!os) throw IoError("cannot write " + result.history_csv.string());
    os << history_csv_header() << "\n";
    for (const auto& log : result.history) os << history_csv_row(log) << "\n";
    return result;
}

} // namespace futu::training
