#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "futu/data_io.hpp"
#include "futu/metrics.hpp"
#include "futu/model.hpp"

// Optimization protocol: Adam, the epoch-end callback trio (checkpoint on
// improved validation loss, LR halving on plateau, early stopping with
// best-weight restoration), the deterministic batch generator, and the
// training loop itself.
namespace futu::training {

struct TrainConfig {
    double lr0 = 0.001;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 50;
    std::size_t plateau_patience = 10;
    double plateau_factor = 0.5;
    std::size_t stop_patience = 10;
    std::uint64_t seed = 0;
    std::size_t target_hw = 256;

    void validate() const {
        if (lr0 <= 0 || batch_size == 0 || max_epochs == 0 || plateau_patience == 0 ||
            stop_patience == 0 || target_hw == 0)
            throw ConfigError("train config fields must be positive");
        if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
            throw ConfigError("plateau factor must lie in (0,1)");
    }
};

// Adam with bias correction; epsilon is added outside the square root:
// p <- p - lr * m_hat / (sqrt(v_hat) + eps).
template <typename S>
class AdamStateT {
public:
    AdamStateT(std::vector<TensorT<S>> params, double lr, S beta1 = S(0.9), S beta2 = S(0.999),
               S eps = S(1e-7))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), S(0));
            v_.emplace_back(p.numel(), S(0));
        }
    }

    // One update from the gradients currently accumulated on the parameters;
    // parameters without a gradient buffer are treated as zero-gradient.
    void step() {
        ++t_;
        const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), t_));
        const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), t_));
        const S lr = static_cast<S>(lr_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].data();
            const bool has_grad = params_[i].has_grad();
            const std::vector<S>* g = has_grad ? &params_[i].grad() : nullptr;
            for (std::size_t j = 0; j < p.size(); ++j) {
                const S gj = g ? (*g)[j] : S(0);
                m_[i][j] = beta1_ * m_[i][j] + (S(1) - beta1_) * gj;
                v_[i][j] = beta2_ * v_[i][j] + (S(1) - beta2_) * gj * gj;
                const S mhat = m_[i][j] / bc1;
                const S vhat = v_[i][j] / bc2;
                p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grads() {
        for (auto& p : params_) p.zero_grad();
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    std::size_t t() const { return t_; }

private:
    std::vector<TensorT<S>> params_;
    std::vector<std::vector<S>> m_, v_;
    double lr_;
    S beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

using AdamState = AdamStateT<float>;

// Shared epoch-end state for the callback trio. All three callbacks judge
// "improvement" against the best validation loss of *previous* epochs;
// commit_epoch folds the current loss in after they have run.
struct CallbackState {
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t epochs_since_improve_lr = 0;
    std::size_t epochs_since_improve_stop = 0;
    std::filesystem::path best_weights_path;
    double current_lr = 0.001;
    std::size_t plateau_patience = 10;
    double plateau_factor = 0.5;
    std::size_t stop_patience = 10;

    bool improved(double val_loss) const { return val_loss < best_val_loss; }
};

// Saves weights to best_weights_path iff the validation loss strictly
// improved. Returns true when a snapshot was written.
bool checkpoint(CallbackState& cb, double val_loss, model::ModelWeightsT<float>& weights);

// Halves current_lr once the no-improvement run reaches the patience; the
// plateau counter resets after each halving. Returns the (possibly reduced) rate.
double reduce_lr_on_plateau(CallbackState& cb, double val_loss);

enum class StopDecision { continue_training, stop };

// Stops after `stop_patience` consecutive non-improving epochs, restoring the
// checkpointed best weights bitwise.
StopDecision early_stopping(CallbackState& cb, double val_loss,
                            model::ModelWeightsT<float>& weights);

// Folds the epoch's validation loss into best_val_loss; call after the trio.
void commit_epoch(CallbackState& cb, double val_loss);

// Deterministic batch source over a labeled dataset index. Images are
// bilinearly resized to target_hw and scaled to [0,1]; masks are resized
// nearest-neighbor and binarized to {0,1}. The shuffle order is a pure
// function of (seed, epoch); the final partial batch is kept.
class BatchStream {
public:
    BatchStream(data::DatasetIndex index, std::size_t batch_size, bool shuffle,
                std::uint64_t seed, std::size_t target_hw);

    std::size_t batch_count() const;
    std::size_t item_count() const { return index_.size(); }
    std::vector<std::size_t> permutation(std::size_t epoch) const;
    metrics::Batch load_batch(std::size_t epoch, std::size_t batch_index) const;
    std::vector<metrics::Batch> all_batches(std::size_t epoch) const;

private:
    data::DatasetIndex index_;
    std::size_t batch_size_;
    bool shuffle_;
    std::uint64_t seed_;
    std::size_t target_hw_;
};

struct EpochLog {
    std::size_t epoch = 0; // 1-based
    metrics::MetricsReport train;
    metrics::MetricsReport val;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> history;
    std::filesystem::path best_weights;
    std::filesystem::path history_csv;
    bool early_stopped = false;
};

// Optional per-epoch observer; returning true requests an immediate stop
// (without best-weight restoration).
using EpochObserver = std::function<bool(const EpochLog&)>;

// Full protocol: per epoch, forward/BCE/backward/Adam over shuffled train
// batches (train-side metrics are the running batch averages), then a
// validation pass, then checkpoint -> reduce_lr -> early_stopping. Writes
// history.csv, run.json and best.futw under out_dir. Aborts with diagnostics
// on a non-finite loss.
TrainResult train(model::ModelWeightsT<float>& weights, const data::DatasetIndex& train_index,
                  const data::DatasetIndex& val_index, const TrainConfig& config,
                  const std::filesystem::path& out_dir, const EpochObserver& observer = {});

std::string history_csv_header();
std::string history_csv_row(const EpochLog& log);

} // namespace futu::training
