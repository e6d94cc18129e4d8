#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "futu/model.hpp"
#include "futu/ops.hpp"
#include "futu/tape.hpp"
#include "futu/tensor.hpp"

// Evaluation and loss mathematics: epsilon-stabilized Dice, IoU, pixel
// accuracy over binarized masks, and binary cross-entropy.
namespace futu::metrics {

struct MetricConfig {
    double epsilon = 1e-6;   // stabilizes overlap-ratio divisions
    double threshold = 0.5;  // strict: pixel is foreground iff p > threshold
    double bce_clamp = 1e-7;
};

struct ConfusionCounts {
    std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::uint64_t total() const { return tp + tn + fp + fn; }
};

// One evaluation pass over a labeled set.
struct MetricsReport {
    double loss = 0.0;
    double accuracy = 0.0;
    double dice = 0.0;
    double iou = 0.0;
};

using Mask = std::vector<std::uint8_t>; // one byte per pixel, values {0,1}

// Strict thresholding: 1 iff p > threshold (exactly 0.5 maps to background).
// Values outside [0,1] violate the probability contract.
Mask binarize(const std::vector<float>& prob, double threshold = 0.5);

// 2|A n B| / (|A| + |B| + eps)
double dice(const Mask& pred, const Mask& truth, double eps = 1e-6);

// |A n B| / (|A u B| + eps)
double iou(const Mask& pred, const Mask& truth, double eps = 1e-6);

// (TP+TN) / total; the counts are reported through `counts` when non-null.
double pixel_accuracy(const Mask& pred, const Mask& truth, ConfusionCounts* counts = nullptr);

// Mean over elements of -[y ln p + (1-y) ln(1-p)] with p clamped to
// [c, 1-c]; differentiable w.r.t. prob (the clamp gates the gradient).
// `target` values must be exactly 0 or 1 and carry no gradient.
template <typename S>
TensorT<S> bce_loss(TapeT<S>& tape, const TensorT<S>& prob, const TensorT<S>& target,
                    S clamp = S(1e-7)) {
    if (prob.shape() != target.shape())
        throw ShapeError("bce_loss: prob " + shape_str(prob.shape()) + " vs target " +
                         shape_str(target.shape()));
    const std::size_t n = prob.numel();
    if (n == 0) throw ContractError("bce_loss: empty input");
    const S* pp = prob.ptr();
    const S* pt = target.ptr();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const S p = pp[i];
        const S y = pt[i];
        if (p < S(0) || p > S(1))
            throw ContractError("bce_loss: probability out of [0,1]: " + std::to_string(p));
        if (y != S(0) && y != S(1))
            throw ContractError("bce_loss: target is not binary: " + std::to_string(y));
        const S ph = std::min(std::max(p, clamp), S(1) - clamp);
        acc -= y * std::log(static_cast<double>(ph)) +
               (S(1) - y) * std::log(static_cast<double>(S(1) - ph));
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(acc / n), prob.requires_grad());
    if (tape.recording() && out.requires_grad()) {
        tape.record("bce_loss", {prob, target}, out, [prob, target, out, clamp, n]() mutable {
            const S g = out.grad()[0];
            auto& dp = prob.grad();
            const S* pp = prob.ptr();
            const S* pt = target.ptr();
            const S inv_n = S(1) / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const S p = pp[i];
                if (p < clamp || p > S(1) - clamp) continue; // clamp region: zero slope
                dp[i] += g * inv_n * (p - pt[i]) / (p * (S(1) - p));
            }
        });
    }
    return out;
}

// A labeled minibatch: images [B,H,W,C] in [0,1], masks [B,H,W,1] in {0,1}.
struct Batch {
    Tensor images;
    Tensor masks;
};

// Per-image Dice/IoU/accuracy on binarized predictions, averaged over
// images; BCE loss averaged over all pixels. The model runs in infer mode.
MetricsReport evaluate(model::ModelWeightsT<float>& weights, const std::vector<Batch>& batches,
                       const MetricConfig& config = {});

// Same aggregation over precomputed probability maps (used by the training
// loop to fold per-batch train metrics without a second forward pass).
class MetricAccumulator {
public:
    explicit MetricAccumulator(MetricConfig config = {}) : config_(config) {}

    // prob and mask are [B,H,W,1] slabs of the same shape.
    void add_batch(const Tensor& prob, const Tensor& mask);
    bool empty() const { return images_ == 0; }
    MetricsReport report() const;

private:
    MetricConfig config_;
    double loss_sum_ = 0.0; // summed per-pixel BCE
    double dice_sum_ = 0.0, iou_sum_ = 0.0, acc_sum_ = 0.0;
    std::uint64_t images_ = 0, pixels_ = 0;
};

} // namespace futu::metrics
