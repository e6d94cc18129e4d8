#include "futu/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace futu::metrics {

Mask binarize(const std::vector<float>& prob, double threshold) {
    Mask out(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) {
        const float p = prob[i];
        if (p < 0.0f || p > 1.0f)
            throw ContractError("binarize: probability out of [0,1]: " + std::to_string(p));
        out[i] = p > threshold ? 1 : 0;
    }
    return out;
}

namespace {

struct Overlap {
    double inter = 0, pred = 0, truth = 0;
};

Overlap overlap(const Mask& pred, const Mask& truth, const char* what) {
    if (pred.size() != truth.size())
        throw ShapeError(std::string(what) + ": mask sizes differ: " +
                         std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
    Overlap o;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        o.inter += pred[i] && truth[i];
        o.pred += pred[i] != 0;
        o.truth += truth[i] != 0;
    }
    return o;
}

} // namespace

double dice(const Mask& pred, const Mask& truth, double eps) {
    const Overlap o = overlap(pred, truth, "dice");
    return 2.0 * o.inter / (o.pred + o.truth + eps);
}

double iou(const Mask& pred, const Mask& truth, double eps) {
    const Overlap o = overlap(pred, truth, "iou");
    const double uni = o.pred + o.truth - o.inter;
    return o.inter / (uni + eps);
}

double pixel_accuracy(const Mask& pred, const Mask& truth, ConfusionCounts* counts) {
    if (pred.size() != truth.size())
        throw ShapeError("pixel_accuracy: mask sizes differ: " + std::to_string(pred.size()) +
                         " vs " + std::to_string(truth.size()));
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] && truth[i])
            ++c.tp;
        else if (!pred[i] && !truth[i])
            ++c.tn;
        else if (pred[i])
            ++c.fp;
        else
            ++c.fn;
    }
    if (counts) *counts = c;
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

void MetricAccumulator::add_batch(const Tensor& prob, const Tensor& mask) {
    if (prob.shape() != mask.shape())
        throw ShapeError("metrics: prob " + shape_str(prob.shape()) + " vs mask " +
                         shape_str(mask.shape()));
    const std::size_t batch = prob.dim(0);
    const std::size_t per_image = prob.numel() / batch;
    const double clamp = config_.bce_clamp;
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<float> slice(prob.data().begin() + b * per_image,
                                 prob.data().begin() + (b + 1) * per_image);
        Mask pred = binarize(slice, config_.threshold);
        Mask truth(per_image);
        for (std::size_t i = 0; i < per_image; ++i) {
            const float y = mask.data()[b * per_image + i];
            if (y != 0.0f && y != 1.0f)
                throw ContractError("metrics: mask is not binary: " + std::to_string(y));
            truth[i] = y != 0.0f;
        }
        dice_sum_ += dice(pred, truth, config_.epsilon);
        iou_sum_ += iou(pred, truth, config_.epsilon);
        acc_sum_ += pixel_accuracy(pred, truth);
        for (std::size_t i = 0; i < per_image; ++i) {
            const double p = std::min(std::max<double>(slice[i], clamp), 1.0 - clamp);
            const double y = truth[i];
            loss_sum_ -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        }
        ++images_;
        pixels_ += per_image;
    }
}

MetricsReport MetricAccumulator::report() const {
    if (images_ == 0) throw ContractError("metrics: empty evaluation set");
    MetricsReport r;
    r.loss = loss_sum_ / static_cast<double>(pixels_);
    r.accuracy = acc_sum_ / static_cast<double>(images_);
    r.dice = dice_sum_ / static_cast<double>(images_);
    r.iou = iou_sum_ / static_cast<double>(images_);
    return r;
}

MetricsReport evaluate(model::ModelWeightsT<float>& weights, const std::vector<Batch>& batches,
                       const MetricConfig& config) {
    weights.set_mode(layers::Mode::infer);
    MetricAccumulator acc(config);
    for (const Batch& batch : batches) {
        Tape tape(false);
        Tensor probs = model::forward(tape, batch.images, weights);
        acc.add_batch(probs, batch.masks);
    }
    return acc.report();
}

} // namespace futu::metrics
