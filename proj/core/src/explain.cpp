#include "futu/explain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace futu::explain {

CamMap cam_from_activations(const Tensor& activations, const std::vector<float>& grads) {
    if (activations.rank() != 4 || activations.dim(0) != 1)
        throw ContractError("cam_from_activations: expected a [1,H,W,C] activation slab, got " +
                            shape_str(activations.shape()));
    if (grads.size() != activations.numel())
        throw ContractError("cam_from_activations: gradient buffer size mismatch");
    const std::size_t h = activations.dim(1), w = activations.dim(2), c = activations.dim(3);
    const double hw = static_cast<double>(h * w);

    std::vector<double> alpha(c, 0.0);
    for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t k = 0; k < c; ++k) alpha[k] += grads[i * c + k];
    for (double& a : alpha) a /= hw;

    CamMap cam;
    cam.height = h;
    cam.width = w;
    cam.values.resize(h * w);
    double max_v = 0.0;
    const float* act = activations.ptr();
    for (std::size_t i = 0; i < h * w; ++i) {
        double v = 0.0;
        for (std::size_t k = 0; k < c; ++k) v += alpha[k] * act[i * c + k];
        v = std::max(v, 0.0);
        cam.values[i] = static_cast<float>(v);
        max_v = std::max(max_v, v);
    }
    if (max_v > 0.0)
        for (float& v : cam.values) v = static_cast<float>(v / max_v);
    cam.normalized = true;
    return cam;
}

const std::vector<std::string>& gradcam_layers() {
    static const std::vector<std::string> layers{"dec1", "dec2", "dec3", "dec4", "head"};
    return layers;
}

CamMap gradcam(model::ModelWeightsT<float>& weights, const Tensor& image,
               const std::string& target_layer, double threshold) {
    const auto& valid = gradcam_layers();
    if (std::find(valid.begin(), valid.end(), target_layer) == valid.end()) {
        std::ostringstream os;
        os << "unknown Grad-CAM layer '" << target_layer << "'; valid targets:";
        for (const auto& name : valid) os << " " << name;
        throw ConfigError(os.str());
    }
    if (image.rank() != 4 || image.dim(0) != 1)
        throw ContractError("gradcam: expected a single [1,H,W,C] image, got " +
                            shape_str(image.shape()));

    weights.set_mode(layers::Mode::infer);
    Tape tape(true);
    auto trace = model::forward_full(tape, image, weights);

    // target scalar: mean logit over predicted-positive pixels (all pixels
    // when the prediction is empty)
    const std::size_t pixels = trace.probs.numel();
    Tensor sel(trace.probs.shape());
    std::size_t count = 0;
    for (std::size_t i = 0; i < pixels; ++i)
        if (trace.probs.data()[i] > static_cast<float>(threshold)) {
            sel.data()[i] = 1.0f;
            ++count;
        }
    if (count == 0) {
        std::fill(sel.data().begin(), sel.data().end(), 1.0f);
        count = pixels;
    }
    Tensor target = ops::scale(tape, ops::sum_all(tape, ops::mul(tape, trace.logits, sel)),
                               1.0f / static_cast<float>(count));
    tape.backward(target);

    const Tensor& acts = target_layer == "head"
                             ? trace.logits
                             : trace.dec[static_cast<std::size_t>(target_layer[3] - '1')];
    if (!acts.has_grad())
        throw ContractError("gradcam: no gradient reached layer '" + target_layer + "'");
    return cam_from_activations(acts, acts.grad());
}

CamMap upsample_cam(const CamMap& cam, std::size_t target_h, std::size_t target_w) {
    if (target_h == 0 || target_w == 0)
        throw ContractError("upsample_cam: zero target size");
    if (cam.values.size() != cam.height * cam.width)
        throw ContractError("upsample_cam: malformed cam buffer");
    CamMap out;
    out.height = target_h;
    out.width = target_w;
    out.normalized = cam.normalized;
    out.values = img::resize_bilinear(cam.values, cam.height, cam.width, 1, target_h, target_w);
    return out;
}

std::array<std::uint8_t, 3> cam_color(float v) {
    v = std::clamp(v, 0.0f, 1.0f);
    // stops: blue, green, yellow, red at v = 0, 1/3, 2/3, 1
    static constexpr float stops[4][3] = {
        {0, 0, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}};
    const float scaled = v * 3.0f;
    const std::size_t seg = std::min<std::size_t>(2, static_cast<std::size_t>(scaled));
    const float t = scaled - seg;
    std::array<std::uint8_t, 3> rgb{};
    for (std::size_t c = 0; c < 3; ++c) {
        const float val = stops[seg][c] + (stops[seg + 1][c] - stops[seg][c]) * t;
        rgb[c] = static_cast<std::uint8_t>(std::lround(val));
    }
    return rgb;
}

img::ImageU8 render_overlay(const img::ImageU8& image, const std::vector<float>& layer,
                            const OverlayConfig& config) {
    if (image.channels != 3)
        throw ContractError("render_overlay: expected an RGB image");
    if (layer.size() != image.width * image.height)
        throw ContractError("render_overlay: layer size " + std::to_string(layer.size()) +
                            " does not match image " + std::to_string(image.width) + "x" +
                            std::to_string(image.height));
    if (config.alpha < 0.0 || config.alpha > 1.0)
        throw ContractError("render_overlay: alpha must lie in [0,1]");
    img::ImageU8 out = image;
    for (std::size_t i = 0; i < layer.size(); ++i) {
        const float w = std::clamp(layer[i], 0.0f, 1.0f);
        const double aw = config.alpha * w;
        const auto color = cam_color(w);
        for (std::size_t c = 0; c < 3; ++c) {
            const double blended = (1.0 - aw) * image.pixels[i * 3 + c] + aw * color[c];
            out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(blended));
        }
    }
    return out;
}

img::ImageU8 render_side_by_side(const img::ImageU8& image, const metrics::Mask& predicted_mask) {
    if (image.channels != 3)
        throw ContractError("render_side_by_side: expected an RGB image");
    if (predicted_mask.size() != image.width * image.height)
        throw ContractError("render_side_by_side: mask size does not match image height " +
                            std::to_string(image.height) + " x width " +
                            std::to_string(image.width));
    constexpr std::size_t separator = 4;
    img::ImageU8 out;
    out.height = image.height;
    out.width = 2 * image.width + separator;
    out.channels = 3;
    out.pixels.assign(out.size_bytes(), 255); // separator stays white
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c)
                out.pixels[(y * out.width + x) * 3 + c] = image.at(y, x, c);
            const std::uint8_t gray = predicted_mask[y * image.width + x] ? 255 : 0;
            const std::size_t px = image.width + separator + x;
            for (std::size_t c = 0; c < 3; ++c) out.pixels[(y * out.width + px) * 3 + c] = gray;
        }
    }
    return out;
}

} // namespace futu::explain
