#pragma once

#include <array>
#include <string>
#include <vector>

#include "futu/image.hpp"
#include "futu/metrics.hpp"
#include "futu/model.hpp"

// Grad-CAM extraction and the qualitative renderers: heat-map overlays and
// side-by-side input/prediction panels.
namespace futu::explain {

// Non-negative activation map at the target layer's spatial resolution;
// max-normalized to 1 unless identically zero.
struct CamMap {
    std::size_t height = 0, width = 0;
    std::vector<float> values;
    bool normalized = false;

    float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

struct OverlayConfig {
    double alpha = 0.45; // blend weight in [0,1]
};

// Channel weights are the spatial means of the gradients:
//   alpha_k = mean_{y,x} dA[y,x,k];  map = relu(sum_k alpha_k A[..,k]),
// then max-normalization. activations/grads are one [1,H,W,C] slab.
CamMap cam_from_activations(const Tensor& activations, const std::vector<float>& grads);

// Valid Grad-CAM target layers: the four decoder block outputs and the
// 1x1 head logits.
const std::vector<std::string>& gradcam_layers();

// Runs one infer-mode forward with gradients enabled, backpropagates the
// target scalar (mean head logit over pixels predicted above `threshold`,
// or over all pixels when none are), and reduces the target layer's
// activations and gradients to a CamMap.
CamMap gradcam(model::ModelWeightsT<float>& weights, const Tensor& image,
               const std::string& target_layer = "dec4", double threshold = 0.5);

// Bilinear resize to the input resolution; values stay within [0,1].
CamMap upsample_cam(const CamMap& cam, std::size_t target_h, std::size_t target_w);

// Piecewise-linear blue -> green -> yellow -> red ramp over [0,1]:
// stops (0,0,255) at 0, (0,255,0) at 1/3, (255,255,0) at 2/3, (255,0,0) at 1.
std::array<std::uint8_t, 3> cam_color(float v);

// out = (1 - alpha*w) * image + alpha*w * color(w) per pixel, where w is the
// layer value (1 at mask pixels). The layer must be at image resolution.
img::ImageU8 render_overlay(const img::ImageU8& image, const std::vector<float>& layer,
                            const OverlayConfig& config = {});

// Horizontal input | prediction panel with a 4-pixel white separator; the
// mask renders as grayscale 0/255.
img::ImageU8 render_side_by_side(const img::ImageU8& image, const metrics::Mask& predicted_mask);

} // namespace futu::explain
