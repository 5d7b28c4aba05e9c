#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "minidl/image.hpp"
#include "minidl/model.hpp"

// Grad-CAM: channel weights are the spatial average of d(logit)/d(activation)
// at a convolutional layer; the weighted activation sum is ReLU-clamped,
// upsampled to the input resolution and min-max normalized.

namespace minidl {

struct Heatmap {
    int width = 0;
    int height = 0;
    std::vector<float> values;  // in [0,1]; max is 1 unless the raw map was all zero
    int target_class = 0;
    int source_layer = 0;

    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

    Image to_image() const {
        Image img(width, height, 1);
        img.pixels.assign(values.begin(), values.end());
        return img;
    }
};

namespace detail {

// Bilinear upsample of a raw (unnormalized) plane, half-pixel centers.
inline std::vector<double> resize_plane(const std::vector<double>& in, int w, int h, int out_w,
                                        int out_h) {
    std::vector<double> out(static_cast<std::size_t>(out_w) * out_h);
    const double sx = static_cast<double>(w) / out_w;
    const double sy = static_cast<double>(h) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double ty = fy - y0;
        const int y1 = std::min(std::max(y0 + 1, 0), h - 1);
        y0 = std::min(std::max(y0, 0), h - 1);
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double tx = fx - x0;
            const int x1 = std::min(std::max(x0 + 1, 0), w - 1);
            x0 = std::min(std::max(x0, 0), w - 1);
            const double top = (1.0 - tx) * in[static_cast<std::size_t>(y0) * w + x0] +
                               tx * in[static_cast<std::size_t>(y0) * w + x1];
            const double bot = (1.0 - tx) * in[static_cast<std::size_t>(y1) * w + x0] +
                               tx * in[static_cast<std::size_t>(y1) * w + x1];
            out[static_cast<std::size_t>(y) * out_w + x] = (1.0 - ty) * top + ty * bot;
        }
    }
    return out;
}

inline bool is_activation(const LayerSpec& spec) {
    return std::holds_alternative<ReluSpec>(spec) || std::holds_alternative<LeakyReluSpec>(spec) ||
           std::holds_alternative<SigmoidSpec>(spec) || std::holds_alternative<TanhSpec>(spec);
}

}  // namespace detail

// Deepest activation layer that still produces a spatial (4-D) output; the
// default Grad-CAM target.
template <class S>
int deepest_spatial_activation(const Model<S>& model, const ForwardTrace<S>& trace) {
    for (int i = static_cast<int>(model.layers().size()) - 1; i >= 0; --i) {
        if (detail::is_activation(model.layers()[static_cast<std::size_t>(i)].spec) &&
            trace.outputs[static_cast<std::size_t>(i)].value().ndim() == 4)
            return i;
    }
    throw LayerNotFoundError("model has no spatial activation layer");
}

// Heatmap for one image ([C,H,W] or [1,C,H,W]) and target class. layer < 0
// selects the deepest spatial activation. Gradients are taken with respect
// to the pre-softmax logit; the model runs in eval mode for the duration.
template <class S>
Heatmap gradcam(Model<S>& model, const Tensor<S>& image, int target_class, int layer = -1) {
    Tensor<S> input = image;
    if (input.ndim() == 3) input = input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)});
    if (input.ndim() != 4 || input.dim(0) != 1)
        throw ShapeError("gradcam expects a single image [C,H,W] or [1,C,H,W]");
    const int in_h = input.dim(2), in_w = input.dim(3);

    const bool was_training = model.training();
    model.set_training(false);
    Graph<S> g;
    ForwardTrace<S> trace;
    Var<S> logits = model.forward(g, g.input(input), nullptr, &trace);
    model.set_training(was_training);

    if (logits.value().ndim() != 2 || logits.shape()[0] != 1)
        throw ShapeError("gradcam: model does not produce [1,K] logits");
    const int k = logits.shape()[1];
    if (target_class < 0 || target_class >= k)
        throw IndexError("gradcam: class " + std::to_string(target_class) + " out of 0.." +
                         std::to_string(k - 1));

    if (layer < 0) {
        layer = deepest_spatial_activation(model, trace);
    } else {
        if (layer >= static_cast<int>(trace.outputs.size()))
            throw LayerNotFoundError("layer " + std::to_string(layer) + " out of range");
        if (trace.outputs[static_cast<std::size_t>(layer)].value().ndim() != 4)
            throw LayerNotFoundError("layer " + std::to_string(layer) +
                                     " has no spatial activation output");
    }

    Var<S> target_logit = index_scalar(logits, target_class);
    g.backward(target_logit);

    Var<S> act = trace.outputs[static_cast<std::size_t>(layer)];
    const int channels = act.shape()[1], ah = act.shape()[2], aw = act.shape()[3];
    const std::int64_t plane = static_cast<std::int64_t>(ah) * aw;
    const S* a = act.value().data();
    const S* da = g.has_grad(act.id) ? g.grad(act.id) : nullptr;

    // alpha_k = spatial mean of the gradient; raw = ReLU(sum_k alpha_k A_k)
    std::vector<double> raw(static_cast<std::size_t>(plane), 0.0);
    for (int c = 0; c < channels; ++c) {
        double alpha = 0.0;
        if (da) {
            for (std::int64_t i = 0; i < plane; ++i) alpha += static_cast<double>(da[c * plane + i]);
            alpha /= static_cast<double>(plane);
        }
        for (std::int64_t i = 0; i < plane; ++i)
            raw[static_cast<std::size_t>(i)] += alpha * static_cast<double>(a[c * plane + i]);
    }
    for (double& v : raw) v = std::max(0.0, v);

    std::vector<double> up = detail::resize_plane(raw, aw, ah, in_w, in_h);

    double lo = up[0], hi = up[0];
    for (double v : up) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Heatmap hm;
    hm.width = in_w;
    hm.height = in_h;
    hm.target_class = target_class;
    hm.source_layer = layer;
    hm.values.resize(up.size());
    if (hi <= 0.0) {
        // all-zero raw map stays all-zero
        std::fill(hm.values.begin(), hm.values.end(), 0.0f);
    } else if (hi == lo) {
        std::fill(hm.values.begin(), hm.values.end(), 1.0f);
    } else {
        for (std::size_t i = 0; i < up.size(); ++i)
            hm.values[i] = static_cast<float>((up[i] - lo) / (hi - lo));
    }
    return hm;
}

// Alpha-blend of a blue-to-red colormap over the grayscale image:
//   out = (1 - alpha) * gray + alpha * (v, 0, 1 - v)   with alpha = 0.4.
inline Image overlay(const Heatmap& hm, const Image& base, double alpha = 0.4) {
    if (base.width != hm.width || base.height != hm.height)
        throw ShapeError("overlay: heatmap and image sizes differ");
    const Image gray = rgb_to_luma(base);
    Image out(hm.width, hm.height, 3);
    for (int y = 0; y < hm.height; ++y)
        for (int x = 0; x < hm.width; ++x) {
            const double g = gray.at(x, y, 0);
            const double v = hm.at(x, y);
            out.at(x, y, 0) = static_cast<float>((1.0 - alpha) * g + alpha * v);
            out.at(x, y, 1) = static_cast<float>((1.0 - alpha) * g);
            out.at(x, y, 2) = static_cast<float>((1.0 - alpha) * g + alpha * (1.0 - v));
        }
    return out;
}

}  // namespace minidl
