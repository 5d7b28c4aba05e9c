#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "minidl/dataset.hpp"
#include "minidl/image.hpp"
#include "minidl/rng.hpp"

// Synthetic two-class image data: each class carries a bright square patch
// in a class-specific region (top-left vs bottom-right), jittered per
// sample, over uniform background noise. The classes are separable by
// construction (the patch regions never overlap), which makes the data a
// controlled fixture for training, selection and attribution experiments.

namespace minidl {

struct ToyConfig {
    int image_size = 48;
    int patch_size = 12;
    int jitter = 8;  // patch corner offset range per axis
    float noise_lo = 0.05f;
    float noise_hi = 0.35f;
    float patch_lo = 0.70f;
    float patch_hi = 0.95f;
};

struct ToySample {
    Image image;
    int label = 0;
    int patch_x = 0;  // top-left corner of the bright patch
    int patch_y = 0;
    int patch_size = 0;

    bool in_patch(int x, int y) const {
        return x >= patch_x && x < patch_x + patch_size && y >= patch_y && y < patch_y + patch_size;
    }
};

inline ToySample make_toy_sample(const ToyConfig& cfg, int label, Rng& rng) {
    ToySample s;
    s.label = label;
    s.patch_size = cfg.patch_size;
    Image img(cfg.image_size, cfg.image_size, 3);
    for (float& v : img.pixels) v = static_cast<float>(rng.uniform(cfg.noise_lo, cfg.noise_hi));

    const int lo = 2;  // corner in [lo, lo + jitter]
    const int jx = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.jitter + 1)));
    const int jy = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.jitter + 1)));
    if (label == 0) {
        s.patch_x = jx;
        s.patch_y = jy;
    } else {
        s.patch_x = cfg.image_size - cfg.patch_size - jx;
        s.patch_y = cfg.image_size - cfg.patch_size - jy;
    }
    for (int y = s.patch_y; y < s.patch_y + cfg.patch_size; ++y)
        for (int x = s.patch_x; x < s.patch_x + cfg.patch_size; ++x) {
            const float v = static_cast<float>(rng.uniform(cfg.patch_lo, cfg.patch_hi));
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
        }
    s.image = std::move(img);
    return s;
}

inline std::vector<ToySample> make_toy_samples(const ToyConfig& cfg, int per_class, Rng& rng) {
    std::vector<ToySample> out;
    out.reserve(static_cast<std::size_t>(per_class) * 2);
    for (int label = 0; label < 2; ++label)
        for (int i = 0; i < per_class; ++i) out.push_back(make_toy_sample(cfg, label, rng));
    return out;
}

// Normalized [N,3,H,W] stack straight from toy samples (no disk roundtrip).
template <class S>
TensorDataset<S> toy_tensor_dataset(const std::vector<ToySample>& samples, double mean = 0.5,
                                    double stddev = 0.5) {
    if (samples.empty()) throw EmptyDatasetError("no toy samples");
    const Image& first = samples.front().image;
    TensorDataset<S> ds;
    ds.images = Tensor<S>(
        {static_cast<int>(samples.size()), first.channels, first.height, first.width});
    ds.labels.resize(samples.size());
    const std::int64_t stride =
        static_cast<std::int64_t>(first.channels) * first.height * first.width;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Tensor<S> t = normalize<S>(samples[i].image, mean, stddev);
        std::copy_n(t.data(), stride, ds.images.data() + static_cast<std::int64_t>(i) * stride);
        ds.labels[i] = samples[i].label;
    }
    return ds;
}

// Writes samples as <root>/<class_name>/toy_<index>.ppm; class names sort
// to label order. Returns the written samples' paths alongside metadata.
struct WrittenToySample {
    std::filesystem::path path;
    int label;
    int patch_x, patch_y, patch_size;
};

inline std::vector<WrittenToySample> write_toy_dataset(const std::vector<ToySample>& samples,
                                                       const std::filesystem::path& root) {
    const std::string class_names[2] = {"class_a", "class_b"};
    std::filesystem::create_directories(root / class_names[0]);
    std::filesystem::create_directories(root / class_names[1]);
    std::vector<WrittenToySample> out;
    int counter[2] = {0, 0};
    for (const auto& s : samples) {
        char name[32];
        std::snprintf(name, sizeof(name), "toy_%04d.ppm", counter[s.label]++);
        const auto path = root / class_names[s.label] / name;
        save_image(s.image, path);
        out.push_back({path, s.label, s.patch_x, s.patch_y, s.patch_size});
    }
    return out;
}

// A fixed deterministic pattern (bright disc on a diagonal ramp); the
// single-mode target for small GAN fitting runs.
inline Image toy_pattern_image(int size) {
    Image img(size, size, 3);
    const double r = size / 4.0;
    const double cx = size / 2.0, cy = size / 2.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double ramp = 0.15 + 0.25 * (x + y) / (2.0 * size);
            const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
            const double v = d <= r ? 0.9 : ramp;
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(v);
        }
    return img;
}

}  // namespace minidl
