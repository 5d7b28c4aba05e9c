#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "minidl/errors.hpp"
#include "minidl/image.hpp"
#include "minidl/rng.hpp"
#include "minidl/tensor.hpp"

// Directory-per-class dataset loading with a deterministic stratified
// train/validation split. Class labels are assigned by sorted subdirectory
// name, so they are dense from 0 and stable across runs.

namespace minidl {

struct LabeledDataset {
    struct Sample {
        std::filesystem::path path;
        int label = 0;
    };

    std::vector<Sample> samples;          // sorted by (class, filename)
    std::vector<std::string> class_names;  // sorted lexicographically
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    std::vector<std::string> skipped;  // files that failed to decode

    std::size_t size() const { return samples.size(); }
    int num_classes() const { return static_cast<int>(class_names.size()); }
};

// Splits sample indices into train/validation, stratified by class: per
// class, floor(fraction * count) samples go to validation, chosen by a
// seeded shuffle. The returned lists are sorted, disjoint and exhaustive.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, int num_classes, double val_fraction, Rng& rng) {
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw DomainError("val_fraction must be in [0,1)");
    std::vector<std::size_t> train, val;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(i);
        rng.shuffle(idx);
        const std::size_t n_val = static_cast<std::size_t>(val_fraction * static_cast<double>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_val ? val : train).push_back(idx[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {std::move(train), std::move(val)};
}

// Loads <root>/<class_name>/<image files>. Files that fail to decode are
// recorded in `skipped` and dropped; an entirely undecodable class (or an
// empty folder) is an error.
inline LabeledDataset load_dataset(const std::filesystem::path& root, double val_fraction,
                                   Rng& rng) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw EmptyDatasetError(root.string() + " is not a directory");

    std::vector<std::string> class_names;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_names.push_back(entry.path().filename().string());
    std::sort(class_names.begin(), class_names.end());
    if (class_names.empty()) throw EmptyDatasetError("no class folders under " + root.string());

    LabeledDataset ds;
    ds.class_names = class_names;
    for (int label = 0; label < static_cast<int>(class_names.size()); ++label) {
        const fs::path class_dir = root / class_names[static_cast<std::size_t>(label)];
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        std::size_t decoded = 0;
        for (const auto& file : files) {
            try {
                (void)load_image(file);  // validates format up front
                ds.samples.push_back({file, label});
                ++decoded;
            } catch (const Error& e) {
                ds.skipped.push_back(e.what());
            }
        }
        if (decoded == 0)
            throw EmptyDatasetError("class folder '" + class_names[static_cast<std::size_t>(label)] +
                                    "' has no decodable images");
    }

    std::vector<int> labels(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) labels[i] = ds.samples[i].label;
    std::tie(ds.train_indices, ds.val_indices) =
        stratified_split(labels, ds.num_classes(), val_fraction, rng);
    return ds;
}

// In-memory image stack [N,C,H,W] with labels, normalized to [-1,1] by
// default. The universal input format of the training loops.
template <class S>
struct TensorDataset {
    Tensor<S> images;  // [N,C,H,W]
    std::vector<int> labels;

    std::int64_t size() const { return labels.empty() ? 0 : images.dim(0); }
    int channels() const { return images.dim(1); }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }

    Tensor<S> sample_batch(const std::vector<std::size_t>& indices) const {
        const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
        const std::int64_t stride = static_cast<std::int64_t>(c) * h * w;
        Tensor<S> batch({static_cast<int>(indices.size()), c, h, w});
        for (std::size_t i = 0; i < indices.size(); ++i)
            std::copy_n(images.data() + static_cast<std::int64_t>(indices[i]) * stride, stride,
                        batch.data() + static_cast<std::int64_t>(i) * stride);
        return batch;
    }

    std::vector<int> label_batch(const std::vector<std::size_t>& indices) const {
        std::vector<int> out(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
        return out;
    }
};

// Loads, converts to `channels`, resizes to size x size, and normalizes the
// selected samples of a LabeledDataset.
template <class S>
TensorDataset<S> make_tensor_dataset(const LabeledDataset& ds,
                                     const std::vector<std::size_t>& indices, int size,
                                     int channels = 3, double mean = 0.5, double stddev = 0.5) {
    if (indices.empty()) throw EmptyDatasetError("no samples selected");
    TensorDataset<S> out;
    out.images = Tensor<S>({static_cast<int>(indices.size()), channels, size, size});
    out.labels.resize(indices.size());
    const std::int64_t stride = static_cast<std::int64_t>(channels) * size * size;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& sample = ds.samples[indices[i]];
        Image img = load_image(sample.path);
        if (channels == 3 && img.channels == 1) img = luma_to_rgb(img);
        if (channels == 1 && img.channels == 3) img = rgb_to_luma(img);
        img = resize_bilinear(img, size, size);
        Tensor<S> t = normalize<S>(img, mean, stddev);
        std::copy_n(t.data(), stride, out.images.data() + static_cast<std::int64_t>(i) * stride);
        out.labels[i] = sample.label;
    }
    return out;
}

}  // namespace minidl
