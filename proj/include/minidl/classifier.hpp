#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "minidl/adam.hpp"
#include "minidl/dataset.hpp"
#include "minidl/model.hpp"

// The CNN classifier: two conv/pool blocks into a dropout-regularized
// fully-connected head, trained with cross-entropy and Adam.

namespace minidl {

struct ClassifierConfig {
    int input_size = 192;  // square input, must survive two 2x pools
    int in_channels = 3;
    int conv1_out = 16;
    int conv2_out = 32;
    int kernel = 3;
    int pad = 1;
    int pool = 2;
    int fc_units = 128;
    double dropout_p = 0.5;
    int num_classes = 2;
    int epochs = 10;
    int batch_size = 32;
    AdamConfig adam{0.001, 0.9, 0.999, 1e-8, 0.01};

    void validate() const {
        if (input_size < 4 || input_size % 4 != 0)
            throw ConfigError("classifier: input_size must be a positive multiple of 4");
        if (num_classes < 2) throw ConfigError("classifier: num_classes must be >= 2");
        if (conv1_out < 1 || conv2_out < 1 || fc_units < 1)
            throw ConfigError("classifier: layer widths must be positive");
        if (dropout_p < 0 || dropout_p >= 1) throw ConfigError("classifier: dropout_p in [0,1)");
        if (batch_size < 1) throw ConfigError("classifier: batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("classifier: epochs must be >= 0");
        adam.validate();
    }

    // Spatial extent after the two pool stages.
    int feature_size() const { return input_size / (pool * pool); }
    int flat_features() const { return conv2_out * feature_size() * feature_size(); }
};

struct TrainReport {
    std::vector<double> epoch_loss;          // mean training loss per epoch
    std::vector<double> epoch_val_accuracy;  // after each epoch
    double initial_val_accuracy = 0.0;
    double final_val_accuracy = 0.0;
    double best_val_accuracy = 0.0;
    double wall_seconds = 0.0;
};

struct Metrics {
    double accuracy = 0.0;
    std::vector<std::vector<std::int64_t>> confusion;  // rows: true class, cols: predicted

    std::int64_t total() const {
        std::int64_t n = 0;
        for (const auto& row : confusion)
            for (auto v : row) n += v;
        return n;
    }
};

// conv(C->16) + ReLU + pool, conv(16->32) + ReLU + pool, flatten,
// linear(->128) + ReLU + dropout, linear(128->K). Kaiming-uniform init.
template <class S>
Model<S> build_classifier(const ClassifierConfig& cfg, Rng& rng) {
    cfg.validate();
    Model<S> m;
    m.add_conv2d(cfg.in_channels, cfg.conv1_out, cfg.kernel, 1, cfg.pad,
                 WeightInit::KaimingUniform, &rng);
    m.add_relu();
    m.add_maxpool2d(cfg.pool, cfg.pool);
    m.add_conv2d(cfg.conv1_out, cfg.conv2_out, cfg.kernel, 1, cfg.pad,
                 WeightInit::KaimingUniform, &rng);
    m.add_relu();
    m.add_maxpool2d(cfg.pool, cfg.pool);
    m.add_flatten();
    m.add_linear(cfg.flat_features(), cfg.fc_units, WeightInit::KaimingUniform, &rng);
    m.add_relu();
    m.add_dropout(static_cast<float>(cfg.dropout_p));
    m.add_linear(cfg.fc_units, cfg.num_classes, WeightInit::KaimingUniform, &rng);
    return m;
}

// Argmax over logits (lowest index wins ties), accuracy and confusion
// counts. Dropout is forced off for the duration of the call.
template <class S>
Metrics evaluate(Model<S>& model, const TensorDataset<S>& data, int batch_size = 32) {
    const bool was_training = model.training();
    model.set_training(false);
    Metrics metrics;
    int num_classes = 0;
    for (int label : data.labels) num_classes = std::max(num_classes, label + 1);

    std::vector<std::size_t> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::vector<std::int64_t>> confusion;
    std::int64_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(end));
        Graph<S> g;
        NoGradGuard<S> guard(g);
        Var<S> logits = model.forward(g, g.input(data.sample_batch(batch)));
        const int k = logits.shape()[1];
        if (confusion.empty()) {
            num_classes = std::max(num_classes, k);
            confusion.assign(static_cast<std::size_t>(num_classes),
                             std::vector<std::int64_t>(static_cast<std::size_t>(num_classes), 0));
        }
        const S* pl = logits.value().data();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            int pred = 0;
            S best = pl[static_cast<std::int64_t>(i) * k];
            for (int j = 1; j < k; ++j) {
                const S v = pl[static_cast<std::int64_t>(i) * k + j];
                if (v > best) {
                    best = v;
                    pred = j;
                }
            }
            const int truth = data.labels[batch[i]];
            confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)] += 1;
            if (pred == truth) ++correct;
        }
    }
    metrics.confusion = std::move(confusion);
    metrics.accuracy = data.size() > 0 ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
    model.set_training(was_training);
    return metrics;
}

// cfg.epochs full passes over the training set, shuffled per epoch, with a
// validation accuracy measurement after each. Loss is asserted finite every
// step. With epochs == 0 the parameters are untouched and only the initial
// validation accuracy is reported.
template <class S>
TrainReport train_classifier(Model<S>& model, const TensorDataset<S>& train,
                             const TensorDataset<S>& val, const ClassifierConfig& cfg, Rng& rng,
                             const std::function<void(int, double, double)>& on_epoch = {}) {
    cfg.validate();
    if (train.size() == 0) throw EmptyDatasetError("training set is empty");
    const auto t0 = std::chrono::steady_clock::now();

    TrainReport report;
    report.initial_val_accuracy = evaluate(model, val, cfg.batch_size).accuracy;
    AdamState<S> state;

    std::vector<std::size_t> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        model.set_training(true);
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            Graph<S> g;
            Var<S> logits = model.forward(g, g.input(train.sample_batch(batch)), &rng);
            Var<S> loss = softmax_cross_entropy(logits, train.label_batch(batch));
            const double loss_value = static_cast<double>(loss.value().item());
            if (!std::isfinite(loss_value)) throw NumericError("training loss is not finite");
            model.zero_grad();
            g.backward(loss);
            adam_step(model.params(), state, cfg.adam);
            loss_sum += loss_value * static_cast<double>(batch.size());
        }
        report.epoch_loss.push_back(loss_sum / static_cast<double>(train.size()));
        report.epoch_val_accuracy.push_back(evaluate(model, val, cfg.batch_size).accuracy);
        if (on_epoch) on_epoch(epoch, report.epoch_loss.back(), report.epoch_val_accuracy.back());
    }

    model.set_training(false);
    report.final_val_accuracy =
        report.epoch_val_accuracy.empty() ? report.initial_val_accuracy
                                          : report.epoch_val_accuracy.back();
    report.best_val_accuracy = report.initial_val_accuracy;
    for (double acc : report.epoch_val_accuracy)
        report.best_val_accuracy = std::max(report.best_val_accuracy, acc);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace minidl
