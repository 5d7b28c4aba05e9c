#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "minidl/adam.hpp"
#include "minidl/dataset.hpp"
#include "minidl/image.hpp"
#include "minidl/model.hpp"

// DCGAN-style generator/discriminator pair and the adversarial training
// loop: BCE for both nets, separate Adam optimizers without weight decay,
// discriminator-accuracy monitoring and periodic sample saving.

namespace minidl {

struct GanConfig {
    int latent_dim = 100;
    int image_size = 192;     // 3*2^s or 2^s, enough for >= 2 upsampling stages
    int base_channels = 512;  // generator head width; halves per stage
    double lr_g = 2e-4;
    double lr_d = 1e-4;
    int batch_size = 32;
    int epochs = 10;
    int save_every_epochs = 10;  // 0 disables periodic saving
    int save_count = 16;         // samples written per save point
    double label_real = 1.0;
    double label_fake = 0.0;
    double leaky_slope = 0.2;
    double disc_dropout = 0.3;
    std::uint64_t seed = 0;

    // Number of 2x upsampling stages and the head extent they start from.
    // image_size = head * 2^stages with head in {3, 4}.
    struct Topology {
        int head;
        int stages;
    };

    Topology topology() const {
        int size = image_size;
        int stages = 0;
        while (size > 4 && size % 2 == 0) {
            size /= 2;
            ++stages;
        }
        if ((size != 3 && size != 4) || stages < 2)
            throw ConfigError("gan: image_size " + std::to_string(image_size) +
                              " is not 3*2^s or 2^s with at least 2 stages");
        return {size, stages};
    }

    void validate() const {
        if (latent_dim < 1) throw ConfigError("gan: latent_dim must be >= 1");
        if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("gan: learning rates must be > 0");
        if (batch_size < 1) throw ConfigError("gan: batch_size must be >= 1");
        if (epochs < 0) throw ConfigError("gan: epochs must be >= 0");
        if (save_every_epochs < 0) throw ConfigError("gan: save_every_epochs must be >= 0");
        if (!(leaky_slope > 0 && leaky_slope < 1)) throw ConfigError("gan: leaky_slope in (0,1)");
        if (disc_dropout < 0 || disc_dropout >= 1) throw ConfigError("gan: disc_dropout in [0,1)");
        const Topology topo = topology();
        if (base_channels < (1 << (topo.stages - 1)))
            throw ConfigError("gan: base_channels too small to halve across " +
                              std::to_string(topo.stages) + " stages");
    }
};

struct GanReport {
    std::vector<double> g_loss;  // per training step
    std::vector<double> d_loss;
    std::vector<double> d_accuracy;
    std::vector<std::filesystem::path> saved_samples;
};

// Latent projection to base_channels x head x head, then stride-2
// transposed-conv stages with batch-norm + ReLU, ending in a tanh output
// layer (no batch-norm). Channel widths halve per stage. Normal(0, 0.02)
// init throughout, the DCGAN convention.
template <class S>
Model<S> build_generator(const GanConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto topo = cfg.topology();
    Model<S> m;
    m.add_linear(cfg.latent_dim, cfg.base_channels * topo.head * topo.head,
                 WeightInit::DcganNormal, &rng);
    m.add_reshape({cfg.base_channels, topo.head, topo.head});
    for (int i = 0; i < topo.stages; ++i) {
        const int in_ch = cfg.base_channels >> i;
        const bool last = (i == topo.stages - 1);
        const int out_ch = last ? 3 : (cfg.base_channels >> (i + 1));
        m.add_conv_transpose2d(in_ch, out_ch, 4, 2, 1, WeightInit::DcganNormal, &rng);
        if (last) {
            m.add_tanh();
        } else {
            m.add_batchnorm2d(out_ch, 1e-5f, 0.1f, WeightInit::DcganNormal, &rng);
            m.add_relu();
        }
    }
    return m;
}

// Mirror of the generator: stride-2 convs with LeakyReLU + dropout down to
// the head extent, then flatten + linear + sigmoid probability.
template <class S>
Model<S> build_discriminator(const GanConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto topo = cfg.topology();
    Model<S> m;
    int in_ch = 3;
    for (int i = 0; i < topo.stages; ++i) {
        const int out_ch = cfg.base_channels >> (topo.stages - 1 - i);
        m.add_conv2d(in_ch, out_ch, 4, 2, 1, WeightInit::DcganNormal, &rng);
        m.add_leaky_relu(static_cast<float>(cfg.leaky_slope));
        m.add_dropout(static_cast<float>(cfg.disc_dropout));
        in_ch = out_ch;
    }
    m.add_flatten();
    m.add_linear(cfg.base_channels * topo.head * topo.head, 1, WeightInit::DcganNormal, &rng);
    m.add_sigmoid();
    return m;
}

// Fraction of correct real/fake calls at the given threshold: reals count
// when p > threshold, fakes when p <= threshold.
template <class S>
double discriminator_accuracy(const std::vector<S>& p_real, const std::vector<S>& p_fake,
                              double threshold = 0.5) {
    const std::size_t total = p_real.size() + p_fake.size();
    if (total == 0) return 0.0;
    std::size_t correct = 0;
    for (S p : p_real)
        if (static_cast<double>(p) > threshold) ++correct;
    for (S p : p_fake)
        if (static_cast<double>(p) <= threshold) ++correct;
    return static_cast<double>(correct) / static_cast<double>(total);
}

// Draws n latent vectors, runs the generator in eval mode, denormalizes to
// [0,1] and writes gen_<epoch>_<index>.ppm files. No directory is touched
// when n == 0.
template <class S>
std::vector<std::filesystem::path> generate_batch(Model<S>& generator, int n, Rng& rng,
                                                  const std::filesystem::path& out_dir,
                                                  int epoch_tag = 0,
                                                  std::vector<Image>* images_out = nullptr) {
    std::vector<std::filesystem::path> paths;
    if (n <= 0) return paths;
    const auto& first = generator.layers().front().spec;
    if (!std::holds_alternative<LinearSpec>(first))
        throw ConfigError("generate_batch: model does not start with a latent projection");
    const int latent_dim = std::get<LinearSpec>(first).in_features;

    Tensor<S> z({n, latent_dim});
    for (std::int64_t i = 0; i < z.size(); ++i) z[i] = static_cast<S>(rng.normal());

    const bool was_training = generator.training();
    generator.set_training(false);
    Graph<S> g;
    NoGradGuard<S> guard(g);
    Var<S> out = generator.forward(g, g.input(z));
    generator.set_training(was_training);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string());
    const int c = out.shape()[1], h = out.shape()[2], w = out.shape()[3];
    const std::int64_t stride = static_cast<std::int64_t>(c) * h * w;
    for (int i = 0; i < n; ++i) {
        Tensor<S> one({c, h, w});
        std::copy_n(out.value().data() + i * stride, stride, one.data());
        const Image img = denormalize(one);
        const auto path =
            out_dir / ("gen_" + std::to_string(epoch_tag) + "_" + std::to_string(i) + ".ppm");
        save_image(img, path);
        paths.push_back(path);
        if (images_out) images_out->push_back(img);
    }
    return paths;
}

// Adversarial loop. Per batch: (1) discriminator step on reals labeled
// `label_real` plus detached fakes labeled `label_fake`; (2) generator step
// on fresh fakes against `label_real`. Both use Adam without weight decay.
// Gradients never cross steps: the discriminator is zeroed before its own
// backward, and generator fakes enter the D step as detached inputs.
template <class S>
GanReport train_gan(Model<S>& generator, Model<S>& discriminator, const TensorDataset<S>& real,
                    const GanConfig& cfg, const std::filesystem::path& sample_dir = {},
                    const std::function<void(int, const GanReport&)>& on_epoch = {}) {
    cfg.validate();
    if (real.size() == 0) throw EmptyDatasetError("gan training set is empty");
    if (real.height() != cfg.image_size || real.width() != cfg.image_size)
        throw ShapeError("gan: dataset is " + std::to_string(real.height()) + "x" +
                         std::to_string(real.width()) + " but config wants " +
                         std::to_string(cfg.image_size));

    Rng rng(cfg.seed);
    GanReport report;
    AdamState<S> g_state, d_state;
    const AdamConfig g_adam{cfg.lr_g, 0.9, 0.999, 1e-8, 0.0};
    const AdamConfig d_adam{cfg.lr_d, 0.9, 0.999, 1e-8, 0.0};

    std::vector<std::size_t> order(static_cast<std::size_t>(real.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::int64_t step = 0;

    auto sample_latent = [&](int n) {
        Tensor<S> z({n, cfg.latent_dim});
        for (std::int64_t i = 0; i < z.size(); ++i) z[i] = static_cast<S>(rng.normal());
        return z;
    };

    generator.set_training(true);
    discriminator.set_training(true);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size), ++step) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            const int b = static_cast<int>(batch.size());
            try {
                // Fakes for the discriminator step, detached from the generator.
                Tensor<S> fake_images;
                {
                    Graph<S> g;
                    NoGradGuard<S> guard(g);
                    Var<S> fake = generator.forward(g, g.input(sample_latent(b)), &rng);
                    fake_images = fake.value();
                }

                // Discriminator step.
                Graph<S> gd;
                Var<S> p_real = discriminator.forward(gd, gd.input(real.sample_batch(batch)), &rng);
                Var<S> p_fake = discriminator.forward(gd, gd.input(fake_images), &rng);
                Var<S> d_loss =
                    add(bce_loss(p_real, Tensor<S>::full({b, 1}, static_cast<S>(cfg.label_real))),
                        bce_loss(p_fake, Tensor<S>::full({b, 1}, static_cast<S>(cfg.label_fake))));
                discriminator.zero_grad();
                gd.backward(d_loss);
                adam_step(discriminator.params(), d_state, d_adam);

                std::vector<S> pr(p_real.value().data(), p_real.value().data() + b);
                std::vector<S> pf(p_fake.value().data(), p_fake.value().data() + b);
                report.d_accuracy.push_back(discriminator_accuracy(pr, pf));
                report.d_loss.push_back(static_cast<double>(d_loss.value().item()));

                // Generator step: fool the (fixed) discriminator.
                Graph<S> gg;
                Var<S> fake2 = generator.forward(gg, gg.input(sample_latent(b)), &rng);
                Var<S> p_gen = discriminator.forward(gg, fake2, &rng);
                Var<S> g_loss =
                    bce_loss(p_gen, Tensor<S>::full({b, 1}, static_cast<S>(cfg.label_real)));
                generator.zero_grad();
                discriminator.zero_grad();
                gg.backward(g_loss);
                adam_step(generator.params(), g_state, g_adam);
                discriminator.zero_grad();  // discard D gradients from the G step

                report.g_loss.push_back(static_cast<double>(g_loss.value().item()));
            } catch (const NumericError& e) {
                throw NumericError("gan step " + std::to_string(step) + ": " + e.what());
            }
        }

        if (cfg.save_every_epochs > 0 && (epoch + 1) % cfg.save_every_epochs == 0 &&
            !sample_dir.empty()) {
            auto paths = generate_batch(generator, std::min(cfg.save_count, cfg.batch_size), rng,
                                        sample_dir, epoch + 1);
            report.saved_samples.insert(report.saved_samples.end(), paths.begin(), paths.end());
            generator.set_training(true);
        }
        if (on_epoch) on_epoch(epoch, report);
    }

    generator.set_training(false);
    discriminator.set_training(false);
    return report;
}

}  // namespace minidl
