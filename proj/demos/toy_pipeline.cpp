// End-to-end walkthrough on synthetic data: trains the small CNN on the
// two-patch toy set, reports accuracy with a confusion matrix, and renders
// a Grad-CAM overlay for one validation image.

#include <cstdio>
#include <filesystem>

#include "minidl/minidl.hpp"

using namespace minidl;

int main() {
    Rng rng(7);
    ToyConfig toy;
    auto train_samples = make_toy_samples(toy, 60, rng);
    auto val_samples = make_toy_samples(toy, 20, rng);
    auto train = toy_tensor_dataset<float>(train_samples);
    auto val = toy_tensor_dataset<float>(val_samples);

    ClassifierConfig cfg;
    cfg.input_size = toy.image_size;
    cfg.epochs = 5;
    auto model = build_classifier<float>(cfg, rng);
    std::printf("training %lld parameters on %lld toy images\n",
                static_cast<long long>(model.num_params()), static_cast<long long>(train.size()));

    TrainReport report = train_classifier(model, train, val, cfg, rng,
                                          [](int epoch, double loss, double acc) {
                                              std::printf("epoch %d  loss %.4f  val_acc %.3f\n",
                                                          epoch + 1, loss, acc);
                                          });
    Metrics metrics = evaluate(model, val);
    std::printf("final accuracy %.3f\nconfusion:\n", metrics.accuracy);
    for (const auto& row : metrics.confusion) {
        for (auto v : row) std::printf(" %4lld", static_cast<long long>(v));
        std::printf("\n");
    }

    const auto& sample = val_samples.front();
    Tensor<float> input = normalize<float>(sample.image);
    Heatmap hm = gradcam(model, input, sample.label);
    std::filesystem::create_directories("demo_out");
    save_image(hm.to_image(), "demo_out/heatmap.pgm");
    save_image(overlay(hm, sample.image), "demo_out/overlay.ppm");
    std::printf("wrote demo_out/heatmap.pgm and demo_out/overlay.ppm (class %d, patch at %d,%d)\n",
                sample.label, sample.patch_x, sample.patch_y);
    return report.final_val_accuracy > 0.5 ? 0 : 1;
}
