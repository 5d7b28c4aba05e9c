// Command-line driver: dataset preparation, CNN and GAN training, sample
// generation, SSIM ranking, dataset augmentation, the three-arm experiment
// and Grad-CAM rendering.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "minidl/minidl.hpp"

namespace fs = std::filesystem;
using namespace minidl;

namespace {

void apply_jobs(int jobs) {
#ifdef _OPENMP
    if (jobs > 0) omp_set_num_threads(jobs);
#else
    (void)jobs;
#endif
}

void report_skipped(const LabeledDataset& ds) {
    for (const auto& msg : ds.skipped) std::cerr << "warning: skipped " << msg << "\n";
}

std::vector<std::size_t> class_indices(const LabeledDataset& ds, int label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (ds.samples[i].label == label) idx.push_back(i);
    return idx;
}

int cmd_train_cnn(const AppConfig& cfg) {
    Rng rng(cfg.seed);
    LabeledDataset ds = load_dataset(cfg.data.root, cfg.data.val_fraction, rng);
    report_skipped(ds);
    ClassifierConfig cc = cfg.classifier;
    cc.num_classes = ds.num_classes();

    std::printf("dataset: %zu samples, %d classes, %zu train / %zu val\n", ds.size(),
                ds.num_classes(), ds.train_indices.size(), ds.val_indices.size());
    auto train = make_tensor_dataset<float>(ds, ds.train_indices, cc.input_size, cc.in_channels);
    auto val = make_tensor_dataset<float>(ds, ds.val_indices, cc.input_size, cc.in_channels);

    Model<float> model = build_classifier<float>(cc, rng);
    std::printf("classifier: %lld parameters, input %dx%d\n",
                static_cast<long long>(model.num_params()), cc.input_size, cc.input_size);
    TrainReport report = train_classifier(model, train, val, cc, rng,
                                          [](int epoch, double loss, double acc) {
                                              std::printf("epoch %3d  loss %.6f  val_acc %.4f\n",
                                                          epoch + 1, loss, acc);
                                          });
    Metrics metrics = evaluate(model, val, cc.batch_size);
    std::printf("final val accuracy %.4f (best %.4f), wall %.1fs\nconfusion:\n",
                report.final_val_accuracy, report.best_val_accuracy, report.wall_seconds);
    for (const auto& row : metrics.confusion) {
        for (auto v : row) std::printf(" %6lld", static_cast<long long>(v));
        std::printf("\n");
    }

    fs::create_directories(cfg.out);
    model.save(cfg.out / "classifier.ckpt");
    std::ofstream csv(cfg.out / "train_report.csv", std::ios::binary);
    csv << "epoch,train_loss,val_acc\n";
    for (std::size_t e = 0; e < report.epoch_loss.size(); ++e)
        csv << e << ',' << report.epoch_loss[e] << ',' << report.epoch_val_accuracy[e] << '\n';
    std::printf("checkpoint: %s\n", (cfg.out / "classifier.ckpt").c_str());
    return 0;
}

int cmd_train_gan(const AppConfig& cfg) {
    Rng rng(cfg.seed);
    LabeledDataset ds = load_dataset(cfg.data.root, 0.0, rng);
    report_skipped(ds);
    fs::create_directories(cfg.out);

    for (int label = 0; label < ds.num_classes(); ++label) {
        const std::string& name = ds.class_names[static_cast<std::size_t>(label)];
        const auto idx = class_indices(ds, label);
        auto data = make_tensor_dataset<float>(ds, idx, cfg.gan.image_size, 3);
        GanConfig gc = cfg.gan;
        gc.seed = cfg.seed + static_cast<std::uint64_t>(label);

        Rng init_rng(gc.seed);
        Model<float> generator = build_generator<float>(gc, init_rng);
        Model<float> discriminator = build_discriminator<float>(gc, init_rng);
        std::printf("class %s: %zu images, G %lld params, D %lld params\n", name.c_str(),
                    idx.size(), static_cast<long long>(generator.num_params()),
                    static_cast<long long>(discriminator.num_params()));

        GanReport report = train_gan(
            generator, discriminator, data, gc, cfg.out / "samples" / name,
            [&](int epoch, const GanReport& r) {
                std::printf("  [%s] epoch %3d  g_loss %.4f  d_loss %.4f  d_acc %.3f\n",
                            name.c_str(), epoch + 1, r.g_loss.back(), r.d_loss.back(),
                            r.d_accuracy.back());
            });

        generator.save(cfg.out / ("generator_" + name + ".ckpt"));
        discriminator.save(cfg.out / ("discriminator_" + name + ".ckpt"));
        std::ofstream csv(cfg.out / ("gan_" + name + ".csv"), std::ios::binary);
        csv << "step,g_loss,d_loss,d_acc\n";
        for (std::size_t s = 0; s < report.g_loss.size(); ++s)
            csv << s << ',' << report.g_loss[s] << ',' << report.d_loss[s] << ','
                << report.d_accuracy[s] << '\n';
        std::printf("  saved %zu sample images\n", report.saved_samples.size());
    }
    return 0;
}

int cmd_generate(const AppConfig& cfg, const std::string& checkpoint, const std::string& class_name,
                 int count, int tag) {
    Model<float> generator = Model<float>::load(checkpoint);
    Rng rng(cfg.seed);
    const auto paths = generate_batch(generator, count, rng, cfg.out / class_name, tag);
    std::printf("wrote %zu images under %s\n", paths.size(), (cfg.out / class_name).c_str());
    return 0;
}

int cmd_ssim_rank(const AppConfig& cfg, const std::string& select_dir) {
    Rng rng(cfg.seed);
    LabeledDataset real = load_dataset(cfg.data.root, 0.0, rng);
    report_skipped(real);
    if (cfg.synth_root.empty()) throw ConfigError("ssim-rank: experiment.synth_root not set");

    SynthPool pool = list_synth_pool(cfg.synth_root, real.class_names);
    SynthPool scored = score_synth_pool(pool, real, real.train_indices, cfg.data.image_size,
                                        cfg.ssim.aggregator, cfg.ssim.references_per_class,
                                        cfg.ssim.params);

    fs::create_directories(cfg.out);
    std::ofstream csv(cfg.out / "ssim_rank.csv", std::ios::binary);
    csv << "candidate_path,class,score\n";
    for (std::size_t c = 0; c < scored.per_class.size(); ++c) {
        const auto ranked = rank_and_select(scored.per_class[c], scored.per_class[c].size());
        for (const auto& s : ranked) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", s.score);
            csv << s.candidate_id << ',' << s.class_name << ',' << buf << '\n';
        }
        if (!select_dir.empty()) {
            const auto chosen =
                rank_and_select(scored.per_class[c], static_cast<std::size_t>(cfg.ssim.top_k));
            const fs::path dir = fs::path(select_dir) / real.class_names[c];
            fs::create_directories(dir);
            for (const auto& s : chosen)
                fs::copy_file(s.candidate_id, dir / fs::path(s.candidate_id).filename(),
                              fs::copy_options::overwrite_existing);
            std::printf("class %s: selected %zu of %zu candidates\n", real.class_names[c].c_str(),
                        chosen.size(), scored.per_class[c].size());
        }
    }
    std::printf("ranking: %s\n", (cfg.out / "ssim_rank.csv").c_str());
    return 0;
}

int cmd_augment(const AppConfig& cfg, const std::string& setup_str) {
    const Setup setup = setup_from_name(setup_str);
    Rng rng(cfg.seed);
    LabeledDataset real = load_dataset(cfg.data.root, 0.0, rng);
    report_skipped(real);

    SynthPool pool;
    if (setup != Setup::None) {
        if (cfg.synth_root.empty()) throw ConfigError("augment: experiment.synth_root not set");
        pool = list_synth_pool(cfg.synth_root, real.class_names);
        if (setup == Setup::SsimSynth)
            pool = score_synth_pool(pool, real, real.train_indices, cfg.data.image_size,
                                    cfg.ssim.aggregator, cfg.ssim.references_per_class,
                                    cfg.ssim.params);
    }

    LabeledDataset assembled = assemble_training_set(setup, real, real.train_indices, pool,
                                                     cfg.synth_per_class, cfg.select_pool_k, rng);
    std::vector<int> written_per_class(static_cast<std::size_t>(real.num_classes()), 0);
    for (const auto& sample : assembled.samples) {
        const std::string& cls = real.class_names[static_cast<std::size_t>(sample.label)];
        const fs::path dir = cfg.out / cls;
        fs::create_directories(dir);
        char prefix[16];
        std::snprintf(prefix, sizeof(prefix), "%05d_", written_per_class[static_cast<std::size_t>(sample.label)]++);
        fs::copy_file(sample.path, dir / (prefix + sample.path.filename().string()),
                      fs::copy_options::overwrite_existing);
    }
    for (int c = 0; c < real.num_classes(); ++c)
        std::printf("class %s: %d images\n", real.class_names[static_cast<std::size_t>(c)].c_str(),
                    written_per_class[static_cast<std::size_t>(c)]);
    return 0;
}

int cmd_gradcam(const AppConfig& cfg, const std::string& checkpoint, const std::string& image_path,
                int target_class, int layer, int input_size) {
    Model<float> model = Model<float>::load(checkpoint);
    const int size = input_size > 0 ? input_size : cfg.classifier.input_size;
    Image img = load_image(image_path);
    img = resize_bilinear(luma_to_rgb(img), size, size);
    Tensor<float> input = normalize<float>(img);

    if (target_class < 0) {
        Graph<float> g;
        NoGradGuard<float> guard(g);
        Var<float> logits = model.forward(
            g, g.input(input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)})));
        const float* p = logits.value().data();
        target_class = 0;
        for (int j = 1; j < logits.shape()[1]; ++j)
            if (p[j] > p[target_class]) target_class = j;
        std::printf("predicted class %d\n", target_class);
    }

    Heatmap hm = gradcam(model, input, target_class, layer);
    fs::create_directories(cfg.out);
    save_image(hm.to_image(), cfg.out / "heatmap.pgm");
    save_image(overlay(hm, img), cfg.out / "overlay.ppm");
    std::printf("class %d, layer %d -> %s, %s\n", hm.target_class, hm.source_layer,
                (cfg.out / "heatmap.pgm").c_str(), (cfg.out / "overlay.ppm").c_str());
    return 0;
}

int cmd_experiment(const AppConfig& cfg) {
    ExperimentConfig ec;
    ec.data_root = cfg.data.root;
    ec.synth_root = cfg.synth_root;
    ec.setups = cfg.setups;
    ec.trials = cfg.trials;
    ec.real_per_class = cfg.real_per_class;
    ec.synth_per_class = cfg.synth_per_class;
    ec.select_pool_k = cfg.select_pool_k;
    ec.ssim_references_per_class = cfg.ssim.references_per_class;
    ec.val_fraction = cfg.data.val_fraction;
    ec.classifier = cfg.classifier;
    ec.ssim = cfg.ssim.params;
    ec.aggregator = cfg.ssim.aggregator;
    ec.base_seed = cfg.seed;
    ec.out_dir = cfg.out;

    ExperimentReport report = run_experiment(ec);
    std::fputs(summarize(report).c_str(), stdout);
    std::printf("rows: %s\nsummary: %s\n", (cfg.out / "rows.csv").c_str(),
                (cfg.out / "summary.csv").c_str());
    return 0;
}

int cmd_report(const std::string& rows_path) {
    ExperimentReport report;
    report.rows = read_rows_csv(rows_path);
    for (const auto& row : report.rows) {
        bool seen = false;
        for (const auto& s : report.requested_setups) seen |= (s == row.setup);
        if (!seen) report.requested_setups.push_back(row.setup);
    }
    report.summaries = summarize_rows(report.rows);
    std::fputs(summarize(report).c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"minidl: CNN + GAN + SSIM augmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    int jobs = 0;
    app.add_option("--config", config_path, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed, "base RNG seed");
    auto* out_opt = app.add_option("--out", out, "output directory");
    auto* jobs_opt = app.add_option("--jobs", jobs, "kernel threads (1 = fully serial)");

    std::string data_root, synth_root;
    auto add_data = [&](CLI::App* sub) { sub->add_option("--data", data_root, "dataset root"); };
    auto add_synth = [&](CLI::App* sub) {
        sub->add_option("--synth", synth_root, "synthetic pool root");
    };

    auto* sc_train_cnn = app.add_subcommand("train-cnn", "train the classifier");
    add_data(sc_train_cnn);

    auto* sc_train_gan = app.add_subcommand("train-gan", "train one GAN per class");
    add_data(sc_train_gan);

    auto* sc_generate = app.add_subcommand("generate", "sample images from a generator");
    std::string checkpoint, class_name = "synth";
    int count = 64, tag = 0;
    sc_generate->add_option("--checkpoint", checkpoint, "generator checkpoint")->required();
    sc_generate->add_option("--class-name", class_name, "output class folder name");
    sc_generate->add_option("--count", count, "number of images");
    sc_generate->add_option("--tag", tag, "epoch tag used in file names");

    auto* sc_ssim_rank = app.add_subcommand("ssim-rank", "rank synthetic images by SSIM");
    add_data(sc_ssim_rank);
    add_synth(sc_ssim_rank);
    std::string select_dir;
    sc_ssim_rank->add_option("--select", select_dir, "copy the top-k per class here");

    auto* sc_augment = app.add_subcommand("augment", "materialize an augmented dataset");
    add_data(sc_augment);
    add_synth(sc_augment);
    std::string setup_str = "ssim_synth";
    sc_augment->add_option("--setup", setup_str, "none | random_synth | ssim_synth");

    auto* sc_gradcam = app.add_subcommand("gradcam", "render a Grad-CAM heatmap");
    std::string image_path;
    int target_class = -1, layer = -1, input_size = 0;
    sc_gradcam->add_option("--checkpoint", checkpoint, "classifier checkpoint")->required();
    sc_gradcam->add_option("--image", image_path, "input image (PGM/PPM)")->required();
    sc_gradcam->add_option("--class", target_class, "target class (-1 = predicted)");
    sc_gradcam->add_option("--layer", layer, "layer index (-1 = deepest conv activation)");
    sc_gradcam->add_option("--input-size", input_size, "model input resolution");

    auto* sc_experiment = app.add_subcommand("experiment", "run the three-setup experiment");
    add_data(sc_experiment);
    add_synth(sc_experiment);

    auto* sc_report = app.add_subcommand("report", "summarize an experiment rows CSV");
    std::string rows_path;
    sc_report->add_option("--rows", rows_path, "rows.csv path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        AppConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (seed_opt->count()) cfg.seed = seed;
        if (out_opt->count()) cfg.out = out;
        if (jobs_opt->count()) cfg.jobs = jobs;
        if (!data_root.empty()) cfg.data.root = data_root;
        if (!synth_root.empty()) cfg.synth_root = synth_root;
        apply_jobs(cfg.jobs);

        if (sc_train_cnn->parsed()) return cmd_train_cnn(cfg);
        if (sc_train_gan->parsed()) return cmd_train_gan(cfg);
        if (sc_generate->parsed()) return cmd_generate(cfg, checkpoint, class_name, count, tag);
        if (sc_ssim_rank->parsed()) return cmd_ssim_rank(cfg, select_dir);
        if (sc_augment->parsed()) return cmd_augment(cfg, setup_str);
        if (sc_gradcam->parsed())
            return cmd_gradcam(cfg, checkpoint, image_path, target_class, layer, input_size);
        if (sc_experiment->parsed()) return cmd_experiment(cfg);
        if (sc_report->parsed()) return cmd_report(rows_path);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
