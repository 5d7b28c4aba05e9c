#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "minidl/classifier.hpp"
#include "minidl/gan.hpp"
#include "minidl/harness.hpp"

// JSON configuration shared by all CLI subcommands. Parsing is strict:
// unknown keys are errors, so typos never silently fall back to defaults.

namespace minidl {

struct DataConfig {
    std::filesystem::path root;
    double val_fraction = 0.2;
    int image_size = 192;
    int channels = 3;
};

struct SsimConfig {
    SsimParams params;
    SsimAggregator aggregator = SsimAggregator::Mean;
    int top_k = 100;                // ranking cutoff (ssim-rank selection size)
    int references_per_class = 0;   // 0 = all
};

struct AppConfig {
    std::uint64_t seed = 0;
    int jobs = 0;  // OpenMP threads for the numeric kernels; 0 = library default
    std::filesystem::path out = "out";
    DataConfig data;
    ClassifierConfig classifier;
    GanConfig gan;
    SsimConfig ssim;
    // experiment section
    std::vector<Setup> setups{Setup::None, Setup::RandomSynth, Setup::SsimSynth};
    int trials = 10;
    int real_per_class = 200;
    int synth_per_class = 50;
    int select_pool_k = 100;
    std::filesystem::path synth_root;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in " + context);
}

template <class T>
void get_to_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

inline void get_path_if(const json& j, const char* key, std::filesystem::path& out) {
    if (j.contains(key)) out = j.at(key).get<std::string>();
}

inline void parse_adam(const json& j, AdamConfig& adam) {
    check_keys(j, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "adam");
    get_to_if(j, "lr", adam.lr);
    get_to_if(j, "beta1", adam.beta1);
    get_to_if(j, "beta2", adam.beta2);
    get_to_if(j, "eps", adam.eps);
    get_to_if(j, "weight_decay", adam.weight_decay);
}

inline void parse_data(const json& j, DataConfig& data) {
    check_keys(j, {"root", "val_fraction", "image_size", "channels"}, "data");
    get_path_if(j, "root", data.root);
    get_to_if(j, "val_fraction", data.val_fraction);
    get_to_if(j, "image_size", data.image_size);
    get_to_if(j, "channels", data.channels);
}

inline void parse_classifier(const json& j, ClassifierConfig& c) {
    check_keys(j,
               {"input_size", "in_channels", "conv1_out", "conv2_out", "kernel", "pad", "pool",
                "fc_units", "dropout", "num_classes", "epochs", "batch_size", "adam"},
               "classifier");
    get_to_if(j, "input_size", c.input_size);
    get_to_if(j, "in_channels", c.in_channels);
    get_to_if(j, "conv1_out", c.conv1_out);
    get_to_if(j, "conv2_out", c.conv2_out);
    get_to_if(j, "kernel", c.kernel);
    get_to_if(j, "pad", c.pad);
    get_to_if(j, "pool", c.pool);
    get_to_if(j, "fc_units", c.fc_units);
    get_to_if(j, "dropout", c.dropout_p);
    get_to_if(j, "num_classes", c.num_classes);
    get_to_if(j, "epochs", c.epochs);
    get_to_if(j, "batch_size", c.batch_size);
    if (j.contains("adam")) parse_adam(j.at("adam"), c.adam);
}

inline void parse_gan(const json& j, GanConfig& g) {
    check_keys(j,
               {"latent_dim", "image_size", "base_channels", "lr_g", "lr_d", "batch_size",
                "epochs", "save_every_epochs", "save_count", "label_real", "label_fake",
                "leaky_slope", "dropout"},
               "gan");
    get_to_if(j, "latent_dim", g.latent_dim);
    get_to_if(j, "image_size", g.image_size);
    get_to_if(j, "base_channels", g.base_channels);
    get_to_if(j, "lr_g", g.lr_g);
    get_to_if(j, "lr_d", g.lr_d);
    get_to_if(j, "batch_size", g.batch_size);
    get_to_if(j, "epochs", g.epochs);
    get_to_if(j, "save_every_epochs", g.save_every_epochs);
    get_to_if(j, "save_count", g.save_count);
    get_to_if(j, "label_real", g.label_real);
    get_to_if(j, "label_fake", g.label_fake);
    get_to_if(j, "leaky_slope", g.leaky_slope);
    get_to_if(j, "dropout", g.disc_dropout);
}

inline void parse_ssim(const json& j, SsimConfig& s) {
    check_keys(j, {"k1", "k2", "dynamic_range", "window", "sigma", "aggregator", "top_k",
                   "references_per_class"},
               "ssim");
    get_to_if(j, "k1", s.params.k1);
    get_to_if(j, "k2", s.params.k2);
    get_to_if(j, "dynamic_range", s.params.dynamic_range);
    get_to_if(j, "window", s.params.window);
    get_to_if(j, "sigma", s.params.sigma);
    if (j.contains("aggregator")) {
        const std::string a = j.at("aggregator").get<std::string>();
        if (a == "mean")
            s.aggregator = SsimAggregator::Mean;
        else if (a == "max")
            s.aggregator = SsimAggregator::Max;
        else
            throw ConfigError("ssim.aggregator must be 'mean' or 'max'");
    }
    get_to_if(j, "top_k", s.top_k);
    get_to_if(j, "references_per_class", s.references_per_class);
}

inline void parse_experiment(const json& j, AppConfig& cfg) {
    check_keys(j, {"setups", "trials", "real_per_class", "synth_per_class", "select_pool_k",
                   "synth_root"},
               "experiment");
    if (j.contains("setups")) {
        cfg.setups.clear();
        for (const auto& name : j.at("setups"))
            cfg.setups.push_back(setup_from_name(name.get<std::string>()));
    }
    get_to_if(j, "trials", cfg.trials);
    get_to_if(j, "real_per_class", cfg.real_per_class);
    get_to_if(j, "synth_per_class", cfg.synth_per_class);
    get_to_if(j, "select_pool_k", cfg.select_pool_k);
    get_path_if(j, "synth_root", cfg.synth_root);
}

}  // namespace detail

inline AppConfig parse_config(const nlohmann::json& j) {
    detail::check_keys(j, {"seed", "jobs", "out", "data", "classifier", "gan", "ssim", "experiment"},
                       "config");
    AppConfig cfg;
    detail::get_to_if(j, "seed", cfg.seed);
    detail::get_to_if(j, "jobs", cfg.jobs);
    detail::get_path_if(j, "out", cfg.out);
    if (j.contains("data")) detail::parse_data(j.at("data"), cfg.data);
    if (j.contains("classifier")) detail::parse_classifier(j.at("classifier"), cfg.classifier);
    if (j.contains("gan")) detail::parse_gan(j.at("gan"), cfg.gan);
    if (j.contains("ssim")) detail::parse_ssim(j.at("ssim"), cfg.ssim);
    if (j.contains("experiment")) detail::parse_experiment(j.at("experiment"), cfg);
    return cfg;
}

inline AppConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    try {
        return parse_config(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace minidl
