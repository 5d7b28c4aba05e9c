#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "minidl/classifier.hpp"
#include "minidl/dataset.hpp"
#include "minidl/ssim.hpp"

// The three-arm augmentation experiment: train the classifier without
// synthetic data, with randomly selected synthetic data, and with
// SSIM-selected synthetic data, over N paired trials, and report per-trial
// accuracies plus per-setup summary statistics as CSV.

namespace minidl {

enum class Setup { None, RandomSynth, SsimSynth };

inline std::string setup_name(Setup s) {
    switch (s) {
        case Setup::None: return "none";
        case Setup::RandomSynth: return "random_synth";
        case Setup::SsimSynth: return "ssim_synth";
    }
    return "?";
}

inline Setup setup_from_name(const std::string& name) {
    if (name == "none") return Setup::None;
    if (name == "random_synth") return Setup::RandomSynth;
    if (name == "ssim_synth") return Setup::SsimSynth;
    throw ConfigError("unknown setup '" + name + "'");
}

struct ExperimentConfig {
    std::filesystem::path data_root;   // real dataset, directory per class
    std::filesystem::path synth_root;  // generated pool, directory per class
    std::vector<Setup> setups{Setup::None, Setup::RandomSynth, Setup::SsimSynth};
    int trials = 10;
    int real_per_class = 200;
    int synth_per_class = 50;
    int select_pool_k = 100;          // ssim ranking pool cutoff
    int ssim_references_per_class = 0;  // 0 = all real training images
    double val_fraction = 0.2;
    ClassifierConfig classifier;
    SsimParams ssim;
    SsimAggregator aggregator = SsimAggregator::Mean;
    std::uint64_t base_seed = 0;
    std::filesystem::path out_dir;  // empty: no CSV files written

    void validate() const {
        if (trials < 1) throw ConfigError("experiment: trials must be >= 1");
        if (setups.empty()) throw ConfigError("experiment: no setups selected");
        if (real_per_class < 1) throw ConfigError("experiment: real_per_class must be >= 1");
        if (synth_per_class < 0) throw ConfigError("experiment: synth_per_class must be >= 0");
        if (synth_per_class > select_pool_k)
            throw ConfigError("experiment: synth_per_class exceeds select_pool_k");
        if (val_fraction <= 0 || val_fraction >= 1)
            throw ConfigError("experiment: val_fraction must be in (0,1)");
        classifier.validate();
    }

    bool wants_synth() const {
        for (Setup s : setups)
            if (s != Setup::None) return true;
        return false;
    }
};

struct TrialRow {
    std::string setup;
    int trial = 0;
    std::uint64_t seed = 0;
    double final_val_acc = 0.0;
    double best_val_acc = 0.0;
    std::vector<std::int64_t> confusion;  // row-major K*K
};

struct SetupSummary {
    std::string setup;
    double mean = 0.0;
    double max = 0.0;
    double min = 0.0;
};

struct ExperimentReport {
    std::vector<std::string> requested_setups;
    std::vector<TrialRow> rows;
    std::vector<SetupSummary> summaries;
};

inline void write_experiment_csv(const ExperimentReport& report,
                                 const std::filesystem::path& out_dir);

// Synthetic candidate pools, one entry per class (index == class label).
struct SynthPool {
    std::vector<std::vector<SsimScore>> per_class;
};

namespace detail {

inline double round6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::strtod(buf, nullptr);
}

inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace detail

// Lists <synth_root>/<class_name>/* as unscored candidates, sorted by path.
inline SynthPool list_synth_pool(const std::filesystem::path& synth_root,
                                 const std::vector<std::string>& class_names) {
    namespace fs = std::filesystem;
    SynthPool pool;
    pool.per_class.resize(class_names.size());
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        const fs::path dir = synth_root / class_names[c];
        if (!fs::is_directory(dir)) continue;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            pool.per_class[c].push_back({f.string(), class_names[c], 0.0});
    }
    return pool;
}

// Scores every candidate against the class's real reference images (resized
// luma at `scoring_size`). With refs_per_class > 0, an evenly spaced subset
// of the references is used.
inline SynthPool score_synth_pool(const SynthPool& pool, const LabeledDataset& real,
                                  const std::vector<std::size_t>& reference_indices,
                                  int scoring_size, SsimAggregator aggregator,
                                  int refs_per_class, const SsimParams& params) {
    SynthPool scored = pool;
    for (std::size_t c = 0; c < pool.per_class.size(); ++c) {
        std::vector<Image> refs;
        std::vector<std::size_t> class_refs;
        for (std::size_t idx : reference_indices)
            if (real.samples[idx].label == static_cast<int>(c)) class_refs.push_back(idx);
        std::vector<std::size_t> chosen;
        if (refs_per_class > 0 && static_cast<std::size_t>(refs_per_class) < class_refs.size()) {
            for (int i = 0; i < refs_per_class; ++i)
                chosen.push_back(class_refs[static_cast<std::size_t>(i) * class_refs.size() /
                                            static_cast<std::size_t>(refs_per_class)]);
        } else {
            chosen = class_refs;
        }
        for (std::size_t idx : chosen)
            refs.push_back(resize_bilinear(rgb_to_luma(load_image(real.samples[idx].path)),
                                           scoring_size, scoring_size));
        for (auto& cand : scored.per_class[c]) {
            const Image img = resize_bilinear(rgb_to_luma(load_image(cand.candidate_id)),
                                              scoring_size, scoring_size);
            cand.score = score_against_references(img, refs, aggregator, params);
        }
    }
    return scored;
}

// Builds one training-set listing. `none` keeps the chosen real samples
// only; `random_synth` adds synth_per_class uniformly drawn candidates per
// class; `ssim_synth` ranks the (already scored) pool, keeps the top
// select_pool_k and adds the best synth_per_class per class.
inline LabeledDataset assemble_training_set(Setup setup, const LabeledDataset& real,
                                            const std::vector<std::size_t>& real_train_indices,
                                            const SynthPool& synth_pool, int synth_per_class,
                                            int select_pool_k, Rng& rng) {
    LabeledDataset out;
    out.class_names = real.class_names;
    for (std::size_t idx : real_train_indices) out.samples.push_back(real.samples[idx]);

    if (setup != Setup::None && synth_per_class > 0) {
        if (synth_pool.per_class.size() != real.class_names.size())
            throw InsufficientPoolError("synthetic pool does not cover every class");
        for (std::size_t c = 0; c < real.class_names.size(); ++c) {
            const auto& pool = synth_pool.per_class[c];
            if (pool.size() < static_cast<std::size_t>(synth_per_class))
                throw InsufficientPoolError(
                    "class '" + real.class_names[c] + "' pool has " + std::to_string(pool.size()) +
                    " candidates, need " + std::to_string(synth_per_class));
            std::vector<SsimScore> picked;
            if (setup == Setup::RandomSynth) {
                picked = random_select(pool, static_cast<std::size_t>(synth_per_class), rng);
            } else {
                picked = rank_and_select(pool, static_cast<std::size_t>(select_pool_k));
                picked.resize(static_cast<std::size_t>(synth_per_class));
            }
            for (const auto& s : picked)
                out.samples.push_back({std::filesystem::path(s.candidate_id), static_cast<int>(c)});
        }
    }

    out.train_indices.resize(out.samples.size());
    for (std::size_t i = 0; i < out.samples.size(); ++i) out.train_indices[i] = i;
    return out;
}

namespace detail {

// Per-class subsample of the training split down to real_per_class, drawn
// with the trial rng, returned sorted.
inline std::vector<std::size_t> choose_real_train(const LabeledDataset& real,
                                                  const std::vector<std::size_t>& train_indices,
                                                  int num_classes, int real_per_class, Rng& rng) {
    std::vector<std::size_t> chosen;
    for (int c = 0; c < num_classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i : train_indices)
            if (real.samples[i].label == c) idx.push_back(i);
        if (idx.size() > static_cast<std::size_t>(real_per_class)) {
            rng.shuffle(idx);
            idx.resize(static_cast<std::size_t>(real_per_class));
        }
        chosen.insert(chosen.end(), idx.begin(), idx.end());
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

}  // namespace detail

// Runs |setups| x trials trainings. Trial t derives seed base_seed + t; all
// setups within a trial share the real split and the model-init stream, so
// the augmentation is the only varied factor. Synthetic images go to the
// training side only; validation is always real.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    Rng listing_rng(cfg.base_seed);
    const LabeledDataset real = load_dataset(cfg.data_root, cfg.val_fraction, listing_rng);

    SynthPool pool;
    if (cfg.wants_synth()) pool = list_synth_pool(cfg.synth_root, real.class_names);

    ExperimentReport report;
    for (Setup s : cfg.setups) report.requested_setups.push_back(setup_name(s));
    std::vector<int> labels(real.samples.size());
    for (std::size_t i = 0; i < real.samples.size(); ++i) labels[i] = real.samples[i].label;

    for (int trial = 0; trial < cfg.trials; ++trial) {
        const std::uint64_t seed = cfg.base_seed + static_cast<std::uint64_t>(trial);
        Rng split_rng(seed);
        auto [train_idx, val_idx] =
            stratified_split(labels, real.num_classes(), cfg.val_fraction, split_rng);
        const auto real_train = detail::choose_real_train(real, train_idx, real.num_classes(),
                                                          cfg.real_per_class, split_rng);
        const auto val_ds = make_tensor_dataset<float>(real, val_idx, cfg.classifier.input_size,
                                                       cfg.classifier.in_channels);

        SynthPool scored;
        bool scored_ready = false;

        for (Setup setup : cfg.setups) {
            try {
                Rng select_rng(split_rng.derive(0x5e1ec7 + static_cast<std::uint64_t>(trial)));
                const SynthPool* active_pool = &pool;
                if (setup == Setup::SsimSynth) {
                    if (!scored_ready) {
                        scored = score_synth_pool(pool, real, real_train,
                                                  cfg.classifier.input_size, cfg.aggregator,
                                                  cfg.ssim_references_per_class, cfg.ssim);
                        scored_ready = true;
                    }
                    active_pool = &scored;
                }
                const LabeledDataset assembled =
                    assemble_training_set(setup, real, real_train, *active_pool,
                                          setup == Setup::None ? 0 : cfg.synth_per_class,
                                          cfg.select_pool_k, select_rng);
                const auto train_ds =
                    make_tensor_dataset<float>(assembled, assembled.train_indices,
                                               cfg.classifier.input_size, cfg.classifier.in_channels);

                Rng train_rng(seed);  // same init stream for every setup in the trial
                Model<float> model = build_classifier<float>(cfg.classifier, train_rng);
                const TrainReport tr = train_classifier(model, train_ds, val_ds, cfg.classifier, train_rng);
                const Metrics metrics = evaluate(model, val_ds, cfg.classifier.batch_size);

                TrialRow row;
                row.setup = setup_name(setup);
                row.trial = trial;
                row.seed = seed;
                row.final_val_acc = tr.final_val_accuracy;
                row.best_val_acc = tr.best_val_accuracy;
                for (const auto& r : metrics.confusion)
                    row.confusion.insert(row.confusion.end(), r.begin(), r.end());
                report.rows.push_back(std::move(row));
            } catch (const Error& e) {
                throw Error("(" + setup_name(setup) + ", trial " + std::to_string(trial) +
                            "): " + e.what());
            }
        }
    }

    // Summaries are computed from the 6-decimal values that land in the CSV,
    // so recomputation from the file reproduces them exactly.
    for (Setup setup : cfg.setups) {
        SetupSummary s;
        s.setup = setup_name(setup);
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& row : report.rows) {
            if (row.setup != s.setup) continue;
            const double acc = detail::round6(row.final_val_acc);
            if (n == 0) {
                s.max = s.min = acc;
            } else {
                s.max = std::max(s.max, acc);
                s.min = std::min(s.min, acc);
            }
            sum += acc;
            ++n;
        }
        if (n > 0) {
            s.mean = sum / static_cast<double>(n);
            report.summaries.push_back(s);
        }
    }

    if (!cfg.out_dir.empty()) write_experiment_csv(report, cfg.out_dir);
    return report;
}

// --- CSV io -----------------------------------------------------------------

inline void write_experiment_csv(const ExperimentReport& report,
                                 const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string());

    std::ofstream rows(out_dir / "rows.csv", std::ios::binary);
    if (!rows) throw IoError("cannot write rows.csv");
    rows << "setup,trial,seed,final_val_acc,best_val_acc,confusion_flat\n";
    for (const auto& r : report.rows) {
        rows << r.setup << ',' << r.trial << ',' << r.seed << ','
             << detail::fmt6(r.final_val_acc) << ',' << detail::fmt6(r.best_val_acc) << ',';
        for (std::size_t i = 0; i < r.confusion.size(); ++i)
            rows << (i ? ";" : "") << r.confusion[i];
        rows << '\n';
    }

    std::ofstream summary(out_dir / "summary.csv", std::ios::binary);
    if (!summary) throw IoError("cannot write summary.csv");
    summary << "setup,mean,max,min\n";
    for (const auto& s : report.summaries)
        summary << s.setup << ',' << detail::fmt6(s.mean) << ',' << detail::fmt6(s.max) << ','
                << detail::fmt6(s.min) << '\n';
}

inline std::vector<std::string> split_csv_line(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::vector<TrialRow> read_rows_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw FormatError(path.string() + ": empty rows file");
    std::vector<TrialRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 6) throw FormatError(path.string() + ": malformed row '" + line + "'");
        TrialRow r;
        r.setup = fields[0];
        r.trial = std::stoi(fields[1]);
        r.seed = std::stoull(fields[2]);
        r.final_val_acc = std::strtod(fields[3].c_str(), nullptr);
        r.best_val_acc = std::strtod(fields[4].c_str(), nullptr);
        for (const auto& tok : split_csv_line(fields[5], ';'))
            if (!tok.empty()) r.confusion.push_back(std::stoll(tok));
        rows.push_back(std::move(r));
    }
    return rows;
}

// Recomputes per-setup mean/max/min from rows (the independent path used by
// the `report` subcommand and the recomputation checks).
inline std::vector<SetupSummary> summarize_rows(const std::vector<TrialRow>& rows) {
    static const char* order[] = {"none", "random_synth", "ssim_synth"};
    std::vector<SetupSummary> out;
    for (const char* name : order) {
        SetupSummary s;
        s.setup = name;
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& row : rows) {
            if (row.setup != name) continue;
            const double acc = detail::round6(row.final_val_acc);
            if (n == 0) {
                s.max = s.min = acc;
            } else {
                s.max = std::max(s.max, acc);
                s.min = std::min(s.min, acc);
            }
            sum += acc;
            ++n;
        }
        if (n > 0) {
            s.mean = sum / static_cast<double>(n);
            out.push_back(s);
        }
    }
    return out;
}

// Fixed-order text table; setups without rows are omitted with a warning
// line.
inline std::string summarize(const ExperimentReport& report) {
    static const char* order[] = {"none", "random_synth", "ssim_synth"};
    std::ostringstream os;
    os << "setup          mean      max       min\n";
    for (const char* name : order) {
        const SetupSummary* found = nullptr;
        for (const auto& s : report.summaries)
            if (s.setup == name) found = &s;
        if (!found) {
            bool requested = false;
            for (const auto& s : report.requested_setups)
                if (s == name) requested = true;
            if (requested) os << "# warning: setup " << name << " has no trials\n";
            continue;
        }
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%-14s %s  %s  %s\n", name, detail::fmt6(found->mean).c_str(),
                      detail::fmt6(found->max).c_str(), detail::fmt6(found->min).c_str());
        os << buf;
    }
    return os.str();
}

}  // namespace minidl
