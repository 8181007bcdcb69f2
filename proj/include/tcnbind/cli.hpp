#pragma once

// The `tcnbind` command line: build-dataset, synth, split, train, evaluate,
// attribute and motifs. Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tcnbind/attribution.hpp"
#include "tcnbind/genomic.hpp"
#include "tcnbind/metrics.hpp"
#include "tcnbind/provenance.hpp"
#include "tcnbind/run_config.hpp"
#include "tcnbind/training.hpp"

namespace tcnbind::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 1, kDataError = 2, kNumerical = 3 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Motifs used by `synth --labels N`, in order.
inline const std::vector<std::pair<std::string, std::string>>& builtin_motifs() {
    static const std::vector<std::pair<std::string, std::string>> motifs = {
        {"MYC", "GCCACGTG"},  {"E2F1", "TTTCGCGC"}, {"GATA1", "AGATAAGA"},
        {"AP1", "TGACTCAT"}, {"CREB1", "TGACGTCA"}, {"YY1", "AAGATGGC"},
    };
    return motifs;
}

/// Relative paths resolve against $TCNBIND_WORKDIR when it is set.
inline std::string resolve_path(const std::string& path) {
    const char* dir = std::getenv("TCNBIND_WORKDIR");
    if (path.empty() || dir == nullptr || *dir == '\0' || std::filesystem::path(path).is_absolute()) {
        return path;
    }
    return (std::filesystem::path(dir) / path).string();
}

namespace detail {

inline std::pair<std::string, std::string> split_assignment(const std::string& text, const char* what) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
        throw UsageError(std::string(what) + " expects NAME=VALUE, got '" + text + "'");
    }
    return {text.substr(0, eq), text.substr(eq + 1)};
}

/// Options shared by every subcommand: a config file, KEY=VALUE overrides and
/// dedicated flags that are shorthands for config keys.
struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags;  // config key -> value from a dedicated flag

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "key = value configuration file");
        app->add_option("--set", sets, "override one config key (KEY=VALUE), repeatable");
    }

    void flag(CLI::App* app, const std::string& name, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(
               name, [this, key](const std::string& v) { flags[key] = v; }, help + " (config: " + key + ")")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) {
            cfg.merge_file(resolve_path(config_path));
        }
        for (const auto& s : sets) {
            const auto [k, v] = split_assignment(s, "--set");
            cfg.set(k, v);
        }
        for (const auto& [k, v] : flags) {
            cfg.set(k, v);
        }
        return cfg;
    }
};

inline void log_config(std::ostream& err, const std::string& command, const RunConfig& cfg) {
    err << "tcnbind " << kVersion << ' ' << command << " resolved config:\n";
    std::istringstream lines(cfg.resolved());
    for (std::string line; std::getline(lines, line);) {
        err << "  " << line << '\n';
    }
}

/// Provenance over the resolved config plus command-specific inputs.
inline Provenance provenance(const RunConfig& cfg, const std::string& extra) {
    return Provenance{hex64(fnv1a64(cfg.resolved() + extra)), cfg.size("seed")};
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream os(resolve_path(path), std::ios::binary);
    if (!os) {
        throw DataError("cannot write " + path);
    }
    return os;
}

inline std::size_t label_index(const std::vector<std::string>& labels, const std::string& name) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == name) {
            return i;
        }
    }
    throw DataError("label '" + name + "' not in [" + join(labels, ',') + "]");
}

}  // namespace detail

/// Parses and executes one command line. All output goes to `out`/`err`.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"tcnbind: multi-label TF-binding prediction with temporal convolutional networks", "tcnbind"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    // synth
    auto* synth = app.add_subcommand("synth", "generate a planted-motif dataset");
    detail::Common synth_c;
    synth_c.attach(synth);
    synth_c.flag(synth, "--seed", "seed", "random seed");
    std::size_t synth_labels = 4, synth_n = 0, synth_length = 256;
    double synth_noise = 0.05, synth_cooc = 0.3;
    std::vector<std::string> synth_motifs;
    std::string synth_out;
    synth->add_option("--labels", synth_labels, "number of built-in motifs to use")->check(CLI::Range(1, 6));
    synth->add_option("--motif", synth_motifs, "NAME=CONSENSUS, repeatable; replaces --labels");
    synth->add_option("--n", synth_n, "number of samples")->required()->check(CLI::PositiveNumber);
    synth->add_option("--length", synth_length, "sequence length")->check(CLI::PositiveNumber);
    synth->add_option("--noise", synth_noise, "per-base substitution probability")->check(CLI::Range(0.0, 1.0));
    synth->add_option("--co-occurrence", synth_cooc, "probability that each other label joins")
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--out", synth_out, "output dataset")->required();

    // build-dataset
    auto* build = app.add_subcommand("build-dataset", "intersect peak files and extract genome windows");
    detail::Common build_c;
    build_c.attach(build);
    build_c.flag(build, "--window", "window", "window length");
    std::vector<std::string> build_peaks;
    std::string build_genome, build_out;
    build->add_option("--peaks", build_peaks, "TF=peaks.bed, repeatable; order fixes the label registry")
        ->required();
    build->add_option("--genome", build_genome, "genome FASTA")->required();
    build->add_option("--out", build_out, "output dataset")->required();

    // split
    auto* split_cmd = app.add_subcommand("split", "train/validation/test split");
    detail::Common split_c;
    split_c.attach(split_cmd);
    split_c.flag(split_cmd, "--seed", "seed", "random seed");
    split_c.flag(split_cmd, "--train-frac", "train_frac", "train+validation share");
    split_c.flag(split_cmd, "--val-frac", "val_frac", "validation share of train+validation");
    std::string split_dataset_path, split_prefix;
    split_cmd->add_option("--dataset", split_dataset_path, "input dataset")->required();
    split_cmd->add_option("--out-prefix", split_prefix, "writes PREFIX.train.tsv, PREFIX.val.tsv, PREFIX.test.tsv")
        ->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    detail::Common train_c;
    train_c.attach(train_cmd);
    train_c.flag(train_cmd, "--seed", "seed", "random seed");
    train_c.flag(train_cmd, "--epochs", "epochs", "maximum epochs");
    train_c.flag(train_cmd, "--lr", "lr", "peak learning rate");
    train_c.flag(train_cmd, "--batch-size", "batch_size", "minibatch size");
    train_c.flag(train_cmd, "--threads", "threads", "threads for validation scoring");
    std::string train_dataset, train_val, train_out, train_history;
    train_cmd->add_option("--dataset", train_dataset, "training dataset")->required();
    train_cmd->add_option("--val", train_val, "validation dataset; default holds out val_frac of --dataset");
    train_cmd->add_option("--out", train_out, "checkpoint path")->required();
    train_cmd->add_option("--history", train_history, "per-epoch log (tab-separated)");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score a dataset and report metrics");
    detail::Common eval_c;
    eval_c.attach(eval_cmd);
    eval_c.flag(eval_cmd, "--threshold", "threshold", "decision threshold");
    eval_c.flag(eval_cmd, "--threads", "threads", "worker threads");
    std::string eval_model, eval_dataset, eval_out, eval_scores;
    eval_cmd->add_option("--model", eval_model, "checkpoint")->required();
    eval_cmd->add_option("--dataset", eval_dataset, "dataset to score")->required();
    eval_cmd->add_option("--out", eval_out, "metrics file (key = value)")->required();
    eval_cmd->add_option("--scores", eval_scores, "optional per-sample score table");

    // attribute
    auto* attr_cmd = app.add_subcommand("attribute", "integrated-gradients attribution maps");
    detail::Common attr_c;
    attr_c.attach(attr_cmd);
    attr_c.flag(attr_cmd, "--seed", "seed", "baseline seed");
    attr_c.flag(attr_cmd, "--steps", "ig_steps", "interpolation steps");
    attr_c.flag(attr_cmd, "--baselines", "ig_baselines", "shuffled baselines per sequence");
    attr_c.flag(attr_cmd, "--threads", "threads", "worker threads");
    std::string attr_model, attr_dataset, attr_label, attr_out;
    std::vector<std::size_t> attr_samples;
    std::size_t attr_max = 10;
    attr_cmd->add_option("--model", attr_model, "checkpoint")->required();
    attr_cmd->add_option("--dataset", attr_dataset, "dataset")->required();
    attr_cmd->add_option("--label", attr_label, "label to explain")->required();
    attr_cmd->add_option("--samples", attr_samples, "sample indices (default: first --max positives)");
    attr_cmd->add_option("--max", attr_max, "number of positives when --samples is absent");
    attr_cmd->add_option("--out", attr_out, "attribution file")->required();

    // motifs
    auto* motif_cmd = app.add_subcommand("motifs", "seqlets and PWMs per label");
    detail::Common motif_c;
    motif_c.attach(motif_cmd);
    motif_c.flag(motif_cmd, "--seed", "seed", "baseline seed");
    motif_c.flag(motif_cmd, "--steps", "ig_steps", "interpolation steps");
    motif_c.flag(motif_cmd, "--baselines", "ig_baselines", "shuffled baselines per sequence");
    motif_c.flag(motif_cmd, "--threads", "threads", "worker threads");
    std::string motif_model, motif_dataset, motif_out;
    std::vector<std::string> motif_labels;
    motif_cmd->add_option("--model", motif_model, "checkpoint")->required();
    motif_cmd->add_option("--dataset", motif_dataset, "dataset")->required();
    motif_cmd->add_option("--label", motif_labels, "labels to process (default: all)");
    motif_cmd->add_option("--out", motif_out, "PWM file")->required();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::CallForVersion& e) {
        out << kVersion << '\n';
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        const CLI::App* failing = &app;
        for (auto* sub : app.get_subcommands()) {
            failing = sub;
        }
        err << failing->help();
        return kUsage;
    }

    try {
        if (synth->parsed()) {
            const auto cfg = synth_c.resolve();
            detail::log_config(err, "synth", cfg);
            SyntheticSpec spec;
            spec.num_samples = synth_n;
            spec.length = synth_length;
            spec.noise = synth_noise;
            if (synth_motifs.empty()) {
                const auto& lib = builtin_motifs();
                spec.label_motifs.assign(lib.begin(), lib.begin() + static_cast<std::ptrdiff_t>(synth_labels));
            } else {
                for (const auto& m : synth_motifs) {
                    spec.label_motifs.push_back(detail::split_assignment(m, "--motif"));
                }
            }
            const std::size_t k = spec.label_motifs.size();
            spec.co_occurrence.assign(k, std::vector<double>(k, synth_cooc));
            Rng rng(cfg.size("seed"));
            const auto ds = generate_synthetic(spec, rng);
            std::ostringstream extra;
            extra << "synth n=" << synth_n << " length=" << synth_length << " noise=" << synth_noise
                  << " co=" << synth_cooc;
            for (const auto& [name, motif] : spec.label_motifs) {
                extra << ' ' << name << '=' << motif;
            }
            const auto prov = detail::provenance(cfg, extra.str());
            auto os = detail::open_output(synth_out);
            save_dataset(os, ds, &prov);
            err << "wrote " << ds.size() << " records with labels " << join(ds.label_names, ',') << " to "
                << synth_out << '\n';
            return kSuccess;
        }

        if (build->parsed()) {
            const auto cfg = build_c.resolve();
            detail::log_config(err, "build-dataset", cfg);
            PeakSets peaks;
            std::vector<std::string> labels;
            std::string extra = "build-dataset";
            for (const auto& p : build_peaks) {
                const auto [tf, path] = detail::split_assignment(p, "--peaks");
                std::ifstream in(resolve_path(path));
                if (!in) {
                    throw DataError("cannot read " + path);
                }
                try {
                    peaks.emplace_back(tf, parse_bed(in, tf));
                } catch (const DataError& e) {
                    throw DataError(path + ": " + e.what());
                }
                labels.push_back(tf);
                extra += " " + tf + "=" + path;
            }
            std::ifstream fa(resolve_path(build_genome));
            if (!fa) {
                throw DataError("cannot read " + build_genome);
            }
            Genome genome;
            try {
                genome = parse_fasta(fa);
            } catch (const DataError& e) {
                throw DataError(build_genome + ": " + e.what());
            }
            const auto regions = intersect_peaks(peaks);
            std::size_t skipped = 0;
            const auto ds = build_dataset(genome, regions, labels, cfg.size("window"), &skipped);
            const auto prov = detail::provenance(cfg, extra + " genome=" + build_genome);
            auto os = detail::open_output(build_out);
            save_dataset(os, ds, &prov);
            err << "wrote " << ds.size() << " regions (" << skipped << " skipped at chromosome ends) to "
                << build_out << '\n';
            return kSuccess;
        }

        if (split_cmd->parsed()) {
            const auto cfg = split_c.resolve();
            detail::log_config(err, "split", cfg);
            const auto ds = load_dataset(resolve_path(split_dataset_path));
            const auto parts = split_dataset(ds, cfg.real("train_frac"), cfg.real("val_frac"), cfg.size("seed"));
            const auto prov = detail::provenance(cfg, "split " + split_dataset_path);
            const std::pair<const char*, const EncodedDataset*> outputs[] = {
                {".train.tsv", &parts.train}, {".val.tsv", &parts.validation}, {".test.tsv", &parts.test}};
            for (const auto& [suffix, part] : outputs) {
                auto os = detail::open_output(split_prefix + suffix);
                save_dataset(os, *part, &prov);
            }
            err << "split " << ds.size() << " records into " << parts.train.size() << " train, "
                << parts.validation.size() << " validation, " << parts.test.size() << " test\n";
            return kSuccess;
        }

        if (train_cmd->parsed()) {
            const auto cfg = train_c.resolve();
            detail::log_config(err, "train", cfg);
            const auto tcfg = cfg.train_config();
            auto train_set = load_dataset(resolve_path(train_dataset));
            EncodedDataset val_set;
            if (!train_val.empty()) {
                val_set = load_dataset(resolve_path(train_val));
            } else {
                // Hold out val_frac of the training file.
                std::vector<std::size_t> order(train_set.size());
                std::iota(order.begin(), order.end(), std::size_t{0});
                auto rng = derive_rng(tcfg.seed, 3);
                shuffle_in_place(order, rng);
                const auto n_val = static_cast<std::size_t>(std::round(cfg.real("val_frac") * double(order.size())));
                if (n_val == 0 || n_val >= order.size()) {
                    throw DataError("cannot hold out a validation set from " + std::to_string(order.size()) +
                                    " records");
                }
                const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
                const std::vector<std::size_t> tr_idx(order.begin() + static_cast<long>(n_val), order.end());
                val_set = train_set.subset(val_idx);
                train_set = train_set.subset(tr_idx);
            }
            const auto mcfg = cfg.model_config(train_set.sequence_length(), train_set.num_labels());
            if (receptive_field(mcfg) < mcfg.input_length) {
                err << "warning: receptive field " << receptive_field(mcfg) << " is shorter than the input length "
                    << mcfg.input_length << '\n';
            }
            Rng init_rng = derive_rng(tcfg.seed, 0);
            auto model = TcnModel<float>::initialize(mcfg, init_rng);
            const std::size_t threads = cfg.size("threads");
            MonitorFn<float> monitor;
            if (tcfg.monitor != "val_loss") {
                const bool micro = tcfg.monitor == "micro_ap";
                monitor = [micro, threads](const TcnModel<float>& m, const EncodedDataset& v) {
                    const auto r = metrics_report(predict_scores(m, v, 64, threads));
                    return micro ? r.ap_micro : r.ap_macro;
                };
            }
            std::ostringstream history;
            history << "epoch\ttrain_loss\tlr\t" << tcfg.monitor << '\n';
            const auto result = train(model, train_set, val_set, tcfg, monitor, [&](const EpochRecord& r) {
                err << "epoch " << r.epoch << " loss " << r.train_loss << " lr " << r.lr << ' ' << tcfg.monitor
                    << ' ' << r.monitored << '\n';
                history << r.epoch << '\t' << format_real(r.train_loss) << '\t' << format_real(r.lr) << '\t'
                        << format_real(r.monitored) << '\n';
            });
            const auto prov = detail::provenance(cfg, "train " + train_dataset + " " + train_val);
            auto ck = make_checkpoint(result.model, train_set.label_names,
                                      {{"best_epoch", std::to_string(result.best_epoch)},
                                       {"best_value", format_real(result.best_value)},
                                       {"config_hash", prov.config_hash},
                                       {"monitor", tcfg.monitor},
                                       {"seed", std::to_string(prov.seed)},
                                       {"version", std::string(kVersion)}});
            auto os = detail::open_output(train_out);
            save_checkpoint(os, ck);
            if (!train_history.empty()) {
                auto hs = detail::open_output(train_history);
                prov.write_header(hs);
                hs << history.str();
            }
            err << "best epoch " << result.best_epoch << " (" << tcfg.monitor << ' ' << result.best_value << ")"
                << (result.stopped_early ? ", stopped early" : "") << "; wrote " << train_out << '\n';
            return kSuccess;
        }

        if (eval_cmd->parsed()) {
            const auto cfg = eval_c.resolve();
            detail::log_config(err, "evaluate", cfg);
            const auto ck = load_checkpoint(resolve_path(eval_model));
            const auto ds = load_dataset(resolve_path(eval_dataset));
            ck.check_compatible(ds);
            const auto model = ck.model();
            const auto sm = predict_scores(model, ds, 64, cfg.size("threads"));
            const auto report = metrics_report(sm, cfg.real("threshold"));
            const auto prov = detail::provenance(cfg, "evaluate " + eval_model + " " + eval_dataset);
            auto os = detail::open_output(eval_out);
            prov.write_header(os);
            write_report_kv(os, report);
            if (!eval_scores.empty()) {
                auto ss = detail::open_output(eval_scores);
                prov.write_header(ss);
                ss << "sample";
                for (const auto& l : ds.label_names) {
                    ss << '\t' << l << "_score\t" << l << "_target";
                }
                ss << '\n' << std::setprecision(8);
                for (std::size_t i = 0; i < sm.rows; ++i) {
                    ss << i;
                    for (std::size_t j = 0; j < sm.cols; ++j) {
                        ss << '\t' << sm.score(i, j) << '\t' << int(sm.target(i, j));
                    }
                    ss << '\n';
                }
            }
            write_report_table(out, report);
            for (const auto& w : report.warnings) {
                err << "warning: " << w << '\n';
            }
            return kSuccess;
        }

        if (attr_cmd->parsed()) {
            const auto cfg = attr_c.resolve();
            detail::log_config(err, "attribute", cfg);
            const auto ck = load_checkpoint(resolve_path(attr_model));
            const auto ds = load_dataset(resolve_path(attr_dataset));
            ck.check_compatible(ds);
            auto model = ck.model();
            model.set_trainable(false);
            const auto label = detail::label_index(ds.label_names, attr_label);
            std::vector<std::size_t> samples = attr_samples;
            if (samples.empty()) {
                for (std::size_t i = 0; i < ds.size() && samples.size() < attr_max; ++i) {
                    if (ds.samples[i].y[label]) {
                        samples.push_back(i);
                    }
                }
            }
            for (auto i : samples) {
                if (i >= ds.size()) {
                    throw DataError("sample index " + std::to_string(i) + " out of range");
                }
            }
            IgOptions opt;
            opt.steps = cfg.size("ig_steps");
            opt.baselines = cfg.size("ig_baselines");
            opt.seed = cfg.size("seed");
            opt.threads = cfg.size("threads");
            const auto maps = attribute_samples(model, ds, samples, label, opt);
            const auto prov = detail::provenance(cfg, "attribute " + attr_model + " " + attr_dataset + " " + attr_label);
            auto os = detail::open_output(attr_out);
            write_attributions(os, maps, &prov);
            std::size_t within = 0;
            for (const auto& m : maps) {
                within += m.relative_gap() < 0.01 ? 1 : 0;
            }
            err << "wrote " << maps.size() << " attribution maps; " << within
                << " have a completeness gap under 1%\n";
            return kSuccess;
        }

        if (motif_cmd->parsed()) {
            const auto cfg = motif_c.resolve();
            detail::log_config(err, "motifs", cfg);
            const auto ck = load_checkpoint(resolve_path(motif_model));
            const auto ds = load_dataset(resolve_path(motif_dataset));
            ck.check_compatible(ds);
            auto model = ck.model();
            model.set_trainable(false);
            MotifOptions opt;
            opt.ig.steps = cfg.size("ig_steps");
            opt.ig.baselines = cfg.size("ig_baselines");
            opt.ig.seed = cfg.size("seed");
            opt.ig.threads = cfg.size("threads");
            opt.window = cfg.size("seqlet_window");
            opt.sigma = cfg.real("seqlet_sigma");
            opt.min_correlation = cfg.real("cluster_corr");
            opt.max_samples = cfg.size("motif_samples");
            opt.null_samples = cfg.size("null_samples");
            const auto labels = motif_labels.empty() ? ds.label_names : motif_labels;
            std::vector<std::pair<std::string, Pwm>> named;
            for (const auto& name : labels) {
                const auto found = discover_motifs(model, ds, detail::label_index(ds.label_names, name), opt);
                err << name << ": " << found.seqlets.size() << " seqlets, " << found.pwms.size() << " clusters\n";
                for (std::size_t c = 0; c < found.pwms.size(); ++c) {
                    named.emplace_back(name + "_" + std::to_string(c + 1), found.pwms[c]);
                }
            }
            const auto prov = detail::provenance(cfg, "motifs " + motif_model + " " + motif_dataset);
            auto os = detail::open_output(motif_out);
            write_pwms(os, named, &prov);
            return kSuccess;
        }
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kNumerical;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kDataError;
    } catch (const ShapeError& e) {
        err << "shape error: " << e.what() << '\n';
        return kDataError;
    } catch (const MetricError& e) {
        err << "metric error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::invalid_argument& e) {
        err << "invalid argument: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsage;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run(args, out, err);
}

}  // namespace tcnbind::cli
