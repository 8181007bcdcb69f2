#pragma once

// Flat `key = value` run configuration shared by every subcommand. A config
// file is applied over the defaults and command-line overrides are applied
// last. Unknown keys are rejected so typos cannot silently fall back.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcnbind/genomic.hpp"
#include "tcnbind/layers.hpp"
#include "tcnbind/provenance.hpp"
#include "tcnbind/training.hpp"

namespace tcnbind {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};

// Defaults follow the HC-M-E2F hyperparameters. TCN channel width and the
// front-end kernel size are not published; 32 and 8 are used.
inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"cnn_layers", "2", "causal CNN front-end layers"},
        {"cnn_kernels", "32", "channels per CNN layer"},
        {"cnn_kernel_size", "8", "CNN kernel width"},
        {"tcn_blocks", "6", "residual TCN blocks"},
        {"tcn_channels", "32", "channels per TCN block"},
        {"kernel_size", "32", "TCN kernel width"},
        {"dilation_base", "2", "block b uses dilation base^b"},
        {"mlp_hidden", "100", "classifier hidden units"},
        {"dropout", "0.5", "dropout ratio"},
        {"batch_size", "64", "minibatch size"},
        {"epochs", "50", "maximum epochs"},
        {"lr", "0.00258", "peak learning rate"},
        {"warmup_frac", "0.2", "fraction of epochs spent in linear warmup"},
        {"patience", "5", "early-stopping patience in epochs"},
        {"monitor", "micro_ap", "early-stopping metric: micro_ap, macro_ap or val_loss"},
        {"seed", "0", "master random seed"},
        {"train_frac", "0.8", "train+validation share of the data"},
        {"val_frac", "0.2", "validation share of the train+validation part"},
        {"window", "1000", "window length for build-dataset"},
        {"threshold", "0.5", "decision threshold for P/R/F1"},
        {"ig_steps", "50", "integrated-gradients interpolation steps"},
        {"ig_baselines", "10", "shuffled baselines per sequence"},
        {"seqlet_window", "15", "seqlet length"},
        {"seqlet_sigma", "3", "null threshold in standard deviations"},
        {"cluster_corr", "0.7", "minimum alignment correlation to join a cluster"},
        {"motif_samples", "200", "positive sequences attributed per label"},
        {"null_samples", "50", "shuffled sequences used for the seqlet null"},
        {"threads", "1", "worker threads for evaluation and attribution"},
    };
    return keys;
}

class RunConfig {
public:
    RunConfig() {
        for (const auto& k : config_keys()) {
            values_[k.name] = k.default_value;
        }
    }

    static bool known(const std::string& key) {
        for (const auto& k : config_keys()) {
            if (key == k.name) {
                return true;
            }
        }
        return false;
    }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        values_[key] = value;
    }

    /// Reads `key = value` lines; `#` starts a comment.
    void merge(std::istream& in, const std::string& source = "config") {
        std::string raw;
        std::size_t lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            std::string line(strip_cr(raw));
            if (const auto hash = line.find('#'); hash != std::string::npos) {
                line.erase(hash);
            }
            const auto text = trim(line);
            if (text.empty()) {
                continue;
            }
            const auto eq = text.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
            }
            const auto key = trim(text.substr(0, eq));
            const auto value = trim(text.substr(eq + 1));
            if (!known(key)) {
                throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
            }
            values_[key] = value;
        }
    }

    void merge_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("cannot read config " + path);
        }
        merge(in, path);
    }

    const std::string& str(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            throw ConfigError("unknown config key '" + key + "'");
        }
        return it->second;
    }

    std::size_t size(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t used = 0;
            if (!v.empty() && v[0] == '-') {
                throw std::invalid_argument("negative");
            }
            const auto out = std::stoull(v, &used);
            if (used != v.size()) {
                throw std::invalid_argument("trailing");
            }
            return static_cast<std::size_t>(out);
        } catch (const std::logic_error&) {
            throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
        }
    }

    double real(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) {
                throw std::invalid_argument("trailing");
            }
            return out;
        } catch (const std::logic_error&) {
            throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
        }
    }

    /// Sequence length and label count come from the dataset, not the file.
    ModelConfig model_config(std::size_t input_length, std::size_t num_labels) const {
        ModelConfig c;
        c.input_length = input_length;
        c.num_labels = num_labels;
        c.cnn_layers = size("cnn_layers");
        c.cnn_kernels = size("cnn_kernels");
        c.cnn_kernel_size = size("cnn_kernel_size");
        c.tcn_blocks = size("tcn_blocks");
        c.tcn_channels = size("tcn_channels");
        c.kernel_size = size("kernel_size");
        c.dilation_base = size("dilation_base");
        c.mlp_hidden = size("mlp_hidden");
        c.dropout = real("dropout");
        c.validate();
        return c;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.batch_size = size("batch_size");
        t.epochs = size("epochs");
        t.lr_max = real("lr");
        t.warmup_frac = real("warmup_frac");
        t.patience = size("patience");
        t.monitor = str("monitor");
        t.seed = size("seed");
        t.validate();
        make_monitor<float>(t.monitor);
        return t;
    }

    /// Sorted `key = value` lines; hashing this text identifies the run.
    std::string resolved() const {
        std::ostringstream os;
        for (const auto& [k, v] : values_) {
            os << k << " = " << v << '\n';
        }
        return os.str();
    }

    Provenance provenance() const { return Provenance{hex64(fnv1a64(resolved())), size("seed")}; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        if (b == std::string::npos) {
            return "";
        }
        const auto e = s.find_last_not_of(" \t");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace tcnbind
