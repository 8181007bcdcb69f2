#pragma once

// Multi-label training: sigmoid cross-entropy, Adam without weight decay, a
// per-epoch linear-warmup + cosine schedule, patience-based early stopping
// with best-epoch snapshots, and the binary checkpoint format.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "tcnbind/genomic.hpp"
#include "tcnbind/layers.hpp"
#include "tcnbind/metrics.hpp"
#include "tcnbind/parallel.hpp"
#include "tcnbind/provenance.hpp"
#include "tcnbind/random.hpp"
#include "tcnbind/tensor.hpp"

namespace tcnbind {

/// Training diverged (non-finite loss).
class NumericalError : public std::runtime_error {
public:
    NumericalError(std::size_t epoch, std::size_t batch, double loss)
        : std::runtime_error("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch)),
          epoch_(epoch),
          batch_(batch) {}
    std::size_t epoch() const { return epoch_; }
    std::size_t batch() const { return batch_; }

private:
    std::size_t epoch_, batch_;
};

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Mean over all B*k entries of max(z,0) - z*y + log(1 + exp(-|z|)).
template <typename T>
Tensor<T> bce_multilabel_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
    if (logits.shape() != targets.shape()) {
        throw ShapeError("bce loss: logits " + shape_str(logits.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    }
    const std::size_t n = logits.size();
    const auto z = logits.values();
    const auto y = targets.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double zi = z[i];
        acc += std::max(zi, 0.0) - zi * double(y[i]) + std::log1p(std::exp(-std::abs(zi)));
    }
    auto zn = logits.node();
    auto yn = targets.node();
    return custom_op<T>("bce_loss", {1}, {static_cast<T>(acc / double(n))}, {logits},
                        [zn, yn, n](detail::Node<T>& self) {
                            const double g = double(self.grad[0]) / double(n);
                            std::vector<double> gz(n);
                            for (std::size_t i = 0; i < n; ++i) {
                                gz[i] = g * (stable_sigmoid(double(zn->value[i])) - double(yn->value[i]));
                            }
                            zn->accumulate(std::span<const double>(gz));
                        });
}

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update of every parameter that holds a gradient;
/// no weight decay.
template <typename T>
void adam_step(ParameterRegistry<T>& params, AdamState& state, double lr) {
    if (state.m.empty()) {
        for (const auto& [name, t] : params) {
            state.m.emplace_back(t.size(), 0.0);
            state.v.emplace_back(t.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw std::invalid_argument("adam state does not match the parameter registry");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
    std::size_t idx = 0;
    for (auto& [name, t] : params) {
        auto& m = state.m[idx];
        auto& v = state.v[idx];
        ++idx;
        if (!t.has_grad()) {
            continue;
        }
        const auto g = t.grad();
        auto w = t.mutable_values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] = static_cast<T>(double(w[i]) - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

/// Linear warmup over the first ceil(warmup_frac * total) epochs, then cosine
/// annealing towards zero.
inline double lr_schedule(std::size_t epoch, std::size_t total_epochs, double lr_max, double warmup_frac) {
    if (total_epochs == 0 || epoch >= total_epochs) {
        throw std::invalid_argument("lr_schedule: epoch out of range");
    }
    const auto warmup = static_cast<std::size_t>(std::ceil(warmup_frac * double(total_epochs)));
    if (epoch < warmup) {
        return lr_max * double(epoch + 1) / double(warmup);
    }
    const double progress = double(epoch - warmup) / double(total_epochs - warmup);
    return 0.5 * lr_max * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Post-sigmoid scores for every sample, computed without a graph. Batches
/// are independent, so `threads` > 1 gives the same scores.
template <typename T>
ScoreMatrix predict_scores(const TcnModel<T>& model, const EncodedDataset& ds, std::size_t batch_size = 64,
                           std::size_t threads = 1) {
    ScoreMatrix sm;
    sm.rows = ds.size();
    sm.cols = ds.num_labels();
    sm.label_names = ds.label_names;
    sm.scores.resize(sm.rows * sm.cols);
    const std::size_t batches = (ds.size() + batch_size - 1) / batch_size;
    parallel_for(batches, threads, [&](std::size_t b) {
        NoGradGuard guard;
        std::vector<std::size_t> idx;
        for (std::size_t i = b * batch_size; i < std::min(ds.size(), (b + 1) * batch_size); ++i) {
            idx.push_back(i);
        }
        const auto logits = model.forward(encode_batch<T>(ds, idx));
        const auto z = logits.values();
        for (std::size_t q = 0; q < z.size(); ++q) {
            sm.scores[b * batch_size * sm.cols + q] = stable_sigmoid(double(z[q]));
        }
    });
    for (const auto& s : ds.samples) {
        sm.targets.insert(sm.targets.end(), s.y.begin(), s.y.end());
    }
    return sm;
}

template <typename T>
double mean_loss(const TcnModel<T>& model, const EncodedDataset& ds, std::size_t batch_size = 64) {
    NoGradGuard guard;
    double total = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) {
            idx.push_back(i);
        }
        const auto loss = bce_multilabel_loss(model.forward(encode_batch<T>(ds, idx)), label_batch<T>(ds, idx));
        total += double(loss.item()) * double(idx.size());
    }
    return total / double(ds.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t epochs = 50;
    double lr_max = 0.00258;
    double warmup_frac = 0.2;
    std::size_t patience = 5;
    std::uint64_t seed = 0;
    std::string monitor = "micro_ap";  // micro_ap | macro_ap | val_loss

    void validate() const {
        if (batch_size == 0 || epochs == 0 || patience == 0) {
            throw std::invalid_argument("train config: batch_size, epochs and patience must be positive");
        }
        if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) {
            throw std::invalid_argument("train config: warmup_frac must lie in (0, 1)");
        }
        if (!(lr_max > 0.0)) {
            throw std::invalid_argument("train config: lr_max must be positive");
        }
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double lr = 0.0;
    double monitored = 0.0;
};

template <typename T>
struct TrainResult {
    TcnModel<T> model;  // best-epoch snapshot
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_value = 0.0;
    bool stopped_early = false;
};

/// Higher is better. Validation loss is negated to fit.
template <typename T>
using MonitorFn = std::function<double(const TcnModel<T>&, const EncodedDataset&)>;

template <typename T>
MonitorFn<T> make_monitor(const std::string& name) {
    if (name == "micro_ap" || name == "macro_ap") {
        const bool micro = name == "micro_ap";
        return [micro](const TcnModel<T>& model, const EncodedDataset& val) {
            const auto report = metrics_report(predict_scores(model, val));
            return micro ? report.ap_micro : report.ap_macro;
        };
    }
    if (name == "val_loss") {
        return [](const TcnModel<T>& model, const EncodedDataset& val) { return -mean_loss(model, val); };
    }
    throw std::invalid_argument("unknown monitor '" + name + "'");
}

template <typename T>
TrainResult<T> train(TcnModel<T> model, const EncodedDataset& train_set, const EncodedDataset& val_set,
                     const TrainConfig& cfg, std::type_identity_t<MonitorFn<T>> monitor = nullptr,
                     const std::function<void(const EpochRecord&)>& on_epoch = nullptr) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) {
        throw DataError("training needs non-empty train and validation sets");
    }
    if (train_set.num_labels() != model.config().num_labels || val_set.label_names != train_set.label_names) {
        throw DataError("label registries of model and datasets differ");
    }
    if (!monitor) {
        monitor = make_monitor<T>(cfg.monitor);
    }
    model.set_trainable(true);
    AdamState adam;
    auto shuffle_rng = derive_rng(cfg.seed, 1);
    auto dropout_rng = derive_rng(cfg.seed, 2);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::optional<TcnModel<T>> best;
    TrainResult<T> result{model, {}, 0, -std::numeric_limits<double>::infinity(), false};
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.epochs, cfg.lr_max, cfg.warmup_frac);
        shuffle_in_place(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
            const std::span<const std::size_t> idx(order.data() + start,
                                                   std::min(cfg.batch_size, order.size() - start));
            const auto logits = model.forward(encode_batch<T>(train_set, idx), &dropout_rng);
            const auto loss = bce_multilabel_loss(logits, label_batch<T>(train_set, idx));
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericalError(epoch + 1, batch_no, value);
            }
            loss_sum += value * double(idx.size());
            model.parameters().zero_grad();
            backward(loss);
            adam_step(model.parameters(), adam, lr);
        }
        EpochRecord rec{epoch + 1, loss_sum / double(order.size()), lr, monitor(model, val_set)};
        result.history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
        if (!best || rec.monitored > result.best_value) {
            best = model.clone();
            result.best_value = rec.monitored;
            result.best_epoch = rec.epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            result.stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    model.parameters().zero_grad();
    result.model = std::move(*best);
    result.model.parameters().zero_grad();
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Little-endian: "TCNB", u32 version (1), u32 config length, config text
// (key=value per line), u32 tensor count, then per tensor u16 name length,
// name, u8 ndim, u32 dims[ndim], f32 payload in row-major order.

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelCheckpoint {
    ModelConfig config;
    std::vector<std::string> label_names;
    ParameterRegistry<float> parameters;
    std::map<std::string, std::string> metadata;  // epoch, best value, provenance

    TcnModel<float> model() const { return TcnModel<float>(config, parameters.clone()); }

    /// Throws DataError unless `ds` has this checkpoint's labels and length.
    void check_compatible(const EncodedDataset& ds) const {
        if (ds.label_names != label_names) {
            throw DataError("dataset labels [" + join(ds.label_names, ',') + "] do not match the model's [" +
                            join(label_names, ',') + "]");
        }
        if (ds.sequence_length() != config.input_length) {
            throw DataError("dataset sequences have length " + std::to_string(ds.sequence_length()) +
                            ", the model expects " + std::to_string(config.input_length));
        }
    }
};

inline std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string config_text(const ModelCheckpoint& ck) {
    const auto& c = ck.config;
    std::ostringstream os;
    os << "input_length=" << c.input_length << '\n'
       << "alphabet_size=" << c.alphabet_size << '\n'
       << "num_labels=" << c.num_labels << '\n'
       << "cnn_layers=" << c.cnn_layers << '\n'
       << "cnn_kernels=" << c.cnn_kernels << '\n'
       << "cnn_kernel_size=" << c.cnn_kernel_size << '\n'
       << "tcn_blocks=" << c.tcn_blocks << '\n'
       << "tcn_channels=" << c.tcn_channels << '\n'
       << "kernel_size=" << c.kernel_size << '\n'
       << "dilation_base=" << c.dilation_base << '\n'
       << "mlp_hidden=" << c.mlp_hidden << '\n'
       << "dropout=" << format_real(c.dropout) << '\n'
       << "labels=" << join(ck.label_names, ',') << '\n';
    for (const auto& [k, v] : ck.metadata) {
        os << "meta." << k << '=' << v << '\n';
    }
    return os.str();
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
    os.write(b, 4);
}
inline void put_u16(std::ostream& os, std::uint16_t v) {
    const char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
    os.write(b, 2);
}

inline void get_bytes(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
}
inline std::uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    get_bytes(in, reinterpret_cast<char*>(b), 4, what);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}
inline std::uint16_t get_u16(std::istream& in, const char* what) {
    unsigned char b[2];
    get_bytes(in, reinterpret_cast<char*>(b), 2, what);
    return static_cast<std::uint16_t>(b[0] | b[1] << 8);
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os, const ModelCheckpoint& ck) {
    os.write("TCNB", 4);
    detail::put_u32(os, 1);
    const auto text = config_text(ck);
    detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(ck.parameters.size()));
    for (const auto& [name, t] : ck.parameters) {
        detail::put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(t.ndim()));
        for (auto e : t.shape()) {
            detail::put_u32(os, static_cast<std::uint32_t>(e));
        }
        for (float f : t.values()) {
            detail::put_u32(os, std::bit_cast<std::uint32_t>(f));
        }
    }
}

inline ModelCheckpoint load_checkpoint(std::istream& in) {
    char magic[4];
    detail::get_bytes(in, magic, 4, "magic");
    if (std::memcmp(magic, "TCNB", 4) != 0) {
        throw CheckpointError("not a tcnbind checkpoint (bad magic)");
    }
    const auto version = detail::get_u32(in, "version");
    if (version != 1) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto text_len = detail::get_u32(in, "config length");
    std::string text(text_len, '\0');
    detail::get_bytes(in, text.data(), text_len, "config");

    ModelCheckpoint ck;
    std::map<std::string, std::string> kv;
    {
        std::istringstream ts(text);
        std::string line;
        while (std::getline(ts, line)) {
            if (line.empty()) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw CheckpointError("malformed config line '" + line + "'");
            }
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    auto take = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw CheckpointError("checkpoint config lacks '" + key + "'");
        }
        auto v = it->second;
        kv.erase(it);
        return v;
    };
    auto take_size = [&](const std::string& key) {
        const auto v = take(key);
        try {
            return static_cast<std::size_t>(std::stoull(v));
        } catch (const std::exception&) {
            throw CheckpointError("checkpoint config '" + key + "' is not an integer");
        }
    };
    auto& c = ck.config;
    c.input_length = take_size("input_length");
    c.alphabet_size = take_size("alphabet_size");
    c.num_labels = take_size("num_labels");
    c.cnn_layers = take_size("cnn_layers");
    c.cnn_kernels = take_size("cnn_kernels");
    c.cnn_kernel_size = take_size("cnn_kernel_size");
    c.tcn_blocks = take_size("tcn_blocks");
    c.tcn_channels = take_size("tcn_channels");
    c.kernel_size = take_size("kernel_size");
    c.dilation_base = take_size("dilation_base");
    c.mlp_hidden = take_size("mlp_hidden");
    c.dropout = std::stod(take("dropout"));
    ck.label_names = split(take("labels"), ',');
    for (auto& [k, v] : kv) {
        if (!k.starts_with("meta.")) {
            throw CheckpointError("unknown checkpoint config key '" + k + "'");
        }
        ck.metadata[k.substr(5)] = v;
    }
    if (ck.label_names.size() != c.num_labels) {
        throw CheckpointError("checkpoint label list does not match num_labels");
    }

    const auto count = detail::get_u32(in, "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::get_u16(in, "tensor name length");
        std::string name(name_len, '\0');
        detail::get_bytes(in, name.data(), name_len, "tensor name");
        char ndim = 0;
        detail::get_bytes(in, &ndim, 1, "tensor rank");
        if (ndim <= 0) {
            throw CheckpointError("tensor " + name + " has invalid rank");
        }
        Shape shape;
        for (int d = 0; d < ndim; ++d) {
            shape.push_back(detail::get_u32(in, "tensor dims"));
        }
        std::vector<float> values(numel(shape));
        for (auto& f : values) {
            f = std::bit_cast<float>(detail::get_u32(in, "tensor payload"));
        }
        ck.parameters.add(name, Tensor<float>::create(shape, std::move(values)));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError("trailing bytes after the last tensor");
    }
    // Validates the registry against the architecture.
    (void)TcnModel<float>(ck.config, ck.parameters.clone());
    return ck;
}

inline void save_checkpoint(const std::string& path, const ModelCheckpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw CheckpointError("cannot write " + path);
    }
    save_checkpoint(os, ck);
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("cannot read " + path);
    }
    return load_checkpoint(in);
}

inline ModelCheckpoint make_checkpoint(const TcnModel<float>& model, std::vector<std::string> label_names,
                                       std::map<std::string, std::string> metadata = {}) {
    ModelCheckpoint ck{model.config(), std::move(label_names), {}, std::move(metadata)};
    for (const auto& [name, t] : model.parameters()) {
        ck.parameters.add(name, t.detach());
    }
    return ck;
}

}  // namespace tcnbind
