#pragma once

// Temporal convolutional network for multi-label sequence classification:
// one-hot input -> causal CNN front-end -> residual dilated TCN blocks ->
// MLP classifier on the final time step, emitting one raw logit per label.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tcnbind/random.hpp"
#include "tcnbind/tensor.hpp"

namespace tcnbind {

struct ModelConfig {
    std::size_t input_length = 1000;
    std::size_t alphabet_size = 4;
    std::size_t num_labels = 4;
    std::size_t cnn_layers = 2;
    std::size_t cnn_kernels = 32;      // channels of each CNN front-end layer
    std::size_t cnn_kernel_size = 8;   // spatial width of front-end filters
    std::size_t tcn_blocks = 6;
    std::size_t tcn_channels = 32;
    std::size_t kernel_size = 32;      // spatial width of TCN filters
    std::size_t dilation_base = 2;     // block b uses dilation base^b
    std::size_t mlp_hidden = 100;
    double dropout = 0.5;

    void validate() const {
        auto positive = [](std::size_t v, const char* name) {
            if (v == 0) {
                throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
            }
        };
        positive(input_length, "input_length");
        positive(alphabet_size, "alphabet_size");
        positive(num_labels, "num_labels");
        positive(kernel_size, "kernel_size");
        positive(cnn_kernel_size, "cnn_kernel_size");
        positive(mlp_hidden, "mlp_hidden");
        positive(dilation_base, "dilation_base");
        if (cnn_layers > 0) {
            positive(cnn_kernels, "cnn_kernels");
        }
        if (tcn_blocks > 0) {
            positive(tcn_channels, "tcn_channels");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw std::invalid_argument("model config: dropout must be in [0, 1)");
        }
    }

    std::size_t block_dilation(std::size_t block) const {
        std::size_t d = 1;
        for (std::size_t i = 0; i < block; ++i) {
            d *= dilation_base;
        }
        return d;
    }

    bool operator==(const ModelConfig&) const = default;
};

/// Number of input positions able to influence the last output position.
inline std::size_t receptive_field(const ModelConfig& cfg) {
    std::size_t rf = 1 + cfg.cnn_layers * (cfg.cnn_kernel_size - 1);
    for (std::size_t b = 0; b < cfg.tcn_blocks; ++b) {
        rf += 2 * (cfg.kernel_size - 1) * cfg.block_dilation(b);
    }
    return rf;
}

/// Ordered name -> tensor map. Insertion order is the serialization order.
template <typename T>
class ParameterRegistry {
public:
    void add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) {
            throw std::invalid_argument("duplicate parameter name " + name);
        }
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw std::out_of_range("no parameter named " + name);
        }
        return entries_[it->second].second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return entries_.size(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries_) {
            n += t.size();
        }
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : entries_) {
            t.zero_grad();
        }
    }

    void set_requires_grad(bool on) {
        for (auto& [name, t] : entries_) {
            t.set_requires_grad(on);
        }
    }

    /// Independent copy of every tensor (values only, fresh leaves).
    ParameterRegistry clone() const {
        ParameterRegistry out;
        for (const auto& [name, t] : entries_) {
            out.add(name, t.detach(t.requires_grad()));
        }
        return out;
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

template <typename T>
struct Conv1dParams {
    Tensor<T> weight;  // [out_channels, in_channels, kernel_size]
    Tensor<T> bias;    // [out_channels]
    std::size_t dilation = 1;

    std::size_t out_channels() const { return weight.extent(0); }
    std::size_t in_channels() const { return weight.extent(1); }
    std::size_t kernel_size() const { return weight.extent(2); }
};

template <typename T>
struct TcnBlockParams {
    Conv1dParams<T> conv1;
    Conv1dParams<T> conv2;
    std::optional<Conv1dParams<T>> projection;  // 1x1, present iff channels change
    double dropout_ratio = 0.0;
};

template <typename T>
Tensor<T> conv1d_causal(const Tensor<T>& x, const Conv1dParams<T>& p) {
    return causal_conv1d(x, p.weight, p.bias, p.dilation);
}

/// relu(dropout(relu(conv2(dropout(relu(conv1(x)))))) + skip(x)), with dropout
/// applied only when `rng` is given.
template <typename T>
Tensor<T> tcn_block(const Tensor<T>& x, const TcnBlockParams<T>& p, Rng* rng,
                    std::vector<Tensor<T>>* trace = nullptr) {
    auto h = relu(conv1d_causal(x, p.conv1));
    if (rng) {
        h = dropout(h, p.dropout_ratio, *rng);
    }
    h = relu(conv1d_causal(h, p.conv2));
    if (rng) {
        h = dropout(h, p.dropout_ratio, *rng);
    }
    if (trace) {
        trace->push_back(h);
    }
    const auto skip = p.projection ? conv1d_causal(x, *p.projection) : x;
    auto out = relu(add(h, skip));
    if (trace) {
        trace->push_back(out);
    }
    return out;
}

namespace detail {

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / double(fan_in + fan_out));
    std::vector<T> v(numel(shape));
    for (auto& x : v) {
        x = static_cast<T>(uniform(rng, -a, a));
    }
    return Tensor<T>::create(std::move(shape), std::move(v), true);
}

}  // namespace detail

template <typename T>
class TcnModel {
public:
    /// Fresh model: Glorot-uniform weights, zero biases.
    static TcnModel initialize(const ModelConfig& cfg, Rng& rng) {
        cfg.validate();
        ParameterRegistry<T> reg;
        auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k) {
            reg.add(prefix + ".weight", detail::glorot_uniform<T>({cout, cin, k}, cin * k, cout * k, rng));
            reg.add(prefix + ".bias", Tensor<T>::zeros({cout}, true));
        };
        std::size_t channels = cfg.alphabet_size;
        for (std::size_t i = 0; i < cfg.cnn_layers; ++i) {
            conv("cnn." + std::to_string(i), channels, cfg.cnn_kernels, cfg.cnn_kernel_size);
            channels = cfg.cnn_kernels;
        }
        for (std::size_t b = 0; b < cfg.tcn_blocks; ++b) {
            const std::string prefix = "tcn." + std::to_string(b);
            conv(prefix + ".conv1", channels, cfg.tcn_channels, cfg.kernel_size);
            conv(prefix + ".conv2", cfg.tcn_channels, cfg.tcn_channels, cfg.kernel_size);
            if (channels != cfg.tcn_channels) {
                conv(prefix + ".projection", channels, cfg.tcn_channels, 1);
            }
            channels = cfg.tcn_channels;
        }
        reg.add("mlp.hidden.weight", detail::glorot_uniform<T>({channels, cfg.mlp_hidden}, channels, cfg.mlp_hidden, rng));
        reg.add("mlp.hidden.bias", Tensor<T>::zeros({cfg.mlp_hidden}, true));
        reg.add("mlp.out.weight",
                detail::glorot_uniform<T>({cfg.mlp_hidden, cfg.num_labels}, cfg.mlp_hidden, cfg.num_labels, rng));
        reg.add("mlp.out.bias", Tensor<T>::zeros({cfg.num_labels}, true));
        return TcnModel(cfg, std::move(reg));
    }

    /// Rebinds a registry (e.g. loaded from a checkpoint) to the architecture,
    /// checking that every expected tensor is present with the right shape.
    TcnModel(ModelConfig cfg, ParameterRegistry<T> params) : config_(std::move(cfg)), params_(std::move(params)) {
        config_.validate();
        bind();
    }

    const ModelConfig& config() const { return config_; }
    const ParameterRegistry<T>& parameters() const { return params_; }
    ParameterRegistry<T>& parameters() { return params_; }
    const std::vector<Conv1dParams<T>>& cnn_layers() const { return cnn_; }
    const std::vector<TcnBlockParams<T>>& blocks() const { return blocks_; }

    /// Parameters stop (or resume) recording gradients; frozen models can be
    /// differentiated with respect to their inputs only.
    void set_trainable(bool on) { params_.set_requires_grad(on); }

    /// Deep copy with independent parameter storage.
    TcnModel clone() const { return TcnModel(config_, params_.clone()); }

    /// x is [L, alphabet] (returns [k]) or [B, L, alphabet] (returns [B, k]).
    /// Dropout is active iff `rng` is non-null. `trace`, when given, receives
    /// every intermediate [.., L, C] activation in layer order.
    Tensor<T> forward(const Tensor<T>& x, Rng* rng = nullptr, std::vector<Tensor<T>>* trace = nullptr) const {
        const bool batched = x.ndim() == 3;
        if (!batched && x.ndim() != 2) {
            throw ShapeError("model input must be [L,4] or [B,L,4], got " + shape_str(x.shape()));
        }
        const std::size_t len = x.shape()[x.ndim() - 2];
        if (len != config_.input_length) {
            throw ShapeError("model expects length " + std::to_string(config_.input_length) + ", got " +
                             std::to_string(len));
        }
        if (x.shape().back() != config_.alphabet_size) {
            throw ShapeError("model expects " + std::to_string(config_.alphabet_size) + " input channels");
        }
        auto h = batched ? x : reshape(x, {1, x.extent(0), x.extent(1)});
        for (const auto& layer : cnn_) {
            h = relu(conv1d_causal(h, layer));
            if (rng) {
                h = dropout(h, config_.dropout, *rng);
            }
            if (trace) {
                trace->push_back(h);
            }
        }
        for (const auto& block : blocks_) {
            h = tcn_block(h, block, rng, trace);
        }
        auto feat = select_time(h, len - 1);
        auto hidden = relu(add(matmul(feat, hidden_w_), hidden_b_));
        if (rng) {
            hidden = dropout(hidden, config_.dropout, *rng);
        }
        auto logits = add(matmul(hidden, out_w_), out_b_);
        return batched ? logits : reshape(logits, {config_.num_labels});
    }

private:
    void bind() {
        auto expect = [&](const std::string& name, const Shape& shape) {
            const auto& t = params_.get(name);
            if (t.shape() != shape) {
                throw ShapeError("parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                                 shape_str(shape));
            }
            return t;
        };
        auto conv = [&](const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k,
                        std::size_t dilation) {
            return Conv1dParams<T>{expect(prefix + ".weight", {cout, cin, k}), expect(prefix + ".bias", {cout}),
                                   dilation};
        };
        std::size_t expected = 0;
        std::size_t channels = config_.alphabet_size;
        for (std::size_t i = 0; i < config_.cnn_layers; ++i) {
            cnn_.push_back(conv("cnn." + std::to_string(i), channels, config_.cnn_kernels, config_.cnn_kernel_size, 1));
            channels = config_.cnn_kernels;
            expected += 2;
        }
        for (std::size_t b = 0; b < config_.tcn_blocks; ++b) {
            const std::string prefix = "tcn." + std::to_string(b);
            const std::size_t d = config_.block_dilation(b);
            TcnBlockParams<T> block;
            block.conv1 = conv(prefix + ".conv1", channels, config_.tcn_channels, config_.kernel_size, d);
            block.conv2 = conv(prefix + ".conv2", config_.tcn_channels, config_.tcn_channels, config_.kernel_size, d);
            expected += 4;
            if (channels != config_.tcn_channels) {
                block.projection = conv(prefix + ".projection", channels, config_.tcn_channels, 1, 1);
                expected += 2;
            }
            block.dropout_ratio = config_.dropout;
            blocks_.push_back(std::move(block));
            channels = config_.tcn_channels;
        }
        hidden_w_ = expect("mlp.hidden.weight", {channels, config_.mlp_hidden});
        hidden_b_ = expect("mlp.hidden.bias", {config_.mlp_hidden});
        out_w_ = expect("mlp.out.weight", {config_.mlp_hidden, config_.num_labels});
        out_b_ = expect("mlp.out.bias", {config_.num_labels});
        expected += 4;
        if (expected != params_.size()) {
            throw std::invalid_argument("parameter registry holds " + std::to_string(params_.size()) +
                                        " tensors, architecture needs " + std::to_string(expected));
        }
    }

    ModelConfig config_;
    ParameterRegistry<T> params_;
    std::vector<Conv1dParams<T>> cnn_;
    std::vector<TcnBlockParams<T>> blocks_;
    Tensor<T> hidden_w_, hidden_b_, out_w_, out_b_;
};

/// Same architecture and parameter values in another element type.
template <typename To, typename From>
TcnModel<To> convert_model(const TcnModel<From>& model) {
    ParameterRegistry<To> reg;
    for (const auto& [name, t] : model.parameters()) {
        std::vector<To> v(t.values().begin(), t.values().end());
        reg.add(name, Tensor<To>::create(t.shape(), std::move(v), t.requires_grad()));
    }
    return TcnModel<To>(model.config(), std::move(reg));
}

}  // namespace tcnbind
