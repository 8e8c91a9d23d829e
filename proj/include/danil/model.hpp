#pragma once

// Toy classifiers built from the primitive family: a fully connected MLP and
// a small conv net. Hidden layers use relu; logits are returned raw.

#include <danil/autodiff.hpp>
#include <danil/rng.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace danil::nn {

struct MlpConfig {
    std::vector<std::size_t> widths;  // input dim first, class count last

    friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

struct ConvBlock {
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 0;
    std::size_t pool = 1;  // max-pool window after the activation; 1 disables pooling

    friend bool operator==(const ConvBlock&, const ConvBlock&) = default;
};

struct SmallCnnConfig {
    std::size_t channels = 1, height = 0, width = 0;
    std::vector<ConvBlock> blocks;
    std::size_t classes = 2;

    friend bool operator==(const SmallCnnConfig&, const SmallCnnConfig&) = default;
};

using ModelConfig = std::variant<MlpConfig, SmallCnnConfig>;

namespace detail {

struct CnnPlan {
    std::vector<Shape> feature_shapes;  // (C, H, W) after each block
    std::size_t flat = 0;
};

inline CnnPlan plan(const SmallCnnConfig& c) {
    if (c.channels == 0 || c.height == 0 || c.width == 0)
        throw ConfigError("cnn: input extents must be positive");
    if (c.classes < 2) throw ConfigError("cnn: classes must be >= 2");
    CnnPlan p;
    Shape cur{c.channels, c.height, c.width};
    for (std::size_t i = 0; i < c.blocks.size(); ++i) {
        const auto& b = c.blocks[i];
        const std::string where = "cnn block " + std::to_string(i) + ": ";
        if (b.out_channels == 0 || b.kernel == 0 || b.stride == 0 || b.pool == 0)
            throw ConfigError(where + "extents must be positive");
        if (cur[1] + 2 * b.pad < b.kernel || cur[2] + 2 * b.pad < b.kernel)
            throw ConfigError(where + "kernel does not fit input " + to_string(cur));
        std::size_t h = (cur[1] + 2 * b.pad - b.kernel) / b.stride + 1;
        std::size_t w = (cur[2] + 2 * b.pad - b.kernel) / b.stride + 1;
        h /= b.pool;
        w /= b.pool;
        if (h < 1 || w < 1) throw ConfigError(where + "output collapses below 1x1");
        cur = Shape{b.out_channels, h, w};
        p.feature_shapes.push_back(cur);
    }
    p.flat = numel(cur);
    return p;
}

} // namespace detail

inline void validate(const ModelConfig& cfg) {
    if (const auto* m = std::get_if<MlpConfig>(&cfg)) {
        if (m->widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
        for (auto w : m->widths)
            if (w < 1) throw ConfigError("mlp: widths must be >= 1");
        return;
    }
    detail::plan(std::get<SmallCnnConfig>(cfg));
}

/// Shape of one sample (no batch axis).
inline Shape input_shape(const ModelConfig& cfg) {
    if (const auto* m = std::get_if<MlpConfig>(&cfg)) return Shape{m->widths.front()};
    const auto& c = std::get<SmallCnnConfig>(cfg);
    return Shape{c.channels, c.height, c.width};
}

inline std::size_t class_count(const ModelConfig& cfg) {
    if (const auto* m = std::get_if<MlpConfig>(&cfg)) return m->widths.back();
    return std::get<SmallCnnConfig>(cfg).classes;
}

struct ParamSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in = 0;  // 0 marks a bias
};

inline std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
    validate(cfg);
    std::vector<ParamSpec> out;
    if (const auto* m = std::get_if<MlpConfig>(&cfg)) {
        for (std::size_t i = 0; i + 1 < m->widths.size(); ++i) {
            const auto in = m->widths[i], o = m->widths[i + 1];
            out.push_back({"fc" + std::to_string(i) + ".weight", {in, o}, in});
            out.push_back({"fc" + std::to_string(i) + ".bias", {o}, 0});
        }
        return out;
    }
    const auto& c = std::get<SmallCnnConfig>(cfg);
    const auto p = detail::plan(c);
    std::size_t in_ch = c.channels;
    for (std::size_t i = 0; i < c.blocks.size(); ++i) {
        const auto& b = c.blocks[i];
        const std::size_t fan = in_ch * b.kernel * b.kernel;
        out.push_back({"conv" + std::to_string(i) + ".weight", {b.out_channels, in_ch, b.kernel, b.kernel}, fan});
        out.push_back({"conv" + std::to_string(i) + ".bias", {b.out_channels}, 0});
        in_ch = b.out_channels;
    }
    out.push_back({"fc.weight", {p.flat, c.classes}, p.flat});
    out.push_back({"fc.bias", {c.classes}, 0});
    return out;
}

inline std::size_t parameter_count(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& s : parameter_specs(cfg)) n += numel(s.shape);
    return n;
}

struct Model {
    ModelConfig config;
    std::vector<Parameter> params;
    std::uint64_t seed = 0;

    /// Register every parameter as a differentiable leaf on `tape`.
    std::vector<VarId> bind(Tape& tape) {
        std::vector<VarId> ids;
        ids.reserve(params.size());
        for (auto& p : params) ids.push_back(p.bind(tape));
        return ids;
    }

    std::vector<Tensor> values() const {
        std::vector<Tensor> v;
        v.reserve(params.size());
        for (const auto& p : params) v.push_back(p.value);
        return v;
    }
};

/// Weights ~ U[-s, s] with s = sqrt(6 / fan_in); biases zero.
inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
    Model m{cfg, {}, seed};
    SplitMix64 rng(seed);
    for (const auto& spec : parameter_specs(cfg)) {
        Tensor t(spec.shape);
        if (spec.fan_in > 0) {
            const double s = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
            for (auto& v : t.data()) v = rng.uniform(-s, s);
        }
        m.params.emplace_back(spec.name, std::move(t));
    }
    return m;
}

namespace detail {

inline VarId add_bias(Tape& tape, VarId h, VarId bias, std::size_t axis) {
    const Shape hs = tape.value(h).shape();
    Shape bs(hs.size(), 1);
    bs[axis] = hs[axis];
    return add(tape, h, expand(tape, reshape(tape, bias, bs), hs));
}

inline VarId linear(Tape& tape, VarId x, const Parameter& w, const Parameter& b) {
    return add_bias(tape, matmul(tape, x, w.id), b.id, 1);
}

} // namespace detail

/// Logits of shape (batch, classes). Parameters must be bound to `tape`.
inline VarId forward(const Model& model, Tape& tape, VarId x) {
    for (const auto& p : model.params) tape.check(p.id);
    const Shape xs = tape.value(x).shape();
    const Shape sample = input_shape(model.config);
    if (xs.size() < 2) throw ShapeError("forward: input must have a batch axis, got " + to_string(xs));
    const std::size_t batch = xs[0];
    const auto& ps = model.params;

    if (const auto* m = std::get_if<MlpConfig>(&model.config)) {
        if (numel(xs) != batch * sample[0])
            throw ShapeError("forward: input " + to_string(xs) + " does not match model input " + to_string(sample));
        VarId h = xs.size() == 2 ? x : reshape(tape, x, Shape{batch, sample[0]});
        const std::size_t layers = m->widths.size() - 1;
        for (std::size_t i = 0; i < layers; ++i) {
            h = detail::linear(tape, h, ps[2 * i], ps[2 * i + 1]);
            if (i + 1 < layers) h = relu(tape, h);
        }
        return h;
    }

    const auto& c = std::get<SmallCnnConfig>(model.config);
    if (xs != Shape{batch, c.channels, c.height, c.width})
        throw ShapeError("forward: input " + to_string(xs) + " does not match model input " + to_string(sample));
    VarId h = x;
    for (std::size_t i = 0; i < c.blocks.size(); ++i) {
        const auto& b = c.blocks[i];
        h = conv2d(tape, h, ps[2 * i].id, b.stride, b.pad);
        h = relu(tape, detail::add_bias(tape, h, ps[2 * i + 1].id, 1));
        if (b.pool > 1) h = maxpool2d(tape, h, b.pool);
    }
    const std::size_t flat = numel(tape.value(h).shape()) / batch;
    h = reshape(tape, h, Shape{batch, flat});
    return detail::linear(tape, h, ps[ps.size() - 2], ps.back());
}

/// Stack per-sample tensors into one batch tensor.
inline Tensor stack(std::span<const Tensor> samples) {
    if (samples.empty()) throw ShapeError("stack: empty batch");
    Shape s{samples.size()};
    for (auto d : samples.front().shape()) s.push_back(d);
    std::vector<double> data;
    data.reserve(numel(s));
    for (const auto& t : samples) {
        if (t.shape() != samples.front().shape())
            throw ShapeError("stack: " + to_string(t.shape()) + " vs " + to_string(samples.front().shape()));
        data.insert(data.end(), t.values().begin(), t.values().end());
    }
    return Tensor(std::move(s), std::move(data));
}

/// Forward pass outside of training; returns (batch, classes) logits.
inline Tensor predict_logits(Model model, std::span<const Tensor> samples) {
    Tape tape;
    model.bind(tape);
    const VarId x = tape.leaf(stack(samples), false);
    return tape.value(forward(model, tape, x));
}

} // namespace danil::nn
