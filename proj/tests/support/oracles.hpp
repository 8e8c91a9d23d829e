#pragma once

// Independent reference computations used by the tests. Finite differences
// only ever evaluate forward values; the convolution and loss oracles are
// written as straight loops.

#include <danil/danil.hpp>
#include <danil/rng.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace danil::oracle {

inline Tensor random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Central differences of a scalar function of one tensor.
inline Tensor central_difference(const std::function<double(const Tensor&)>& f, Tensor x, double step = 1e-5) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double up = f(x);
        x[i] = keep - step;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

inline double l2(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

/// |a - b| / max(|a|, |b|) in the l2 norm; 0 when both vanish.
inline double relative_error(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
    const double denom = std::max(l2(a), l2(b));
    if (denom == 0.0) return 0.0;
    return std::sqrt(diff) / denom;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Direct convolution: input (C,H,W), kernel (O,C,kh,kw) -> (O,OH,OW).
inline Tensor naive_conv2d(const Tensor& in, const Tensor& k, std::size_t stride, std::size_t pad) {
    const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2);
    const std::size_t O = k.dim(0), KH = k.dim(2), KW = k.dim(3);
    const std::size_t OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
    Tensor out(Shape{O, OH, OW});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t y = 0; y < OH; ++y)
            for (std::size_t x = 0; x < OW; ++x) {
                double acc = 0.0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t i = 0; i < KH; ++i)
                        for (std::size_t j = 0; j < KW; ++j) {
                            const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                            const long ix = static_cast<long>(x * stride + j) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                                continue;
                            acc += in[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] *
                                   k[((o * C + c) * KH + i) * KW + j];
                        }
                out[(o * OH + y) * OW + x] = acc;
            }
    return out;
}

/// -log(exp(z_k) / sum_j exp(z_j)), evaluated directly.
inline double direct_cross_entropy(std::span<const double> z, std::size_t k) {
    double total = 0.0;
    for (double v : z) total += std::exp(v);
    return -std::log(std::exp(z[k]) / total);
}

/// Scalar loss of one sample under `model` with parameters replaced by `values`.
inline double sample_loss(nn::Model model, const std::vector<Tensor>& values, const Tensor& x, const Label& y) {
    for (std::size_t i = 0; i < values.size(); ++i) model.params[i].value = values[i];
    Tape tape;
    model.bind(tape);
    Shape bs{1};
    for (auto d : x.shape()) bs.push_back(d);
    const VarId xi = tape.leaf(x.reshaped(bs), false);
    return tape.value(cross_entropy_with_softmax(tape, nn::forward(model, tape, xi), y)).item();
}

/// The full distractor-aware scalar for one sample: L+ + lambda * 1/(|A+ - A-|^2 + eps),
/// with both maps recomputed from scratch (first-order only) at the given parameters.
inline double danil_objective(nn::Model model, const std::vector<Tensor>& values, const Tensor& x, const Label& y,
                              const Label& pseudo, double lambda, double eps, bool distraction_only = false) {
    for (std::size_t i = 0; i < values.size(); ++i) model.params[i].value = values[i];
    Tape tape;
    model.bind(tape);
    const auto a_plus = intrinsic_response_map(model, x, y, tape, false).tensor;
    const auto a_minus = intrinsic_response_map(model, x, pseudo, tape, false).tensor;
    double dist = 0.0;
    for (std::size_t i = 0; i < a_plus.size(); ++i) dist += (a_plus[i] - a_minus[i]) * (a_plus[i] - a_minus[i]);
    const double l_d = 1.0 / (dist + eps);
    if (distraction_only) return l_d;
    return sample_loss(model, values, x, y) + lambda * l_d;
}

/// Smallest distance of any recorded relu input from zero, and of any maxpool
/// winner from its window's runner-up. Finite differences are only trusted
/// when probes cannot cross such a switch point.
inline double kink_margin(const Tape& tape) {
    double margin = INFINITY;
    for (std::size_t i = 0; i < tape.size(); ++i) {
        const Node& n = tape.node(i);
        if (n.op == Op::Relu) {
            for (double v : tape.node(n.inputs[0]).value.data()) margin = std::min(margin, std::abs(v));
        } else if (n.op == Op::MaxPool2d) {
            const Tensor& in = tape.node(n.inputs[0]).value;
            const std::size_t r = in.rank(), H = in.dim(r - 2), W = in.dim(r - 1), w = n.attrs.window;
            const std::size_t planes = in.size() / (H * W);
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t y = 0; y + w <= H; y += w)
                    for (std::size_t x = 0; x + w <= W; x += w) {
                        double best = -INFINITY, second = -INFINITY;
                        for (std::size_t i2 = 0; i2 < w; ++i2)
                            for (std::size_t j = 0; j < w; ++j) {
                                const double v = in[(p * H + y + i2) * W + x + j];
                                if (v > best) {
                                    second = best;
                                    best = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                        if (w > 1) margin = std::min(margin, best - second);
                    }
        }
    }
    return margin;
}

/// Gap between the largest and second-largest logit.
inline double logit_margin(std::span<const double> z) {
    double best = -INFINITY, second = -INFINITY;
    for (double v : z) {
        if (v > best) {
            second = best;
            best = v;
        } else if (v > second) {
            second = v;
        }
    }
    return best - second;
}

/// Concatenation of several tensors into one flat vector.
inline Tensor flatten_all(const std::vector<Tensor>& parts) {
    std::vector<double> out;
    for (const auto& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
    const std::size_t n = out.size();
    return Tensor(Shape{n}, std::move(out));
}

} // namespace danil::oracle
