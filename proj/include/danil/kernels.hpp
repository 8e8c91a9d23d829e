#pragma once

// Forward numerical kernels on plain tensors. These know nothing about tapes;
// both the recording and the eager reverse pass call into them, so the two
// paths produce bit-identical numbers.

#include <danil/tensor.hpp>

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace danil::kernels {

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeError(what);
}

inline std::string pair(const char* op, const Shape& a, const Shape& b) {
    return std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b);
}

template <class F>
Tensor unary(const Tensor& a, F f) {
    Tensor out(a.shape());
    auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

// Same shape, or one operand is a rank-0 scalar.
template <class F>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    if (b.rank() == 0) {
        const double s = b[0];
        return unary(a, [&](double x) { return f(x, s); });
    }
    if (a.rank() == 0) {
        const double s = a[0];
        return unary(b, [&](double x) { return f(s, x); });
    }
    throw ShapeError(pair(op, a.shape(), b.shape()));
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary("add", a, b, [](double x, double y) { return x + y; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary("sub", a, b, [](double x, double y) { return x - y; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary("mul", a, b, [](double x, double y) { return x * y; });
}

inline Tensor scale(const Tensor& a, double c) {
    return detail::unary(a, [c](double x) { return x * c; });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

/// Heaviside step used as the relu derivative mask.
inline Tensor step(const Tensor& a) {
    return detail::unary(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::exp(x); });
}

inline Tensor log(const Tensor& a) {
    return detail::unary(a, [](double x) { return std::log(x); });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(a, [](double x) { return x * x; });
}

inline Tensor reciprocal(const Tensor& a) {
    return detail::unary(a, [](double x) { return 1.0 / x; });
}

inline Tensor reciprocal_shift(const Tensor& a, double eps) {
    if (!(eps > 0.0)) throw DomainError("reciprocal_shift: eps must be positive, got " + std::to_string(eps));
    return detail::unary(a, [eps](double x) { return 1.0 / (x + eps); });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                    detail::pair("matmul", a.shape(), b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
        }
    }
    return out;
}

inline Tensor reshape(const Tensor& a, const Shape& shape) { return a.reshaped(shape); }

inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
    const std::size_t r = a.rank();
    std::vector<bool> seen(r, false);
    detail::require(axes.size() == r, "permute: axis list length does not match rank of " + to_string(a.shape()));
    for (auto ax : axes) {
        detail::require(ax < r && !seen[ax], "permute: invalid axis list for " + to_string(a.shape()));
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.dim(axes[i]);
    const auto in_strides = strides_of(a.shape());
    Tensor out(out_shape);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[axes[i]];
        out[flat] = a[src];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::scalar(s);
}

/// Sum along one axis, keeping it with extent 1.
inline Tensor sum_keep(const Tensor& a, std::size_t axis) {
    detail::require(axis < a.rank(), "sum_keep: axis " + std::to_string(axis) + " invalid for " + to_string(a.shape()));
    Shape out_shape = a.shape();
    const std::size_t n = out_shape[axis];
    out_shape[axis] = 1;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t in = 0; in < inner; ++in) out[o * inner + in] += a[(o * n + k) * inner + in];
    return out;
}

/// Repeat extent-1 axes up to `shape`. Ranks must agree.
inline Tensor expand(const Tensor& a, const Shape& shape) {
    detail::require(a.rank() == shape.size(), detail::pair("expand", a.shape(), shape));
    for (std::size_t i = 0; i < shape.size(); ++i)
        detail::require(a.dim(i) == shape[i] || a.dim(i) == 1, detail::pair("expand", a.shape(), shape));
    const auto in_strides = strides_of(a.shape());
    const std::size_t r = shape.size();
    Tensor out(shape);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t i = 0; i < r; ++i)
            if (a.dim(i) != 1) src += idx[i] * in_strides[i];
        out[flat] = a[src];
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

inline Tensor softmax(const Tensor& a, std::size_t axis) {
    detail::require(axis < a.rank(), "softmax: axis " + std::to_string(axis) + " invalid for " + to_string(a.shape()));
    const std::size_t n = a.dim(axis);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    Tensor out(a.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            auto at = [&](std::size_t k) { return (o * n + k) * inner + in; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, a[at(k)]);
            double total = 0.0;
            for (std::size_t k = 0; k < n; ++k) total += (out[at(k)] = std::exp(a[at(k)] - mx));
            for (std::size_t k = 0; k < n; ++k) out[at(k)] /= total;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution. Inputs are (B, C, H, W) or unbatched (C, H, W); kernels are
// (O, C, kh, kw). Zero padding is symmetric.

struct ConvGeometry {
    std::size_t batch = 1, channels = 0, height = 0, width = 0;
    std::size_t kh = 0, kw = 0, stride = 1, pad = 0;
    std::size_t out_h = 0, out_w = 0;
    bool batched = true;
};

inline ConvGeometry conv_geometry(const Shape& input, std::size_t kh, std::size_t kw, std::size_t stride,
                                  std::size_t pad) {
    ConvGeometry g;
    detail::require(input.size() == 3 || input.size() == 4,
                    "conv2d: input must be (C,H,W) or (B,C,H,W), got " + to_string(input));
    detail::require(stride >= 1, "conv2d: stride must be >= 1");
    g.batched = input.size() == 4;
    const std::size_t off = g.batched ? 1 : 0;
    g.batch = g.batched ? input[0] : 1;
    g.channels = input[off];
    g.height = input[off + 1];
    g.width = input[off + 2];
    g.kh = kh;
    g.kw = kw;
    g.stride = stride;
    g.pad = pad;
    detail::require(kh >= 1 && kw >= 1 && g.height + 2 * pad >= kh && g.width + 2 * pad >= kw,
                    "conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                        " does not fit padded input " + to_string(input));
    g.out_h = (g.height + 2 * pad - kh) / stride + 1;
    g.out_w = (g.width + 2 * pad - kw) / stride + 1;
    return g;
}

template <class F>
void for_each_tap(const ConvGeometry& g, F f) {
    // f(batch, out_y, out_x, channel, ky, kx, input_flat_index)
    const std::size_t plane = g.height * g.width;
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t oy = 0; oy < g.out_h; ++oy)
            for (std::size_t ox = 0; ox < g.out_w; ++ox)
                for (std::size_t c = 0; c < g.channels; ++c)
                    for (std::size_t ky = 0; ky < g.kh; ++ky) {
                        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                        if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                        for (std::size_t kx = 0; kx < g.kw; ++kx) {
                            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                            if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
                            f(b, oy, ox, c, ky, kx,
                              (b * g.channels + c) * plane + static_cast<std::size_t>(iy) * g.width +
                                  static_cast<std::size_t>(ix));
                        }
                    }
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
    detail::require(kernel.rank() == 4, "conv2d: kernel must be (O,C,kh,kw), got " + to_string(kernel.shape()));
    const auto g = conv_geometry(input.shape(), kernel.dim(2), kernel.dim(3), stride, pad);
    detail::require(kernel.dim(1) == g.channels, detail::pair("conv2d", input.shape(), kernel.shape()));
    const std::size_t oc = kernel.dim(0);
    Shape out_shape = g.batched ? Shape{g.batch, oc, g.out_h, g.out_w} : Shape{oc, g.out_h, g.out_w};
    Tensor out(out_shape);
    const std::size_t ksz = g.channels * g.kh * g.kw;
    for_each_tap(g, [&](std::size_t b, std::size_t oy, std::size_t ox, std::size_t c, std::size_t ky,
                        std::size_t kx, std::size_t src) {
        const double v = input[src];
        const std::size_t kofs = (c * g.kh + ky) * g.kw + kx;
        for (std::size_t o = 0; o < oc; ++o)
            out[((b * oc + o) * g.out_h + oy) * g.out_w + ox] += v * kernel[o * ksz + kofs];
    });
    return out;
}

/// Unfold patches into rows: (B*OH*OW, C*kh*kw).
inline Tensor im2col(const Tensor& input, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
    const auto g = conv_geometry(input.shape(), kh, kw, stride, pad);
    const std::size_t cols = g.channels * kh * kw;
    Tensor out(Shape{g.batch * g.out_h * g.out_w, cols});
    for_each_tap(g, [&](std::size_t b, std::size_t oy, std::size_t ox, std::size_t c, std::size_t ky,
                        std::size_t kx, std::size_t src) {
        const std::size_t row = (b * g.out_h + oy) * g.out_w + ox;
        out[row * cols + (c * kh + ky) * kw + kx] = input[src];
    });
    return out;
}

/// Adjoint of im2col: scatter-add rows back into an input-shaped tensor.
inline Tensor col2im(const Tensor& cols_t, const Shape& input_shape, std::size_t kh, std::size_t kw,
                     std::size_t stride, std::size_t pad) {
    const auto g = conv_geometry(input_shape, kh, kw, stride, pad);
    const std::size_t cols = g.channels * kh * kw;
    detail::require(cols_t.shape() == Shape{g.batch * g.out_h * g.out_w, cols},
                    detail::pair("col2im", cols_t.shape(), input_shape));
    Tensor out(input_shape);
    for_each_tap(g, [&](std::size_t b, std::size_t oy, std::size_t ox, std::size_t c, std::size_t ky,
                        std::size_t kx, std::size_t dst) {
        const std::size_t row = (b * g.out_h + oy) * g.out_w + ox;
        out[dst] += cols_t[row * cols + (c * kh + ky) * kw + kx];
    });
    return out;
}

using IndexList = std::shared_ptr<const std::vector<std::size_t>>;

struct PoolResult {
    Tensor value;
    IndexList argmax;  // flat input index chosen for each output element
};

/// Non-overlapping max pooling (stride == window). Ties go to the lowest flat index.
inline PoolResult maxpool2d(const Tensor& a, std::size_t window) {
    detail::require(a.rank() == 3 || a.rank() == 4,
                    "maxpool2d: input must be (C,H,W) or (B,C,H,W), got " + to_string(a.shape()));
    detail::require(window >= 1, "maxpool2d: window must be >= 1");
    const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
    detail::require(h >= window && w >= window,
                    "maxpool2d: window " + std::to_string(window) + " larger than input " + to_string(a.shape()));
    const std::size_t oh = h / window, ow = w / window;
    const std::size_t planes = a.size() / (h * w);
    Shape out_shape = a.shape();
    out_shape[a.rank() - 2] = oh;
    out_shape[a.rank() - 1] = ow;
    Tensor out(out_shape);
    auto idx = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = p * h * w + oy * window * w + ox * window;
                for (std::size_t dy = 0; dy < window; ++dy)
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t at = p * h * w + (oy * window + dy) * w + ox * window + dx;
                        if (a[at] > a[best]) best = at;
                    }
                const std::size_t o = (p * oh + oy) * ow + ox;
                out[o] = a[best];
                (*idx)[o] = best;
            }
    return {std::move(out), std::move(idx)};
}

/// out[i] = a.flat[indices[i]]
inline Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices, const Shape& out_shape) {
    detail::require(numel(out_shape) == indices.size(), "gather: index count does not match " + to_string(out_shape));
    Tensor out(out_shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        detail::require(indices[i] < a.size(), "gather: index out of range for " + to_string(a.shape()));
        out[i] = a[indices[i]];
    }
    return out;
}

/// Adjoint of gather: out.flat[indices[i]] += a[i].
inline Tensor scatter(const Tensor& a, const std::vector<std::size_t>& indices, const Shape& out_shape) {
    detail::require(a.size() == indices.size(), "scatter: index count does not match " + to_string(a.shape()));
    Tensor out(out_shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        detail::require(indices[i] < out.size(), "scatter: index out of range for " + to_string(out_shape));
        out[indices[i]] += a[i];
    }
    return out;
}

} // namespace danil::kernels
