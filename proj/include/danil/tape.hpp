#pragma once

#include <danil/kernels.hpp>

#include <atomic>
#include <compare>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace danil {

enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Permute,
    Reshape,
    Expand,
    Sum,
    SumKeep,
    Relu,
    Step,
    Exp,
    Log,
    Square,
    Reciprocal,
    ReciprocalShift,
    Softmax,
    Conv2d,
    Im2Col,
    Col2Im,
    MaxPool2d,
    Gather,
    Scatter,
};

constexpr std::string_view op_name(Op op) {
    switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::MatMul: return "matmul";
    case Op::Permute: return "permute";
    case Op::Reshape: return "reshape";
    case Op::Expand: return "expand";
    case Op::Sum: return "sum";
    case Op::SumKeep: return "sum_keep";
    case Op::Relu: return "relu";
    case Op::Step: return "step";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Reciprocal: return "reciprocal";
    case Op::ReciprocalShift: return "reciprocal_shift";
    case Op::Softmax: return "softmax";
    case Op::Conv2d: return "conv2d";
    case Op::Im2Col: return "im2col";
    case Op::Col2Im: return "col2im";
    case Op::MaxPool2d: return "maxpool2d";
    case Op::Gather: return "gather";
    case Op::Scatter: return "scatter";
    }
    return "unknown";
}

/// Handle to a node. Only meaningful on the tape that issued it.
struct VarId {
    std::uint64_t tape = 0;
    std::size_t index = 0;

    friend auto operator<=>(const VarId&, const VarId&) = default;
};

/// Non-tensor operands of a primitive (saved at record time).
struct Attrs {
    double constant = 0.0;  // scale factor or eps
    std::size_t axis = 0;
    std::size_t kh = 0, kw = 0, stride = 1, pad = 0, window = 0;
    Shape shape;                       // reshape/expand target, or the shape of a source operand
    std::vector<std::size_t> axes;     // permute
    kernels::IndexList indices;        // maxpool argmax, gather/scatter
};

struct Node {
    Op op = Op::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Attrs attrs;
    bool differentiable = false;
};

/// Append-only record of primitive applications. Inputs always precede the
/// node that consumes them, so the node order is a topological order.
class Tape {
public:
    Tape() : id_(next_id()) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) noexcept = default;
    Tape& operator=(Tape&&) noexcept = default;

    std::uint64_t id() const noexcept { return id_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    const Node& node(VarId v) const {
        check(v);
        return nodes_[v.index];
    }
    const Node& node(std::size_t index) const { return nodes_.at(index); }
    const Tensor& value(VarId v) const { return node(v).value; }

    void check(VarId v) const {
        if (v.tape != id_ || v.index >= nodes_.size())
            throw TapeMismatchError("variable " + std::to_string(v.index) + " of tape " + std::to_string(v.tape) +
                                    " does not belong to tape " + std::to_string(id_));
    }

    VarId leaf(Tensor value, bool differentiable) {
        if (!value.all_finite()) throw NonFiniteError("leaf", "input tensor " + to_string(value.shape()));
        return append(Node{Op::Leaf, {}, std::move(value), {}, differentiable});
    }

    /// Record the result of a primitive whose value has already been computed.
    VarId record(Op op, std::vector<VarId> inputs, Tensor value, Attrs attrs = {}) {
        Node n;
        n.op = op;
        n.inputs.reserve(inputs.size());
        for (auto v : inputs) {
            check(v);
            n.inputs.push_back(v.index);
            n.differentiable = n.differentiable || nodes_[v.index].differentiable;
        }
        if (op == Op::Step) n.differentiable = false;  // zero derivative everywhere it exists
        if (!value.all_finite())
            throw NonFiniteError(std::string(op_name(op)), "output of shape " + to_string(value.shape()));
        n.value = std::move(value);
        n.attrs = std::move(attrs);
        return append(std::move(n));
    }

private:
    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{1};
        return counter.fetch_add(1, std::memory_order_relaxed);
    }

    VarId append(Node n) {
        nodes_.push_back(std::move(n));
        return VarId{id_, nodes_.size() - 1};
    }

    std::uint64_t id_;
    std::vector<Node> nodes_;
};

inline VarId leaf(Tape& tape, Tensor value, bool differentiable) {
    return tape.leaf(std::move(value), differentiable);
}

// Primitive family. Each call appends exactly one node.

inline VarId add(Tape& t, VarId a, VarId b) {
    return t.record(Op::Add, {a, b}, kernels::add(t.value(a), t.value(b)));
}

inline VarId sub(Tape& t, VarId a, VarId b) {
    return t.record(Op::Sub, {a, b}, kernels::sub(t.value(a), t.value(b)));
}

inline VarId mul(Tape& t, VarId a, VarId b) {
    return t.record(Op::Mul, {a, b}, kernels::mul(t.value(a), t.value(b)));
}

inline VarId scale(Tape& t, VarId a, double c) {
    Attrs at;
    at.constant = c;
    return t.record(Op::Scale, {a}, kernels::scale(t.value(a), c), std::move(at));
}

inline VarId matmul(Tape& t, VarId a, VarId b) {
    return t.record(Op::MatMul, {a, b}, kernels::matmul(t.value(a), t.value(b)));
}

inline VarId permute(Tape& t, VarId a, std::vector<std::size_t> axes) {
    Tensor v = kernels::permute(t.value(a), axes);
    Attrs at;
    at.axes = std::move(axes);
    return t.record(Op::Permute, {a}, std::move(v), std::move(at));
}

inline VarId transpose(Tape& t, VarId a) { return permute(t, a, {1, 0}); }

inline VarId reshape(Tape& t, VarId a, Shape shape) {
    Tensor v = kernels::reshape(t.value(a), shape);
    Attrs at;
    at.shape = t.value(a).shape();
    return t.record(Op::Reshape, {a}, std::move(v), std::move(at));
}

inline VarId expand(Tape& t, VarId a, const Shape& shape) {
    Tensor v = kernels::expand(t.value(a), shape);
    Attrs at;
    at.shape = t.value(a).shape();
    return t.record(Op::Expand, {a}, std::move(v), std::move(at));
}

inline VarId sum(Tape& t, VarId a) { return t.record(Op::Sum, {a}, kernels::sum(t.value(a))); }

inline VarId sum_keep(Tape& t, VarId a, std::size_t axis) {
    Attrs at;
    at.axis = axis;
    return t.record(Op::SumKeep, {a}, kernels::sum_keep(t.value(a), axis), std::move(at));
}

inline VarId relu(Tape& t, VarId a) { return t.record(Op::Relu, {a}, kernels::relu(t.value(a))); }
inline VarId step(Tape& t, VarId a) { return t.record(Op::Step, {a}, kernels::step(t.value(a))); }
inline VarId exp(Tape& t, VarId a) { return t.record(Op::Exp, {a}, kernels::exp(t.value(a))); }
inline VarId log(Tape& t, VarId a) { return t.record(Op::Log, {a}, kernels::log(t.value(a))); }
inline VarId square(Tape& t, VarId a) { return t.record(Op::Square, {a}, kernels::square(t.value(a))); }

inline VarId reciprocal(Tape& t, VarId a) {
    return t.record(Op::Reciprocal, {a}, kernels::reciprocal(t.value(a)));
}

/// 1 / (a + eps), eps > 0.
inline VarId reciprocal_shift(Tape& t, VarId a, double eps) {
    Attrs at;
    at.constant = eps;
    return t.record(Op::ReciprocalShift, {a}, kernels::reciprocal_shift(t.value(a), eps), std::move(at));
}

inline VarId softmax(Tape& t, VarId a, std::size_t axis) {
    Attrs at;
    at.axis = axis;
    return t.record(Op::Softmax, {a}, kernels::softmax(t.value(a), axis), std::move(at));
}

inline VarId conv2d(Tape& t, VarId input, VarId kernel, std::size_t stride, std::size_t pad) {
    Tensor v = kernels::conv2d(t.value(input), t.value(kernel), stride, pad);
    Attrs at;
    at.kh = t.value(kernel).dim(2);
    at.kw = t.value(kernel).dim(3);
    at.stride = stride;
    at.pad = pad;
    return t.record(Op::Conv2d, {input, kernel}, std::move(v), std::move(at));
}

inline VarId im2col(Tape& t, VarId input, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad) {
    Tensor v = kernels::im2col(t.value(input), kh, kw, stride, pad);
    Attrs at;
    at.kh = kh;
    at.kw = kw;
    at.stride = stride;
    at.pad = pad;
    at.shape = t.value(input).shape();
    return t.record(Op::Im2Col, {input}, std::move(v), std::move(at));
}

inline VarId col2im(Tape& t, VarId cols, const Shape& input_shape, std::size_t kh, std::size_t kw,
                    std::size_t stride, std::size_t pad) {
    Tensor v = kernels::col2im(t.value(cols), input_shape, kh, kw, stride, pad);
    Attrs at;
    at.kh = kh;
    at.kw = kw;
    at.stride = stride;
    at.pad = pad;
    at.shape = input_shape;
    return t.record(Op::Col2Im, {cols}, std::move(v), std::move(at));
}

inline VarId maxpool2d(Tape& t, VarId a, std::size_t window) {
    auto pooled = kernels::maxpool2d(t.value(a), window);
    Attrs at;
    at.window = window;
    at.indices = std::move(pooled.argmax);
    at.shape = t.value(a).shape();
    return t.record(Op::MaxPool2d, {a}, std::move(pooled.value), std::move(at));
}

inline VarId gather(Tape& t, VarId a, kernels::IndexList indices, const Shape& out_shape) {
    Tensor v = kernels::gather(t.value(a), *indices, out_shape);
    Attrs at;
    at.indices = std::move(indices);
    at.shape = t.value(a).shape();
    return t.record(Op::Gather, {a}, std::move(v), std::move(at));
}

inline VarId scatter(Tape& t, VarId a, kernels::IndexList indices, const Shape& out_shape) {
    Tensor v = kernels::scatter(t.value(a), *indices, out_shape);
    Attrs at;
    at.indices = std::move(indices);
    at.shape = t.value(a).shape();
    return t.record(Op::Scatter, {a}, std::move(v), std::move(at));
}

} // namespace danil
