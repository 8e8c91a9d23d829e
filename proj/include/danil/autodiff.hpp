#pragma once

// Reverse-mode differentiation over a Tape.
//
// Every reverse rule is written once, generically over an "emitter" that
// supplies the primitive family. With TapeEmitter the reverse pass appends
// ordinary nodes to the tape, so the resulting gradients can themselves be
// differentiated. With EagerEmitter the same rules run directly on tensors and
// leave the tape untouched. Both emitters call the same kernels, so a recorded
// and an unrecorded pass yield bit-identical gradients.

#include <danil/tape.hpp>

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace danil {

struct TapeEmitter {
    using Handle = VarId;

    Tape& tape;

    Handle input(std::size_t index) const { return VarId{tape.id(), index}; }
    const Tensor& value(Handle h) const { return tape.value(h); }
    Handle constant(Tensor t) { return tape.leaf(std::move(t), false); }

    Handle add(Handle a, Handle b) { return danil::add(tape, a, b); }
    Handle sub(Handle a, Handle b) { return danil::sub(tape, a, b); }
    Handle mul(Handle a, Handle b) { return danil::mul(tape, a, b); }
    Handle scale(Handle a, double c) { return danil::scale(tape, a, c); }
    Handle matmul(Handle a, Handle b) { return danil::matmul(tape, a, b); }
    Handle permute(Handle a, std::vector<std::size_t> axes) { return danil::permute(tape, a, std::move(axes)); }
    Handle reshape(Handle a, Shape s) { return danil::reshape(tape, a, std::move(s)); }
    Handle expand(Handle a, const Shape& s) { return danil::expand(tape, a, s); }
    Handle sum(Handle a) { return danil::sum(tape, a); }
    Handle sum_keep(Handle a, std::size_t axis) { return danil::sum_keep(tape, a, axis); }
    Handle step(Handle a) { return danil::step(tape, a); }
    Handle square(Handle a) { return danil::square(tape, a); }
    Handle reciprocal(Handle a) { return danil::reciprocal(tape, a); }
    Handle im2col(Handle a, const Attrs& at) { return danil::im2col(tape, a, at.kh, at.kw, at.stride, at.pad); }
    Handle col2im(Handle a, const Shape& s, const Attrs& at) {
        return danil::col2im(tape, a, s, at.kh, at.kw, at.stride, at.pad);
    }
    Handle gather(Handle a, kernels::IndexList idx, const Shape& s) { return danil::gather(tape, a, std::move(idx), s); }
    Handle scatter(Handle a, kernels::IndexList idx, const Shape& s) {
        return danil::scatter(tape, a, std::move(idx), s);
    }
};

struct EagerEmitter {
    using Handle = std::shared_ptr<const Tensor>;

    const Tape& tape;

    // Non-owning alias of a tape value; the tape is not mutated during an eager pass.
    Handle input(std::size_t index) const { return Handle(Handle{}, &tape.node(index).value); }
    const Tensor& value(const Handle& h) const { return *h; }
    Handle constant(Tensor t) { return std::make_shared<const Tensor>(std::move(t)); }

    Handle add(const Handle& a, const Handle& b) { return wrap(Op::Add, kernels::add(*a, *b)); }
    Handle sub(const Handle& a, const Handle& b) { return wrap(Op::Sub, kernels::sub(*a, *b)); }
    Handle mul(const Handle& a, const Handle& b) { return wrap(Op::Mul, kernels::mul(*a, *b)); }
    Handle scale(const Handle& a, double c) { return wrap(Op::Scale, kernels::scale(*a, c)); }
    Handle matmul(const Handle& a, const Handle& b) { return wrap(Op::MatMul, kernels::matmul(*a, *b)); }
    Handle permute(const Handle& a, const std::vector<std::size_t>& axes) {
        return wrap(Op::Permute, kernels::permute(*a, axes));
    }
    Handle reshape(const Handle& a, const Shape& s) { return wrap(Op::Reshape, kernels::reshape(*a, s)); }
    Handle expand(const Handle& a, const Shape& s) { return wrap(Op::Expand, kernels::expand(*a, s)); }
    Handle sum(const Handle& a) { return wrap(Op::Sum, kernels::sum(*a)); }
    Handle sum_keep(const Handle& a, std::size_t axis) { return wrap(Op::SumKeep, kernels::sum_keep(*a, axis)); }
    Handle step(const Handle& a) { return wrap(Op::Step, kernels::step(*a)); }
    Handle square(const Handle& a) { return wrap(Op::Square, kernels::square(*a)); }
    Handle reciprocal(const Handle& a) { return wrap(Op::Reciprocal, kernels::reciprocal(*a)); }
    Handle im2col(const Handle& a, const Attrs& at) {
        return wrap(Op::Im2Col, kernels::im2col(*a, at.kh, at.kw, at.stride, at.pad));
    }
    Handle col2im(const Handle& a, const Shape& s, const Attrs& at) {
        return wrap(Op::Col2Im, kernels::col2im(*a, s, at.kh, at.kw, at.stride, at.pad));
    }
    Handle gather(const Handle& a, const kernels::IndexList& idx, const Shape& s) {
        return wrap(Op::Gather, kernels::gather(*a, *idx, s));
    }
    Handle scatter(const Handle& a, const kernels::IndexList& idx, const Shape& s) {
        return wrap(Op::Scatter, kernels::scatter(*a, *idx, s));
    }

private:
    static Handle wrap(Op op, Tensor t) {
        if (!t.all_finite())
            throw NonFiniteError(std::string(op_name(op)), "reverse pass output of shape " + to_string(t.shape()));
        return std::make_shared<const Tensor>(std::move(t));
    }
};

namespace detail {

template <class E, class H = typename E::Handle>
H reduce_like(E& e, const H& g, const Shape& target) {
    if (e.value(g).shape() == target) return g;
    return e.sum(g);  // target was a broadcast scalar
}

inline std::vector<std::size_t> inverse_axes(const std::vector<std::size_t>& axes) {
    std::vector<std::size_t> inv(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
    return inv;
}

/// Vector-Jacobian product of one node, expressed with primitives only.
/// `emit(k, contribution)` is called for each input k with need[k] set.
template <class E, class Emit, class H = typename E::Handle>
void reverse_rule(E& e, Op op, const std::vector<std::size_t>& inputs, const Attrs& at, const H& out, const H& g,
                  const std::array<bool, 2>& need, Emit&& emit) {
    auto in = [&](std::size_t k) { return e.input(inputs[k]); };
    auto in_shape = [&](std::size_t k) { return e.value(in(k)).shape(); };

    switch (op) {
    case Op::Leaf:
    case Op::Step:
        return;
    case Op::Add:
        if (need[0]) emit(0, reduce_like(e, g, in_shape(0)));
        if (need[1]) emit(1, reduce_like(e, g, in_shape(1)));
        return;
    case Op::Sub:
        if (need[0]) emit(0, reduce_like(e, g, in_shape(0)));
        if (need[1]) emit(1, reduce_like(e, e.scale(g, -1.0), in_shape(1)));
        return;
    case Op::Mul:
        if (need[0]) emit(0, reduce_like(e, e.mul(g, in(1)), in_shape(0)));
        if (need[1]) emit(1, reduce_like(e, e.mul(g, in(0)), in_shape(1)));
        return;
    case Op::Scale:
        emit(0, e.scale(g, at.constant));
        return;
    case Op::MatMul:
        if (need[0]) emit(0, e.matmul(g, e.permute(in(1), {1, 0})));
        if (need[1]) emit(1, e.matmul(e.permute(in(0), {1, 0}), g));
        return;
    case Op::Permute:
        emit(0, e.permute(g, inverse_axes(at.axes)));
        return;
    case Op::Reshape:
        emit(0, e.reshape(g, at.shape));
        return;
    case Op::Expand: {
        H acc = g;
        const Shape out_shape = e.value(g).shape();
        for (std::size_t ax = 0; ax < at.shape.size(); ++ax)
            if (at.shape[ax] == 1 && out_shape[ax] != 1) acc = e.sum_keep(acc, ax);
        emit(0, acc);
        return;
    }
    case Op::Sum: {
        const Shape src = in_shape(0);
        if (src.empty()) {
            emit(0, g);
            return;
        }
        emit(0, e.expand(e.reshape(g, Shape(src.size(), 1)), src));
        return;
    }
    case Op::SumKeep:
        emit(0, e.expand(g, in_shape(0)));
        return;
    case Op::Relu:
        emit(0, e.mul(g, e.step(in(0))));
        return;
    case Op::Exp:
        emit(0, e.mul(g, out));
        return;
    case Op::Log:
        emit(0, e.mul(g, e.reciprocal(in(0))));
        return;
    case Op::Square:
        emit(0, e.scale(e.mul(g, in(0)), 2.0));
        return;
    case Op::Reciprocal:
    case Op::ReciprocalShift:
        emit(0, e.scale(e.mul(g, e.square(out)), -1.0));
        return;
    case Op::Softmax: {
        const Shape shape = e.value(out).shape();
        const H gs = e.mul(g, out);
        const H total = e.expand(e.sum_keep(gs, at.axis), shape);
        emit(0, e.sub(gs, e.mul(out, total)));
        return;
    }
    case Op::Conv2d: {
        const Shape xs = in_shape(0);
        const Shape ks = in_shape(1);
        const auto geo = kernels::conv_geometry(xs, at.kh, at.kw, at.stride, at.pad);
        const std::size_t oc = ks[0];
        const std::size_t rows = geo.batch * geo.out_h * geo.out_w;
        H g4 = g;
        if (!geo.batched) g4 = e.reshape(g, Shape{1, oc, geo.out_h, geo.out_w});
        const H gm = e.reshape(e.permute(g4, {0, 2, 3, 1}), Shape{rows, oc});
        if (need[0]) {
            const H km = e.reshape(in(1), Shape{oc, geo.channels * at.kh * at.kw});
            emit(0, e.col2im(e.matmul(gm, km), xs, at));
        }
        if (need[1]) emit(1, e.reshape(e.matmul(e.permute(gm, {1, 0}), e.im2col(in(0), at)), ks));
        return;
    }
    case Op::Im2Col:
        emit(0, e.col2im(g, at.shape, at));
        return;
    case Op::Col2Im:
        emit(0, e.im2col(g, at));
        return;
    case Op::MaxPool2d:
    case Op::Gather:
        emit(0, e.scatter(g, at.indices, at.shape));
        return;
    case Op::Scatter:
        emit(0, e.gather(g, at.indices, at.shape));
        return;
    }
}

template <class E, class H = typename E::Handle>
std::vector<H> reverse_pass(const Tape& tape, E& e, VarId output, std::span<const VarId> wrt) {
    tape.check(output);
    const Tensor& out_value = tape.value(output);
    if (out_value.size() != 1)
        throw ContractError("backward: output must be scalar, got shape " + to_string(out_value.shape()));

    const std::size_t last = output.index;
    std::vector<char> reach(last + 1, 0);
    for (VarId w : wrt) {
        tape.check(w);
        const Node& n = tape.node(w);
        if (n.op != Op::Leaf || !n.differentiable)
            throw ContractError("backward: variable " + std::to_string(w.index) +
                                " is not a differentiable leaf");
        if (w.index <= last) reach[w.index] = 1;
    }
    for (std::size_t i = 0; i <= last; ++i) {
        const Node& n = tape.node(i);
        if (n.op == Op::Leaf || !n.differentiable) continue;
        for (auto j : n.inputs) reach[i] = reach[i] || reach[j];
    }

    std::vector<std::optional<H>> grads(last + 1);
    if (reach[last]) grads[last] = e.constant(Tensor::ones(out_value.shape()));

    for (std::size_t i = last + 1; i-- > 0;) {
        if (!grads[i] || !reach[i]) continue;
        // Copy what we need: recording may grow the tape and move its nodes.
        const Node& n = tape.node(i);
        if (n.op == Op::Leaf) continue;
        const Op op = n.op;
        const std::vector<std::size_t> inputs = n.inputs;
        const Attrs attrs = n.attrs;
        const std::array<bool, 2> need{inputs.size() > 0 && reach[inputs[0]] != 0,
                                       inputs.size() > 1 && reach[inputs[1]] != 0};
        const H g = *grads[i];
        grads[i].reset();
        reverse_rule(e, op, inputs, attrs, e.input(i), g, need, [&](std::size_t k, H contribution) {
            auto& slot = grads[inputs[k]];
            slot = slot ? e.add(*slot, contribution) : std::move(contribution);
        });
    }

    std::vector<H> result;
    result.reserve(wrt.size());
    for (VarId w : wrt) {
        if (w.index <= last && grads[w.index])
            result.push_back(*grads[w.index]);
        else
            result.push_back(e.constant(Tensor::zeros(tape.value(w).shape())));
    }
    return result;
}

} // namespace detail

/// Gradients of a scalar `output` with respect to differentiable leaves, computed off-tape.
inline std::vector<Tensor> gradients(const Tape& tape, VarId output, std::span<const VarId> wrt) {
    EagerEmitter e{tape};
    auto handles = detail::reverse_pass(tape, e, output, wrt);
    std::vector<Tensor> out;
    out.reserve(handles.size());
    for (auto& h : handles) out.push_back(*h);
    return out;
}

/// Reverse pass returning gradient nodes aligned with `wrt`. With `record`
/// set, the reverse arithmetic is appended to the tape and the results are
/// differentiable; otherwise the results are stored as constant leaves.
inline std::vector<VarId> backward(Tape& tape, VarId output, std::span<const VarId> wrt, bool record) {
    if (record) {
        TapeEmitter e{tape};
        return detail::reverse_pass(tape, e, output, wrt);
    }
    auto grads = gradients(tape, output, wrt);
    std::vector<VarId> ids;
    ids.reserve(grads.size());
    for (auto& g : grads) ids.push_back(tape.leaf(std::move(g), false));
    return ids;
}

inline std::vector<VarId> backward(Tape& tape, VarId output, const std::vector<VarId>& wrt, bool record) {
    return backward(tape, output, std::span<const VarId>(wrt), record);
}

/// Trainable tensor plus its gradient slot. `id` is refreshed each time the
/// parameter is bound to a new tape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    VarId id{};

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    VarId bind(Tape& tape) {
        id = tape.leaf(value, true);
        return id;
    }
};

/// value <- value - lr * grad for each pair; the gradient is kept in the slot.
inline void sgd_update(std::span<Parameter> params, std::span<const Tensor> grads, double lr) {
    if (params.size() != grads.size())
        throw ShapeError("sgd_update: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].value.shape() != grads[i].shape())
            throw ShapeError("sgd_update: parameter " + params[i].name + " has shape " +
                             to_string(params[i].value.shape()) + " but gradient has shape " +
                             to_string(grads[i].shape()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor next = params[i].value;
        for (std::size_t j = 0; j < next.size(); ++j) next[j] -= lr * grads[i][j];
        if (!next.all_finite()) throw NonFiniteError("sgd_update", "parameter " + params[i].name);
        params[i].value = std::move(next);
        params[i].grad = grads[i];
    }
}

} // namespace danil
