#pragma once

#include <danil/autodiff.hpp>

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>

namespace danil {

/// One-hot class label over `classes` categories.
class Label {
public:
    Label() = default;
    Label(std::size_t classes, std::size_t hot) : classes_(classes), hot_(hot) {
        if (hot >= classes)
            throw DomainError("label index " + std::to_string(hot) + " out of range for " + std::to_string(classes) +
                              " classes");
    }

    std::size_t classes() const noexcept { return classes_; }
    std::size_t index() const noexcept { return hot_; }

    Tensor one_hot() const {
        Tensor t(Shape{classes_});
        t[hot_] = 1.0;
        return t;
    }

    friend bool operator==(const Label&, const Label&) = default;

private:
    std::size_t classes_ = 0;
    std::size_t hot_ = 0;
};

/// Index of the largest value; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

/// -log softmax(logits)[label] for a single sample. `logits` holds exactly
/// `label.classes()` values, shaped (n) or (1, n).
///
/// Evaluated as -sum(y * (z - m - log(sum(exp(z - m))))) with m = max(z) held as
/// a constant; the shift cancels analytically, so gradients are exact and
/// exp never overflows.
inline VarId cross_entropy_with_softmax(Tape& tape, VarId logits, const Label& label) {
    const Tensor& z = tape.value(logits);
    if (z.size() != label.classes())
        throw ShapeError("cross_entropy_with_softmax: logits " + to_string(z.shape()) + " vs label with " +
                         std::to_string(label.classes()) + " classes");
    const Shape zs = z.shape();
    const double shift = *std::max_element(z.data().begin(), z.data().end());
    const VarId m = tape.leaf(Tensor::scalar(shift), false);
    const VarId y = tape.leaf(label.one_hot().reshaped(zs), false);
    const VarId shifted = sub(tape, logits, m);
    const VarId lse = log(tape, sum(tape, exp(tape, shifted)));
    const VarId log_probs = sub(tape, shifted, lse);
    return scale(tape, sum(tape, mul(tape, y, log_probs)), -1.0);
}

} // namespace danil
