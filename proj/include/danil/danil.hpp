#pragma once

// Distractor-aware training step.
//
// Per sample: the loss against the true label gives the positive response map
// A+ = dL+/dx. A misclassified sample also gets a pseudo label at the
// predicted class, whose loss gives the distractor map A- = dL-/dx. The
// distraction loss 1 / (|A+ - A-|^2 + eps) is added to the true-label loss
// with weight lambda. Both maps are recorded on the tape, so the parameter
// gradient of the total loss includes the second-order path through them.

#include <danil/step.hpp>

#include <optional>

namespace danil {

enum class MapKind { Positive, Negative };

/// Gradient of a scalar loss with respect to an input tensor.
struct ResponseMap {
    Tensor tensor;
    MapKind kind = MapKind::Positive;
    VarId id{};  // live gradient node when computed with record set
};

struct DanilHyperParams {
    double lambda = 1e-5;
    double eps = 1e-4;

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
        if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
    }
};

/// Pseudo label at the predicted class, or nothing when the prediction is correct.
inline std::optional<Label> make_pseudo_label(const Tensor& logits, const Label& truth) {
    if (logits.size() < 2) throw DomainError("make_pseudo_label: need at least 2 classes");
    if (logits.size() != truth.classes())
        throw ShapeError("make_pseudo_label: logits " + to_string(logits.shape()) + " vs label with " +
                         std::to_string(truth.classes()) + " classes");
    const std::size_t pred = argmax(logits.data());
    if (pred == truth.index()) return std::nullopt;
    return Label(truth.classes(), pred);
}

inline ResponseMap response_map(Tape& tape, VarId loss, VarId x, MapKind kind, bool record) {
    const VarId g = backward(tape, loss, std::vector<VarId>{x}, record).front();
    return {tape.value(g), kind, g};
}

/// Response map of the softmax cross-entropy at `label` for one input. The
/// model's parameters must already be bound to `tape`; they are not modified.
inline ResponseMap intrinsic_response_map(const nn::Model& model, const Tensor& x, const Label& label, Tape& tape,
                                          bool record, MapKind kind = MapKind::Positive) {
    const auto f = detail::sample_forward(model, tape, x, true);
    const VarId loss = cross_entropy_with_softmax(tape, f.logits, label);
    return response_map(tape, loss, f.x, kind, record);
}

inline VarId distraction_loss(Tape& tape, VarId a_plus, VarId a_minus, double eps) {
    const Shape& sp = tape.value(a_plus).shape();
    const Shape& sm = tape.value(a_minus).shape();
    if (sp != sm) throw ShapeError("distraction_loss: " + to_string(sp) + " vs " + to_string(sm));
    if (!(eps > 0.0)) throw DomainError("distraction_loss: eps must be positive");
    const VarId dist = sum(tape, square(tape, sub(tape, a_plus, a_minus)));
    return reciprocal_shift(tape, dist, eps);
}

/// l_c_plus + lambda * l_d; collapses to l_c_plus itself when there is no
/// distraction term or lambda is zero.
inline VarId total_loss(Tape& tape, VarId l_c_plus, std::optional<VarId> l_d, double lambda) {
    if (tape.value(l_c_plus).size() != 1) throw ShapeError("total_loss: l_c_plus must be scalar");
    if (!l_d || lambda == 0.0) return l_c_plus;
    if (tape.value(*l_d).size() != 1) throw ShapeError("total_loss: l_d must be scalar");
    return add(tape, l_c_plus, scale(tape, *l_d, lambda));
}

namespace detail {

struct DanilSample {
    VarId l_total;
    LossBreakdown record;
};

inline DanilSample danil_sample(const nn::Model& model, Tape& tape, const Tensor& input, const Label& truth,
                                const DanilHyperParams& hp) {
    const auto f = sample_forward(model, tape, input, true);
    const VarId l_plus = cross_entropy_with_softmax(tape, f.logits, truth);
    const Tensor& logits = tape.value(f.logits);

    LossBreakdown rec;
    rec.truth = truth.index();
    rec.predicted = argmax(logits.data());
    rec.correct = rec.predicted == rec.truth;

    std::optional<VarId> l_d;
    if (auto pseudo = make_pseudo_label(tape.value(f.logits), truth)) {
        const VarId l_minus = cross_entropy_with_softmax(tape, f.logits, *pseudo);
        const auto a_plus = response_map(tape, l_plus, f.x, MapKind::Positive, true);
        const auto a_minus = response_map(tape, l_minus, f.x, MapKind::Negative, true);
        l_d = distraction_loss(tape, a_plus.id, a_minus.id, hp.eps);
    }
    const VarId total = total_loss(tape, l_plus, l_d, hp.lambda);

    rec.l_c_plus = tape.value(l_plus).item();
    rec.l_d = l_d ? tape.value(*l_d).item() : 0.0;
    rec.l_total = tape.value(total).item();
    return {total, rec};
}

} // namespace detail

/// One distractor-aware SGD step over a mini-batch. The batch loss is the mean
/// of per-sample total losses; misclassification is judged per sample on the
/// logits before the update.
inline StepReport danil_step(nn::Model& model, const Batch& batch, const DanilHyperParams& hp, double lr) {
    batch.validate();
    hp.validate();
    Tape tape;
    model.bind(tape);
    StepReport report;
    std::vector<VarId> totals;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        try {
            auto s = detail::danil_sample(model, tape, batch.inputs[i], batch.labels[i], hp);
            totals.push_back(s.l_total);
            report.samples.push_back(s.record);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError(e.op(), e.detail(), i);
        }
        report.kept.push_back(i);
    }
    detail::apply_update(model, tape, detail::mean_loss(tape, totals), lr);
    detail::summarize(report);
    return report;
}

} // namespace danil
