#pragma once

// Pieces shared by every training step: batches, per-sample loss records and
// the mean-loss / SGD update tail.

#include <danil/losses.hpp>
#include <danil/model.hpp>

#include <vector>

namespace danil {

struct Batch {
    std::vector<Tensor> inputs;  // per-sample tensors, no batch axis
    std::vector<Label> labels;

    std::size_t size() const noexcept { return inputs.size(); }

    void validate() const {
        if (inputs.empty()) throw ContractError("empty batch");
        if (inputs.size() != labels.size())
            throw ShapeError("batch has " + std::to_string(inputs.size()) + " inputs but " +
                             std::to_string(labels.size()) + " labels");
    }
};

struct LossBreakdown {
    double l_c_plus = 0.0;
    double l_d = 0.0;
    double l_total = 0.0;
    std::size_t predicted = 0;
    std::size_t truth = 0;
    bool correct = false;
};

struct StepReport {
    // Means over the batch.
    double l_c_plus = 0.0;
    double l_d = 0.0;
    double l_total = 0.0;
    std::size_t correct = 0;
    std::vector<LossBreakdown> samples;
    std::vector<std::size_t> kept;  // samples that drove the update (all of them except under OHEM)
};

namespace detail {

/// Per-sample forward on its own batch-of-one view; x is the returned leaf.
struct SampleForward {
    VarId x;
    VarId logits;
};

inline SampleForward sample_forward(const nn::Model& model, Tape& tape, const Tensor& input, bool differentiable) {
    SampleForward f;
    f.x = tape.leaf(input, differentiable);
    Shape batched{1};
    for (auto d : input.shape()) batched.push_back(d);
    f.logits = nn::forward(model, tape, reshape(tape, f.x, batched));
    return f;
}

/// (l_1 + ... + l_k) / k, accumulated left to right.
inline VarId mean_loss(Tape& tape, std::span<const VarId> losses) {
    if (losses.empty()) throw ContractError("mean of zero losses");
    VarId acc = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) acc = add(tape, acc, losses[i]);
    return scale(tape, acc, 1.0 / static_cast<double>(losses.size()));
}

/// Second round: plain reverse pass of `loss` into the parameters, then SGD.
inline void apply_update(nn::Model& model, const Tape& tape, VarId loss, double lr) {
    std::vector<VarId> ids;
    ids.reserve(model.params.size());
    for (const auto& p : model.params) ids.push_back(p.id);
    const auto grads = gradients(tape, loss, ids);
    sgd_update(model.params, grads, lr);
}

inline void summarize(StepReport& r) {
    const double n = static_cast<double>(r.samples.size());
    double cp = 0.0, d = 0.0, t = 0.0;
    r.correct = 0;
    for (const auto& s : r.samples) {
        cp += s.l_c_plus;
        d += s.l_d;
        t += s.l_total;
        r.correct += s.correct ? 1 : 0;
    }
    r.l_c_plus = cp / n;
    r.l_d = d / n;
    r.l_total = t / n;
}

} // namespace detail

} // namespace danil
