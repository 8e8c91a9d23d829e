#pragma once

// Comparison steps: plain softmax cross-entropy, and batch-level online hard
// example mining that updates on the highest-loss fraction of the batch.

#include <danil/step.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace danil {

struct OhemConfig {
    double keep_fraction = 0.5;

    void validate() const {
        if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must be in (0, 1]");
    }
};

namespace detail {

struct CeForward {
    std::vector<VarId> losses;
    StepReport report;
};

inline CeForward ce_forward(const nn::Model& model, Tape& tape, const Batch& batch) {
    CeForward out;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        try {
            const auto f = sample_forward(model, tape, batch.inputs[i], false);
            const VarId loss = cross_entropy_with_softmax(tape, f.logits, batch.labels[i]);
            LossBreakdown rec;
            rec.truth = batch.labels[i].index();
            rec.predicted = argmax(tape.value(f.logits).data());
            rec.correct = rec.predicted == rec.truth;
            rec.l_c_plus = rec.l_total = tape.value(loss).item();
            out.losses.push_back(loss);
            out.report.samples.push_back(rec);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError(e.op(), e.detail(), i);
        }
    }
    return out;
}

} // namespace detail

inline StepReport ce_step(nn::Model& model, const Batch& batch, double lr) {
    batch.validate();
    Tape tape;
    model.bind(tape);
    auto fw = detail::ce_forward(model, tape, batch);
    detail::apply_update(model, tape, detail::mean_loss(tape, fw.losses), lr);
    fw.report.kept.resize(batch.size());
    std::iota(fw.report.kept.begin(), fw.report.kept.end(), std::size_t{0});
    detail::summarize(fw.report);
    return std::move(fw.report);
}

/// Indices of the ceil(keep_fraction * n) largest losses, returned in
/// ascending index order. Equal losses prefer the lower index.
inline std::vector<std::size_t> select_hard_examples(std::span<const double> losses, double keep_fraction) {
    OhemConfig{keep_fraction}.validate();
    const std::size_t n = losses.size();
    const auto keep = std::min<std::size_t>(
        n, static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n) - 1e-9)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
    order.resize(std::max<std::size_t>(keep, n ? 1 : 0));
    std::sort(order.begin(), order.end());
    return order;
}

inline StepReport ohem_step(nn::Model& model, const Batch& batch, const OhemConfig& cfg, double lr) {
    batch.validate();
    cfg.validate();
    Tape tape;
    model.bind(tape);
    auto fw = detail::ce_forward(model, tape, batch);
    std::vector<double> values;
    for (const auto& s : fw.report.samples) values.push_back(s.l_c_plus);
    const auto kept = select_hard_examples(values, cfg.keep_fraction);
    std::vector<VarId> kept_losses;
    for (auto i : kept) kept_losses.push_back(fw.losses[i]);
    detail::apply_update(model, tape, detail::mean_loss(tape, kept_losses), lr);
    fw.report.kept = kept;
    detail::summarize(fw.report);
    return std::move(fw.report);
}

} // namespace danil
