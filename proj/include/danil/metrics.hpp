#pragma once

#include <danil/errors.hpp>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace danil::metrics {

/// counts[truth][predicted]
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const noexcept { return n_; }
    std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * n_ + predicted); }
    std::size_t& at(std::size_t truth, std::size_t predicted) { return counts_.at(truth * n_ + predicted); }

    std::size_t total() const noexcept {
        std::size_t t = 0;
        for (auto c : counts_) t += c;
        return t;
    }

    std::size_t trace() const noexcept {
        std::size_t t = 0;
        for (std::size_t i = 0; i < n_; ++i) t += counts_[i * n_ + i];
        return t;
    }

    std::vector<std::vector<std::size_t>> rows() const {
        std::vector<std::vector<std::size_t>> r(n_);
        for (std::size_t i = 0; i < n_; ++i) r[i].assign(counts_.begin() + i * n_, counts_.begin() + (i + 1) * n_);
        return r;
    }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t n_;
    std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> preds, std::span<const std::size_t> truths,
                                 std::size_t classes) {
    if (preds.size() != truths.size())
        throw DomainError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(truths.size()) + " truths");
    ConfusionMatrix cm(classes);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] >= classes || truths[i] >= classes)
            throw DomainError("confusion: class ordinal out of range at position " + std::to_string(i));
        ++cm.at(truths[i], preds[i]);
    }
    return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw DomainError("accuracy: empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

/// Unweighted mean of per-class F1. Undefined precision/recall count as F1 = 0.
inline double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw DomainError("macro_f1: empty confusion matrix");
    const std::size_t n = cm.classes();
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t predicted = 0, actual = 0;
        for (std::size_t j = 0; j < n; ++j) {
            predicted += cm.at(j, k);
            actual += cm.at(k, j);
        }
        const auto tp = static_cast<double>(cm.at(k, k));
        if (predicted == 0 || actual == 0 || tp == 0.0) continue;
        const double precision = tp / static_cast<double>(predicted);
        const double recall = tp / static_cast<double>(actual);
        acc += 2.0 * precision * recall / (precision + recall);
    }
    return acc / static_cast<double>(n);
}

} // namespace danil::metrics
