// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <danil/harness/run.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "support/oracles.hpp"

using namespace danil;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes.
constexpr double kFdStep = 1e-5;
constexpr double kFirstOrderTol = 1e-6;
constexpr double kSecondOrderTol = 1e-4;
constexpr double kPointTol = 1e-12;
constexpr double kMetricsTol = 1e-12;
constexpr std::size_t kFirstOrderGraphs = 120;
constexpr std::size_t kSecondOrderInstances = 24;
constexpr std::size_t kEquivalenceBatches = 12;
constexpr std::size_t kMetricVectors = 1000;
constexpr double kFirstOrderBudget = 60.0;
constexpr double kSecondOrderBudget = 120.0;
constexpr double kExperimentBudget = 600.0;
constexpr double kKinkMargin = 1e-3;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

/// Random model with random biases; resampled until its config is valid.
nn::Model random_model(SplitMix64& rng, bool cnn) {
    for (;;) {
        nn::ModelConfig cfg;
        if (!cnn) {
            nn::MlpConfig m;
            m.widths.push_back(2 + rng.below(5));
            for (std::size_t i = 0, depth = rng.below(3); i < depth; ++i) m.widths.push_back(2 + rng.below(5));
            m.widths.push_back(2 + rng.below(4));
            cfg = m;
        } else {
            nn::SmallCnnConfig c;
            c.channels = 1 + rng.below(2);
            c.height = 4 + rng.below(4);
            c.width = 4 + rng.below(4);
            for (std::size_t i = 0, blocks = 1 + rng.below(2); i < blocks; ++i)
                c.blocks.push_back(nn::ConvBlock{1 + rng.below(3), 2 + rng.below(2), 1 + rng.below(2), rng.below(2),
                                                 1 + rng.below(2)});
            c.classes = 2 + rng.below(3);
            cfg = c;
        }
        try {
            nn::validate(cfg);
        } catch (const ConfigError&) {
            continue;
        }
        auto m = nn::init_model(cfg, rng.next());
        const auto specs = nn::parameter_specs(cfg);
        for (std::size_t i = 0; i < specs.size(); ++i)
            if (specs[i].fan_in == 0)
                for (auto& v : m.params[i].value.data()) v = rng.uniform(-0.5, 0.5);
        return m;
    }
}

// 1. First-order gradients of CE through MLP/CNN forwards vs central differences.
Outcome first_order() {
    const auto t0 = std::chrono::steady_clock::now();
    SplitMix64 rng(1001);
    std::size_t graphs = 0, tensors = 0, skipped = 0;
    double worst = 0.0;
    while (graphs < kFirstOrderGraphs) {
        auto m = random_model(rng, graphs % 2 == 1);
        const Tensor x = oracle::random_tensor(nn::input_shape(m.config), rng);
        const Label y(nn::class_count(m.config), rng.below(nn::class_count(m.config)));
        Tape t;
        m.bind(t);
        const auto f = danil::detail::sample_forward(m, t, x, true);
        const VarId loss = cross_entropy_with_softmax(t, f.logits, y);
        if (oracle::kink_margin(t) < kKinkMargin) {
            ++skipped;
            continue;
        }
        std::vector<VarId> wrt{f.x};
        for (const auto& p : m.params) wrt.push_back(p.id);
        const auto g = gradients(t, loss, wrt);
        const auto values = m.values();

        std::vector<Tensor> fd{oracle::central_difference(
            [&](const Tensor& v) { return oracle::sample_loss(m, values, v, y); }, x, kFdStep)};
        for (std::size_t k = 0; k < values.size(); ++k)
            fd.push_back(oracle::central_difference(
                [&](const Tensor& v) {
                    auto probe = values;
                    probe[k] = v;
                    return oracle::sample_loss(m, probe, x, y);
                },
                values[k], kFdStep));
        for (std::size_t k = 0; k < g.size(); ++k) {
            // a tensor whose exact gradient vanishes (e.g. behind a fully dead layer) has no
            // relative scale; it must then be zero up to finite-difference rounding
            if (oracle::l2(g[k]) == 0.0) {
                if (oracle::max_abs_diff(g[k], fd[k]) > 1e-9) worst = INFINITY;
                continue;
            }
            worst = std::max(worst, oracle::relative_error(g[k], fd[k]));
            ++tensors;
        }
        ++graphs;
    }
    const double secs = seconds_since(t0);
    return {worst < kFirstOrderTol && secs < kFirstOrderBudget,
            std::to_string(graphs) + " graphs (MLP+CNN), " + std::to_string(tensors) +
                " gradient tensors, max rel err " + fmt(worst) + " (< " + fmt(kFirstOrderTol) + "), " +
                std::to_string(skipped) + " near-kink draws redrawn, " + fmt(secs) + " s"};
}

// 2. Gradient of L_total from danil_step vs differences of the recomputed pipeline.
Outcome second_order() {
    const auto t0 = std::chrono::steady_clock::now();
    SplitMix64 rng(2002);
    std::size_t done = 0;
    double worst = 0.0;
    while (done < kSecondOrderInstances) {
        auto m = random_model(rng, done % 4 == 3);
        const std::size_t n = nn::class_count(m.config);
        const Tensor x = oracle::random_tensor(nn::input_shape(m.config), rng);
        const auto z = nn::predict_logits(m, std::span<const Tensor>(&x, 1));
        const std::size_t pred = argmax(z.data());
        const Label y(n, (pred + 1 + rng.below(n - 1)) % n);
        const Label pseudo(n, pred);
        const double lambda = done % 2 == 0 ? 1.0 : 0.1;
        const DanilHyperParams hp{lambda, 1e-4};

        Tape probe_tape;
        m.bind(probe_tape);
        const auto s = danil::detail::danil_sample(m, probe_tape, x, y, hp);
        if (oracle::kink_margin(probe_tape) < kKinkMargin || oracle::logit_margin(z.data()) < kKinkMargin) continue;
        if (s.record.l_d <= 0.0) continue;

        // the update of a one-sample danil_step stores dL_total/dW in each parameter's slot
        auto stepped = m;
        danil_step(stepped, Batch{{x}, {y}}, hp, 1e-3);
        std::vector<Tensor> grads;
        for (const auto& p : stepped.params) grads.push_back(p.grad);

        const auto values = m.values();
        std::vector<Tensor> fd;
        for (std::size_t k = 0; k < values.size(); ++k)
            fd.push_back(oracle::central_difference(
                [&](const Tensor& v) {
                    auto probe = values;
                    probe[k] = v;
                    return oracle::danil_objective(m, probe, x, y, pseudo, lambda, hp.eps);
                },
                values[k], kFdStep));
        worst = std::max(worst, oracle::relative_error(oracle::flatten_all(grads), oracle::flatten_all(fd)));
        ++done;
    }
    const double secs = seconds_since(t0);
    return {worst < kSecondOrderTol && secs < kSecondOrderBudget,
            std::to_string(done) + " misclassified instances, max rel err " + fmt(worst) + " (< " +
                fmt(kSecondOrderTol) + "), " + fmt(secs) + " s"};
}

Batch labelled_batch(const nn::Model& m, std::size_t size, bool all_correct, SplitMix64& rng) {
    const std::size_t n = nn::class_count(m.config);
    Batch b;
    for (std::size_t i = 0; i < size; ++i) {
        b.inputs.push_back(oracle::random_tensor(nn::input_shape(m.config), rng));
        const auto z = nn::predict_logits(m, std::span<const Tensor>(&b.inputs.back(), 1));
        b.labels.emplace_back(n, all_correct ? argmax(z.data()) : rng.below(n));
    }
    return b;
}

// 3. Bit-exact degeneracies.
Outcome equivalences() {
    SplitMix64 rng(3003);
    std::size_t lambda0 = 0, correct = 0, keep_all = 0;
    for (std::size_t i = 0; i < kEquivalenceBatches; ++i) {
        const auto m0 = random_model(rng, i % 2 == 1);
        const auto mixed = labelled_batch(m0, 2 + rng.below(6), false, rng);
        const auto clean = labelled_batch(m0, 2 + rng.below(6), true, rng);
        const double lr = 0.05;

        auto ce = m0, dn = m0;
        ce_step(ce, mixed, lr);
        danil_step(dn, mixed, DanilHyperParams{0.0, 1e-4}, lr);
        lambda0 += ce.values() == dn.values();

        auto ce2 = m0, dn2 = m0;
        ce_step(ce2, clean, lr);
        const auto r = danil_step(dn2, clean, DanilHyperParams{}, lr);
        correct += ce2.values() == dn2.values() && r.correct == clean.size();

        auto oh = m0;
        ohem_step(oh, mixed, OhemConfig{1.0}, lr);
        keep_all += ce.values() == oh.values();
    }
    const std::size_t n = kEquivalenceBatches;
    return {lambda0 == n && correct == n && keep_all == n,
            "danil(lambda=0)==ce " + std::to_string(lambda0) + "/" + std::to_string(n) + ", all-correct danil==ce " +
                std::to_string(correct) + "/" + std::to_string(n) + ", ohem(keep=1)==ce " + std::to_string(keep_all) +
                "/" + std::to_string(n)};
}

// 4. Correct predictions carry no distraction term.
Outcome branch_contract() {
    SplitMix64 rng(4004);
    std::size_t checked = 0, violations = 0, misclassified = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(5);
        Tensor z(Shape{n});
        for (auto& v : z.data()) v = static_cast<double>(rng.below(4)) + (rng.below(2) ? rng.uniform() : 0.0);
        const Label y(n, rng.below(n));
        const bool same = argmax(z.data()) == y.index();
        violations += make_pseudo_label(z, y).has_value() == same;
        ++checked;
    }
    for (int trial = 0; trial < 40; ++trial) {
        auto m = random_model(rng, trial % 2 == 1);
        const auto b = labelled_batch(m, 6, trial % 3 == 0, rng);
        const auto r = danil_step(m, b, DanilHyperParams{rng.uniform(0.0, 2.0), 1e-4}, 0.01);
        for (const auto& s : r.samples) {
            ++checked;
            if (s.correct) violations += !(s.l_d == 0.0 && s.l_total == s.l_c_plus);
            else ++misclassified;
        }
    }
    return {violations == 0 && misclassified > 0,
            std::to_string(checked) + " cases (" + std::to_string(misclassified) + " misclassified), " +
                std::to_string(violations) + " violations"};
}

// 5. L_d point values.
Outcome point_values() {
    auto ld = [](const Tensor& a, const Tensor& b) {
        Tape t;
        return t.value(distraction_loss(t, t.leaf(a, false), t.leaf(b, false), 1e-4)).item();
    };
    const Tensor a(Shape{2, 3}, {0.3, -0.2, 0.7, 1.1, 0.0, -0.4});
    Tensor b = a;
    b[2] += 1.0;
    const double equal = ld(a, a), unit = ld(a, b);
    const double e1 = std::abs(equal - 1e4), e2 = std::abs(unit - 1.0 / (1.0 + 1e-4));
    return {e1 <= kPointTol && e2 <= kPointTol,
            "equal maps " + fmt(equal) + " (err " + fmt(e1) + "), unit distance " + fmt(unit) + " (err " + fmt(e2) + ")"};
}

// 6. Direction of improvement on the synthetic distractor benchmark.
Outcome experiment() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = harness::load_config(fs::path(DANIL_SOURCE_DIR) / "configs" / "distractor.ini");
    const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    const auto rows = harness::cmd_compare(cfg, seeds);
    const auto& base = rows[0];
    const auto& dn = rows[2];
    const double secs = seconds_since(t0);
    const double acc_gain = dn.acc_mean - base.acc_mean, f1_gain = dn.f1_mean - base.f1_mean;
    const bool calibrated = base.acc_mean >= 0.6 && base.acc_mean <= 0.8;
    std::ostringstream lambdas;
    for (const auto& r : dn.runs) lambdas << (lambdas.tellp() ? "," : "") << fmt(r.lambda);
    std::ostringstream d;
    d << "base acc " << fmt(base.acc_mean) << " f1 " << fmt(base.f1_mean) << "; ohem acc " << fmt(rows[1].acc_mean)
      << "; danil acc " << fmt(dn.acc_mean) << " f1 " << fmt(dn.f1_mean) << " (lambda " << lambdas.str()
      << "); gain acc " << fmt(acc_gain) << " f1 " << fmt(f1_gain) << "; base in [0.6,0.8]: "
      << (calibrated ? "yes" : "no") << "; " << fmt(secs) << " s";
    return {calibrated && acc_gain >= 0.0 && f1_gain >= 0.0 && acc_gain > 0.0 && secs < kExperimentBudget, d.str()};
}

// 7. Metrics against brute-force per-class counting.
Outcome metrics_oracle() {
    SplitMix64 rng(7007);
    double worst = 0.0;
    for (std::size_t trial = 0; trial < kMetricVectors; ++trial) {
        const std::size_t n = 2 + rng.below(8), len = 1 + rng.below(80);
        std::vector<std::size_t> truth(len), pred(len);
        for (std::size_t i = 0; i < len; ++i) {
            truth[i] = rng.below(n);
            pred[i] = rng.uniform() < 0.4 ? truth[i] : rng.below(n);
        }
        double f1 = 0.0, hits = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            double tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < len; ++i) {
                tp += pred[i] == k && truth[i] == k;
                fp += pred[i] == k && truth[i] != k;
                fn += pred[i] != k && truth[i] == k;
            }
            f1 += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
        }
        f1 /= static_cast<double>(n);
        for (std::size_t i = 0; i < len; ++i) hits += pred[i] == truth[i];
        const auto cm = metrics::confusion(pred, truth, n);
        worst = std::max({worst, std::abs(metrics::macro_f1(cm) - f1),
                          std::abs(metrics::accuracy(cm) - hits / static_cast<double>(len))});
    }
    return {worst <= kMetricsTol,
            std::to_string(kMetricVectors) + " random vectors, max abs diff " + fmt(worst)};
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("danil_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// 8. Same config and seed twice: identical checkpoint bytes and reports.
Outcome reproducibility() {
    const auto cfg = harness::load_config(fs::path(DANIL_SOURCE_DIR) / "configs" / "smoke.ini");
    const auto dir = scratch("repro");
    const auto a = harness::cmd_train(cfg, dir / "a");
    const auto b = harness::cmd_train(cfg, dir / "b");
    const bool ckpt = nn::read_file_bytes(a.checkpoint) == nn::read_file_bytes(b.checkpoint);
    auto strip = [](const fs::path& p) {
        std::ifstream in(p);
        auto j = harness::Json::parse(in);
        j.erase("wall_clock_seconds");
        return j.dump();
    };
    const bool report = strip(a.report) == strip(b.report);
    fs::remove_all(dir);
    return {ckpt && report, std::string("checkpoints ") + (ckpt ? "identical" : "differ") + ", reports " +
                                (report ? "identical" : "differ") + " (wall clock excluded)"};
}

// 9. One map for a correct sample, two for a misclassified one; PGMs parse back.
Outcome saliency() {
    const auto cfg = harness::load_config(fs::path(DANIL_SOURCE_DIR) / "configs" / "smoke.ini");
    const auto dir = scratch("saliency");
    const auto trained = harness::cmd_train(cfg, dir / "run");
    const auto model = nn::load_checkpoint(trained.checkpoint);
    const auto splits = harness::load_data(cfg);
    const auto preds = harness::predict(model, splits.test);
    std::optional<std::size_t> right, wrong;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == splits.test.labels[i].index()) right = right.value_or(i);
        else wrong = wrong.value_or(i);
    }
    if (!right || !wrong) return {false, "test split lacks a correct or a misclassified sample"};

    bool ok = true;
    std::string why;
    auto check_files = [&](const std::vector<fs::path>& files, std::size_t expect, const char* what) {
        if (files.size() != expect) {
            ok = false;
            why += std::string(" ") + what + ": " + std::to_string(files.size()) + " maps;";
        }
        for (const auto& f : files) {
            const auto bytes = nn::read_file_bytes(f);
            const std::string text(bytes.begin(), bytes.end());
            const auto img = decode_pgm(text);
            const bool format = text.rfind("P5\n", 0) == 0 && text.find("\n255\n") != std::string::npos &&
                                encode_pgm(img) == text && img.width * img.height == img.pixels.size();
            if (!format) {
                ok = false;
                why += " bad pgm " + f.filename().string() + ";";
            }
        }
    };
    check_files(harness::cmd_saliency(model, splits.test, *right, dir / "right").images, 1, "correct");
    check_files(harness::cmd_saliency(model, splits.test, *wrong, dir / "wrong").images, 2, "misclassified");

    auto zero = model;
    for (auto& p : zero.params) p.value = Tensor::zeros(p.value.shape());
    data::Dataset blank{{Tensor::zeros(nn::input_shape(model.config))}, {Label(splits.test.classes, 0)},
                        splits.test.classes, data::Split::Test};
    const auto z = harness::cmd_saliency(zero, blank, 0, dir / "zero");
    const auto img = read_pgm(z.images.front());
    if (std::any_of(img.pixels.begin(), img.pixels.end(), [](auto p) { return p != 0; })) {
        ok = false;
        why += " zero model map not blank;";
    }
    fs::remove_all(dir);
    return {ok, ok ? "correct sample -> 1 map, misclassified -> 2 maps, all P5/255 and round-trip exact" : why};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"first-order gradient oracle", first_order},
        {"second-order gradient oracle", second_order},
        {"degeneracy equivalences", equivalences},
        {"correct-prediction branch contract", branch_contract},
        {"distraction loss point values", point_values},
        {"direction of improvement (5 seeds)", experiment},
        {"metrics oracle", metrics_oracle},
        {"reproducibility", reproducibility},
        {"saliency contract", saliency},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
