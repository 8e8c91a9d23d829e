#pragma once

// Training runs, evaluation, saliency export and seed sweeps behind the CLI.

#include <danil/checkpoint.hpp>
#include <danil/harness/config.hpp>
#include <danil/metrics.hpp>
#include <danil/saliency.hpp>

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <thread>

namespace danil::harness {

using Json = nlohmann::ordered_json;

// Child streams of the run seed.
inline constexpr std::uint64_t kShuffleStream = 1000;
inline constexpr std::uint64_t kHoldoutStream = 7;

struct Splits {
    data::Dataset train;
    data::Dataset test;
};

inline Splits load_data(const RunConfig& cfg) {
    Splits s;
    if (auto spec = cfg.synthetic()) {
        auto d = data::generate_synthetic(*spec);
        s = {std::move(d.train), std::move(d.test)};
    } else if (const auto* idx = std::get_if<IdxSource>(&cfg.data)) {
        s.train = data::load_idx(idx->train_images, idx->train_labels, idx->classes);
        s.test = data::load_idx(idx->test_images, idx->test_labels, idx->classes ? idx->classes : s.train.classes);
    } else {
        const auto& csv = std::get<CsvSource>(cfg.data);
        s.train = data::load_csv(csv.train, csv.classes);
        s.test = data::load_csv(csv.test, csv.classes);
    }
    s.test.split = data::Split::Test;
    if (s.train.empty()) throw ConfigError("training set is empty");
    s.train.validate();
    s.test.validate();
    if (s.train.classes != s.test.classes) throw ConfigError("train and test class counts differ");
    return s;
}

inline nn::ModelConfig model_config(const ModelSpec& spec, const data::Dataset& d) {
    const Shape& in = d.inputs.front().shape();
    if (spec.kind == ModelSpec::Kind::Mlp) {
        nn::MlpConfig m;
        m.widths.push_back(numel(in));
        for (auto h : spec.hidden) m.widths.push_back(h);
        m.widths.push_back(d.classes);
        return m;
    }
    if (in.size() != 3) throw ConfigError("cnn model needs (C,H,W) inputs, got " + to_string(in));
    nn::SmallCnnConfig c;
    c.channels = in[0];
    c.height = in[1];
    c.width = in[2];
    c.blocks = spec.blocks;
    c.classes = d.classes;
    return c;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalMetrics {
    double macro_f1 = 0.0;
    double accuracy = 0.0;
    metrics::ConfusionMatrix confusion{0};
};

inline std::vector<std::size_t> predict(const nn::Model& model, const data::Dataset& d) {
    const std::size_t n = nn::class_count(model.config);
    std::vector<std::size_t> out;
    out.reserve(d.size());
    constexpr std::size_t chunk = 256;
    for (std::size_t at = 0; at < d.size(); at += chunk) {
        const std::size_t len = std::min(chunk, d.size() - at);
        const auto z = nn::predict_logits(model, std::span<const Tensor>(d.inputs.data() + at, len));
        for (std::size_t i = 0; i < len; ++i) out.push_back(argmax(std::span<const double>(z.data().data() + i * n, n)));
    }
    return out;
}

/// Mean softmax cross-entropy over a dataset.
inline double mean_cross_entropy(const nn::Model& model, const data::Dataset& d) {
    if (d.empty()) throw DomainError("cannot evaluate on an empty dataset");
    double total = 0.0;
    auto m = model;
    for (std::size_t i = 0; i < d.size(); ++i) {
        Tape tape;
        m.bind(tape);
        const auto f = danil::detail::sample_forward(m, tape, d.inputs[i], false);
        total += tape.value(cross_entropy_with_softmax(tape, f.logits, d.labels[i])).item();
    }
    return total / static_cast<double>(d.size());
}

inline EvalMetrics evaluate(const nn::Model& model, const data::Dataset& d) {
    if (d.empty()) throw DomainError("cannot evaluate on an empty dataset");
    if (d.classes != nn::class_count(model.config))
        throw ShapeError("model has " + std::to_string(nn::class_count(model.config)) + " classes, dataset has " +
                         std::to_string(d.classes));
    if (d.inputs.front().shape() != nn::input_shape(model.config))
        throw ShapeError("model expects inputs " + to_string(nn::input_shape(model.config)) + ", dataset has " +
                         to_string(d.inputs.front().shape()));
    const auto preds = predict(model, d);
    std::vector<std::size_t> truths;
    for (const auto& y : d.labels) truths.push_back(y.index());
    EvalMetrics m;
    m.confusion = metrics::confusion(preds, truths, d.classes);
    m.accuracy = metrics::accuracy(m.confusion);
    m.macro_f1 = metrics::macro_f1(m.confusion);
    return m;
}

// ---------------------------------------------------------------------------
// Training

struct EpochStats {
    std::size_t epoch = 0;
    double l_c_plus = 0.0;  // sample means
    double l_d = 0.0;
    double l_total = 0.0;
    double train_accuracy = 0.0;  // judged before each update
};

struct TuningResult {
    std::vector<double> lambdas;
    std::vector<double> validation_accuracy;
    std::vector<double> validation_loss;
    double selected = 0.0;
};

struct RunReport {
    RunConfig config;
    nn::ModelConfig model;
    double lambda = 0.0;  // lambda the final model was trained with
    std::optional<TuningResult> tuning;
    std::vector<EpochStats> epochs;
    EvalMetrics train;
    EvalMetrics test;
    double wall_clock_seconds = 0.0;
};

struct TrainResult {
    nn::Model model;
    RunReport report;
};

using EpochHook = std::function<void(const EpochStats&)>;

inline SplitMix64 shuffle_rng(std::uint64_t seed, std::size_t epoch) {
    return SplitMix64(seed).split(kShuffleStream + epoch);
}

inline StepReport run_step(Method method, nn::Model& model, const Batch& batch, const RunConfig& cfg, double lambda) {
    switch (method) {
    case Method::Base: return ce_step(model, batch, cfg.lr);
    case Method::Ohem: return ohem_step(model, batch, cfg.ohem, cfg.lr);
    case Method::Danil: return danil_step(model, batch, DanilHyperParams{lambda, cfg.hyper.eps}, cfg.lr);
    }
    throw ConfigError("unknown method");
}

/// Epoch loop over `train`; each epoch visits a fresh seeded permutation in
/// batches of cfg.batch_size.
inline std::vector<EpochStats> fit(nn::Model& model, const data::Dataset& train, const RunConfig& cfg, double lambda,
                                   const EpochHook& hook = {}) {
    std::vector<EpochStats> stats;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = shuffle_rng(cfg.seed, epoch);
        const auto order = permutation(train.size(), rng);
        EpochStats e;
        e.epoch = epoch + 1;
        std::size_t correct = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - at);
            const std::span<const std::size_t> idx(order.data() + at, len);
            StepReport r;
            try {
                r = run_step(cfg.method, model, train.batch(idx), cfg, lambda);
            } catch (const NonFiniteError& err) {
                std::string where = "epoch " + std::to_string(epoch + 1);
                if (err.sample()) where += ", sample " + std::to_string(idx[*err.sample()]);
                throw NonFiniteError(err.op(), where + (err.detail().empty() ? "" : ": " + err.detail()));
            }
            for (const auto& s : r.samples) {
                e.l_c_plus += s.l_c_plus;
                e.l_d += s.l_d;
                e.l_total += s.l_total;
                correct += s.correct;
            }
        }
        const double n = static_cast<double>(train.size());
        e.l_c_plus /= n;
        e.l_d /= n;
        e.l_total /= n;
        e.train_accuracy = static_cast<double>(correct) / n;
        stats.push_back(e);
        if (hook) hook(e);
    }
    return stats;
}

/// Picks lambda from the grid by validation accuracy; ties go to the lower
/// validation cross-entropy, then to the earlier entry.
inline TuningResult tune_lambda(const RunConfig& cfg, const nn::ModelConfig& mcfg, const data::Dataset& train) {
    const auto holdout_seed = SplitMix64(cfg.seed).split(kHoldoutStream).next();
    const auto [fit_part, val_part] = data::holdout_split(train, cfg.tuning.validation_fraction, holdout_seed);
    TuningResult t;
    std::size_t best = 0;
    for (double lambda : cfg.tuning.lambda_grid) {
        auto model = nn::init_model(mcfg, cfg.seed);
        fit(model, fit_part, cfg, lambda);
        t.lambdas.push_back(lambda);
        t.validation_accuracy.push_back(evaluate(model, val_part).accuracy);
        t.validation_loss.push_back(mean_cross_entropy(model, val_part));
        const std::size_t i = t.lambdas.size() - 1;
        const bool better = t.validation_accuracy[i] > t.validation_accuracy[best] ||
                            (t.validation_accuracy[i] == t.validation_accuracy[best] &&
                             t.validation_loss[i] < t.validation_loss[best]);
        if (better) best = i;
    }
    t.selected = t.lambdas[best];
    return t;
}

inline TrainResult train_on(const RunConfig& cfg, const data::Dataset& train, const data::Dataset& test,
                            const EpochHook& hook = {}) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    RunReport report;
    report.config = cfg;
    report.model = model_config(cfg.model, train);
    report.lambda = cfg.method == Method::Danil ? cfg.hyper.lambda : 0.0;
    if (cfg.method == Method::Danil && !cfg.tuning.lambda_grid.empty()) {
        report.tuning = tune_lambda(cfg, report.model, train);
        report.lambda = report.tuning->selected;
    }
    auto model = nn::init_model(report.model, cfg.seed);
    report.epochs = fit(model, train, cfg, report.lambda, hook);
    report.train = evaluate(model, train);
    report.test = evaluate(model, test);
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(model), std::move(report)};
}

inline TrainResult train(const RunConfig& cfg, const EpochHook& hook = {}) {
    const auto d = load_data(cfg);
    return train_on(cfg, d.train, d.test, hook);
}

// ---------------------------------------------------------------------------
// Reports

/// Reals in documents are rounded to 6 decimal places.
inline double round6(double v) { return std::round(v * 1e6) / 1e6; }

inline Json to_json(const EvalMetrics& m) {
    return Json{{"macro_f1", round6(m.macro_f1)}, {"accuracy", round6(m.accuracy)}, {"confusion", m.confusion.rows()}};
}

inline Json to_json(const nn::ModelConfig& m) {
    if (const auto* mlp = std::get_if<nn::MlpConfig>(&m)) return Json{{"kind", "mlp"}, {"widths", mlp->widths}};
    const auto& c = std::get<nn::SmallCnnConfig>(m);
    Json blocks = Json::array();
    for (const auto& b : c.blocks)
        blocks.push_back(Json{{"out_channels", b.out_channels},
                              {"kernel", b.kernel},
                              {"stride", b.stride},
                              {"pad", b.pad},
                              {"pool", b.pool}});
    return Json{{"kind", "cnn"},
                {"input", {c.channels, c.height, c.width}},
                {"blocks", blocks},
                {"classes", c.classes}};
}

inline Json to_json(const RunConfig& c) {
    Json data;
    if (auto spec = c.synthetic()) {
        data = Json{{"source", "synthetic"},
                    {"classes", spec->classes},
                    {"dim", spec->dim},
                    {"class_separation", round6(spec->class_separation)},
                    {"noise_scale", round6(spec->noise_scale)},
                    {"distractor_rate", round6(spec->distractor_rate)},
                    {"samples_per_class", spec->samples_per_class},
                    {"seed", spec->seed}};
    } else if (const auto* idx = std::get_if<IdxSource>(&c.data)) {
        data = Json{{"source", "idx"},
                    {"train_images", idx->train_images.string()},
                    {"train_labels", idx->train_labels.string()},
                    {"test_images", idx->test_images.string()},
                    {"test_labels", idx->test_labels.string()}};
    } else {
        const auto& csv = std::get<CsvSource>(c.data);
        data = Json{{"source", "csv"}, {"train", csv.train.string()}, {"test", csv.test.string()}};
    }
    Json grid = Json::array();
    for (double l : c.tuning.lambda_grid) grid.push_back(l);
    return Json{{"method", method_name(c.method)},
                {"seed", c.seed},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"data", data},
                {"hyper", {{"lambda", c.hyper.lambda}, {"eps", c.hyper.eps}, {"keep_fraction", c.ohem.keep_fraction}}},
                {"tuning", {{"lambda_grid", grid}, {"validation_fraction", c.tuning.validation_fraction}}}};
}

inline Json to_json(const RunReport& r, bool include_wall_clock = true) {
    Json epochs = Json::array();
    for (const auto& e : r.epochs)
        epochs.push_back(Json{{"epoch", e.epoch},
                              {"l_c_plus", round6(e.l_c_plus)},
                              {"l_d", round6(e.l_d)},
                              {"l_total", round6(e.l_total)},
                              {"train_accuracy", round6(e.train_accuracy)}});
    Json j{{"config", to_json(r.config)}, {"model", to_json(r.model)}, {"lambda", r.lambda}};
    if (r.tuning) {
        Json rows = Json::array();
        for (std::size_t i = 0; i < r.tuning->lambdas.size(); ++i)
            rows.push_back(Json{{"lambda", r.tuning->lambdas[i]},
                                {"validation_accuracy", round6(r.tuning->validation_accuracy[i])},
                                {"validation_loss", round6(r.tuning->validation_loss[i])}});
        j["tuning"] = Json{{"candidates", rows}, {"selected", r.tuning->selected}};
    }
    j["epochs"] = epochs;
    j["final"] = Json{{"train", to_json(r.train)}, {"test", to_json(r.test)}};
    if (include_wall_clock) j["wall_clock_seconds"] = round6(r.wall_clock_seconds);
    return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
}

// ---------------------------------------------------------------------------
// Commands

struct TrainOutputs {
    TrainResult result;
    std::filesystem::path report;
    std::filesystem::path checkpoint;
};

/// Trains and writes report.json and model.ckpt into `out_dir`.
inline TrainOutputs cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                              const EpochHook& hook = {}) {
    TrainOutputs o{train(cfg, hook), out_dir / "report.json", out_dir / "model.ckpt"};
    std::filesystem::create_directories(out_dir);
    write_text(o.report, to_json(o.result.report).dump(2) + "\n");
    nn::save_checkpoint(o.result.model, o.checkpoint);
    return o;
}

inline const data::Dataset& pick_split(const Splits& s, data::Split which) {
    return which == data::Split::Train ? s.train : s.test;
}

inline EvalMetrics cmd_eval(const std::filesystem::path& checkpoint, const data::Dataset& d) {
    return evaluate(nn::load_checkpoint(checkpoint), d);
}

struct SaliencyOutputs {
    std::size_t truth = 0;
    std::size_t predicted = 0;
    std::vector<std::filesystem::path> images;  // a_plus, then a_minus when misclassified
    std::string note;
};

inline SaliencyOutputs cmd_saliency(const nn::Model& model, const data::Dataset& d, std::size_t index,
                                    const std::filesystem::path& out_dir) {
    if (index >= d.size())
        throw DomainError("sample index " + std::to_string(index) + " out of range for " + std::to_string(d.size()) +
                          " samples");
    const Tensor& x = d.inputs[index];
    if (x.shape() != nn::input_shape(model.config))
        throw ShapeError("model expects inputs " + to_string(nn::input_shape(model.config)) + ", sample has " +
                         to_string(x.shape()));
    auto m = model;
    Tape tape;
    m.bind(tape);
    const auto logits = nn::predict_logits(m, std::span<const Tensor>(&x, 1));
    SaliencyOutputs out;
    out.truth = d.labels[index].index();
    out.predicted = argmax(logits.data());
    std::filesystem::create_directories(out_dir);

    const auto a_plus = intrinsic_response_map(m, x, d.labels[index], tape, false, MapKind::Positive);
    out.images.push_back(out_dir / "a_plus.pgm");
    write_pgm(export_response_map(a_plus), out.images.back());
    if (auto pseudo = make_pseudo_label(logits.reshaped({logits.size()}), d.labels[index])) {
        const auto a_minus = intrinsic_response_map(m, x, *pseudo, tape, false, MapKind::Negative);
        out.images.push_back(out_dir / "a_minus.pgm");
        write_pgm(export_response_map(a_minus), out.images.back());
    } else {
        out.note = "sample " + std::to_string(index) + " is classified correctly; no distractor map";
    }
    return out;
}

struct CompareRow {
    Method method;
    std::vector<RunReport> runs;  // one per seed, in seed order
    double f1_mean = 0.0, f1_std = 0.0;
    double acc_mean = 0.0, acc_std = 0.0;
};

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

/// Runs `jobs` tasks on up to `workers` threads; results keep task order.
template <class R>
std::vector<R> run_parallel(const std::vector<std::function<R()>>& tasks, std::size_t workers) {
    std::vector<std::optional<R>> slots(tasks.size());
    std::vector<std::exception_ptr> errors(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < tasks.size();) {
            try {
                slots[i] = tasks[i]();
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, tasks.size()));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<R> out;
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

inline std::vector<CompareRow> cmd_compare(const RunConfig& base_cfg, const std::vector<std::uint64_t>& seeds,
                                           std::size_t workers = std::thread::hardware_concurrency()) {
    if (seeds.empty()) throw ConfigError("compare needs at least one seed");
    const std::vector<Method> methods{Method::Base, Method::Ohem, Method::Danil};
    std::vector<std::function<RunReport()>> tasks;
    for (auto m : methods)
        for (auto seed : seeds)
            tasks.push_back([&base_cfg, m, seed] {
                auto cfg = base_cfg;
                cfg.method = m;
                cfg.seed = seed;
                return train(cfg).report;
            });
    auto reports = run_parallel(tasks, workers);
    std::vector<CompareRow> rows;
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        CompareRow row{methods[mi], {}};
        std::vector<double> f1, acc;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            row.runs.push_back(std::move(reports[mi * seeds.size() + si]));
            f1.push_back(row.runs.back().test.macro_f1);
            acc.push_back(row.runs.back().test.accuracy);
        }
        std::tie(row.f1_mean, row.f1_std) = mean_std(f1);
        std::tie(row.acc_mean, row.acc_std) = mean_std(acc);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json to_json(const std::vector<CompareRow>& rows, const std::vector<std::uint64_t>& seeds) {
    Json table = Json::array();
    for (const auto& r : rows) {
        Json per_seed = Json::array();
        for (std::size_t i = 0; i < r.runs.size(); ++i)
            per_seed.push_back(Json{{"seed", seeds[i]},
                                    {"lambda", r.runs[i].lambda},
                                    {"test_macro_f1", round6(r.runs[i].test.macro_f1)},
                                    {"test_accuracy", round6(r.runs[i].test.accuracy)}});
        table.push_back(Json{{"method", method_name(r.method)},
                             {"macro_f1_mean", round6(r.f1_mean)},
                             {"macro_f1_std", round6(r.f1_std)},
                             {"accuracy_mean", round6(r.acc_mean)},
                             {"accuracy_std", round6(r.acc_std)},
                             {"runs", per_seed}});
    }
    return Json{{"seeds", seeds}, {"methods", table}};
}

} // namespace danil::harness
