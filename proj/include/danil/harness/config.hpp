#pragma once

// Run configuration, read from an INI file:
//
//   [run]     method = base | ohem | danil, seed, epochs, batch_size, lr, out
//   [model]   kind = mlp | cnn, hidden = "32,16" or blocks = "out:k:stride:pad:pool, ..."
//   [data]    source = synthetic | idx | csv, plus source-specific keys
//   [hyper]   lambda, eps, keep_fraction
//   [tuning]  lambda_grid = "1e-5, 1e-3, 1e-1", validation_fraction
//
// Input width, image geometry and class count come from the data.

#include <danil/baselines.hpp>
#include <danil/danil.hpp>
#include <danil/data.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace danil::harness {

enum class Method { Base, Ohem, Danil };

inline std::string method_name(Method m) {
    switch (m) {
    case Method::Base: return "base";
    case Method::Ohem: return "ohem";
    case Method::Danil: return "danil";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "base") return Method::Base;
    if (s == "ohem") return Method::Ohem;
    if (s == "danil") return Method::Danil;
    throw ConfigError("unknown method '" + s + "' (expected base, ohem or danil)");
}

struct SyntheticSource {
    data::SyntheticSpec spec;
    bool seed_from_run = true;  // no explicit [data] seed: follow the run seed
};

struct IdxSource {
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    std::optional<std::size_t> classes;
};

struct CsvSource {
    std::filesystem::path train, test;
    std::size_t classes = 0;
};

using DataSource = std::variant<SyntheticSource, IdxSource, CsvSource>;

struct ModelSpec {
    enum class Kind { Mlp, Cnn } kind = Kind::Mlp;
    std::vector<std::size_t> hidden;    // mlp
    std::vector<nn::ConvBlock> blocks;  // cnn
};

struct Tuning {
    std::vector<double> lambda_grid;  // empty: no tuning
    double validation_fraction = 0.2;
};

struct RunConfig {
    Method method = Method::Danil;
    std::uint64_t seed = 0;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double lr = 0.01;
    std::filesystem::path out = "out";
    ModelSpec model;
    DataSource data = SyntheticSource{};
    DanilHyperParams hyper;
    OhemConfig ohem;
    Tuning tuning;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        hyper.validate();
        ohem.validate();
        for (double l : tuning.lambda_grid)
            if (!(l >= 0.0)) throw ConfigError("lambda_grid entries must be >= 0");
        if (!(tuning.validation_fraction > 0.0 && tuning.validation_fraction < 1.0))
            throw ConfigError("validation_fraction must be in (0, 1)");
        if (model.kind == ModelSpec::Kind::Cnn && model.blocks.empty())
            throw ConfigError("cnn model needs at least one block");
        if (auto* s = std::get_if<SyntheticSource>(&data)) s->spec.validate();
    }

    /// Effective synthetic spec (seed resolved), if the source is synthetic.
    std::optional<data::SyntheticSpec> synthetic() const {
        const auto* s = std::get_if<SyntheticSource>(&data);
        if (!s) return std::nullopt;
        auto spec = s->spec;
        if (s->seed_from_run) spec.seed = seed;
        return spec;
    }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
        const auto b = item.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = item.find_last_not_of(" \t");
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

template <class T>
T number(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T v{};
    in >> v;
    if (!in || !(in >> std::ws).eof()) throw ConfigError("bad value for " + key + ": '" + text + "'");
    return v;
}

template <class T>
T get(const boost::property_tree::ptree& pt, const std::string& key, T fallback) {
    const auto v = pt.get_optional<std::string>(key);
    return v ? number<T>(key, *v) : fallback;
}

inline std::vector<nn::ConvBlock> parse_blocks(const std::string& text) {
    std::vector<nn::ConvBlock> blocks;
    for (const auto& item : split_list(text, ',')) {
        const auto f = split_list(item, ':');
        if (f.size() < 2 || f.size() > 5)
            throw ConfigError("model.blocks entry '" + item + "' must be out:kernel[:stride[:pad[:pool]]]");
        nn::ConvBlock b{};
        b.out_channels = number<std::size_t>("model.blocks", f[0]);
        b.kernel = number<std::size_t>("model.blocks", f[1]);
        b.stride = f.size() > 2 ? number<std::size_t>("model.blocks", f[2]) : 1;
        b.pad = f.size() > 3 ? number<std::size_t>("model.blocks", f[3]) : 0;
        b.pool = f.size() > 4 ? number<std::size_t>("model.blocks", f[4]) : 1;
        blocks.push_back(b);
    }
    return blocks;
}

} // namespace detail

/// Paths in the config are taken relative to `base_dir`.
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    using detail::get;
    RunConfig c;
    const auto path = [&](const std::string& key) {
        const auto v = tree.get_optional<std::string>(key);
        if (!v) throw ConfigError("missing " + key);
        std::filesystem::path p(*v);
        return p.is_absolute() ? p : base_dir / p;
    };

    c.method = parse_method(tree.get<std::string>("run.method", "danil"));
    c.seed = get<std::uint64_t>(tree, "run.seed", 0);
    c.epochs = get<std::size_t>(tree, "run.epochs", c.epochs);
    c.batch_size = get<std::size_t>(tree, "run.batch_size", c.batch_size);
    c.lr = get<double>(tree, "run.lr", c.lr);
    c.out = tree.get<std::string>("run.out", c.out.string());

    const auto kind = tree.get<std::string>("model.kind", "mlp");
    if (kind == "mlp") {
        c.model.kind = ModelSpec::Kind::Mlp;
        for (const auto& h : detail::split_list(tree.get<std::string>("model.hidden", ""), ','))
            c.model.hidden.push_back(detail::number<std::size_t>("model.hidden", h));
    } else if (kind == "cnn") {
        c.model.kind = ModelSpec::Kind::Cnn;
        c.model.blocks = detail::parse_blocks(tree.get<std::string>("model.blocks", ""));
    } else {
        throw ConfigError("unknown model.kind '" + kind + "'");
    }

    const auto source = tree.get<std::string>("data.source", "synthetic");
    if (source == "synthetic") {
        SyntheticSource s;
        s.spec.classes = get<std::size_t>(tree, "data.classes", s.spec.classes);
        s.spec.dim = get<std::size_t>(tree, "data.dim", s.spec.dim);
        s.spec.class_separation = get<double>(tree, "data.class_separation", s.spec.class_separation);
        s.spec.noise_scale = get<double>(tree, "data.noise_scale", s.spec.noise_scale);
        s.spec.distractor_rate = get<double>(tree, "data.distractor_rate", s.spec.distractor_rate);
        s.spec.samples_per_class = get<std::size_t>(tree, "data.samples_per_class", s.spec.samples_per_class);
        if (tree.get_optional<std::string>("data.seed")) {
            s.spec.seed = get<std::uint64_t>(tree, "data.seed", 0);
            s.seed_from_run = false;
        }
        c.data = s;
    } else if (source == "idx") {
        IdxSource s{path("data.train_images"), path("data.train_labels"), path("data.test_images"),
                    path("data.test_labels"), std::nullopt};
        if (tree.get_optional<std::string>("data.classes")) s.classes = get<std::size_t>(tree, "data.classes", 0);
        c.data = s;
    } else if (source == "csv") {
        c.data = CsvSource{path("data.train"), path("data.test"), get<std::size_t>(tree, "data.classes", 0)};
    } else {
        throw ConfigError("unknown data.source '" + source + "'");
    }

    c.hyper.lambda = get<double>(tree, "hyper.lambda", c.hyper.lambda);
    c.hyper.eps = get<double>(tree, "hyper.eps", c.hyper.eps);
    c.ohem.keep_fraction = get<double>(tree, "hyper.keep_fraction", c.ohem.keep_fraction);

    for (const auto& l : detail::split_list(tree.get<std::string>("tuning.lambda_grid", ""), ','))
        c.tuning.lambda_grid.push_back(detail::number<double>("tuning.lambda_grid", l));
    c.tuning.validation_fraction = get<double>(tree, "tuning.validation_fraction", c.tuning.validation_fraction);

    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    return parse_config(in, file.parent_path());
}

} // namespace danil::harness
