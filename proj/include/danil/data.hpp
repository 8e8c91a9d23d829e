#pragma once

// Desk-scale datasets: a seeded synthetic generator with tunable class overlap
// and loaders for IDX and CSV files.

#include <danil/losses.hpp>
#include <danil/rng.hpp>
#include <danil/step.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace danil::data {

enum class Split { Train, Test };

struct Dataset {
    std::vector<Tensor> inputs;
    std::vector<Label> labels;
    std::size_t classes = 0;
    Split split = Split::Train;

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }

    void validate() const {
        if (inputs.size() != labels.size())
            throw ShapeError("dataset has " + std::to_string(inputs.size()) + " inputs but " +
                             std::to_string(labels.size()) + " labels");
        for (std::size_t i = 0; i < size(); ++i) {
            if (labels[i].classes() != classes || labels[i].index() >= classes)
                throw DomainError("dataset label " + std::to_string(i) + " inconsistent with " +
                                  std::to_string(classes) + " classes");
            if (inputs[i].shape() != inputs.front().shape())
                throw ShapeError("dataset sample " + std::to_string(i) + " has shape " +
                                 to_string(inputs[i].shape()) + ", expected " + to_string(inputs.front().shape()));
        }
    }

    Batch batch(std::span<const std::size_t> indices) const {
        Batch b;
        b.inputs.reserve(indices.size());
        b.labels.reserve(indices.size());
        for (auto i : indices) {
            b.inputs.push_back(inputs.at(i));
            b.labels.push_back(labels.at(i));
        }
        return b;
    }

    Dataset subset(std::span<const std::size_t> indices) const {
        Dataset d{{}, {}, classes, split};
        for (auto i : indices) {
            d.inputs.push_back(inputs.at(i));
            d.labels.push_back(labels.at(i));
        }
        return d;
    }
};

// ---------------------------------------------------------------------------
// Synthetic Gaussian classes

struct SyntheticSpec {
    std::size_t classes = 4;
    std::size_t dim = 16;
    double class_separation = 1.0;
    double noise_scale = 1.0;
    double distractor_rate = 0.0;
    std::size_t samples_per_class = 100;
    std::uint64_t seed = 0;

    void validate() const {
        if (classes < 2) throw ConfigError("synthetic: classes must be >= 2");
        if (dim < classes) throw ConfigError("synthetic: dim must be >= classes");
        if (!(class_separation >= 0.0)) throw ConfigError("synthetic: class_separation must be >= 0");
        if (!(noise_scale > 0.0)) throw ConfigError("synthetic: noise_scale must be > 0");
        if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0))
            throw ConfigError("synthetic: distractor_rate must be in [0, 1]");
        if (samples_per_class < 1) throw ConfigError("synthetic: samples_per_class must be >= 1");
    }
};

struct TrainTest {
    Dataset train;
    Dataset test;
};

/// Number of a class's samples that go to the training split (70%, rounded).
inline std::size_t train_share(std::size_t per_class) { return (7 * per_class + 5) / 10; }

/// Class k is centred at separation * e_k. A `distractor_rate` fraction of
/// samples are instead centred halfway to a uniformly chosen other class mean
/// while keeping their own label. Each class draws from its own split stream.
inline TrainTest generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const SplitMix64 root(spec.seed);
    TrainTest out;
    out.train = Dataset{{}, {}, spec.classes, Split::Train};
    out.test = Dataset{{}, {}, spec.classes, Split::Test};
    const std::size_t n_train = train_share(spec.samples_per_class);

    for (std::size_t k = 0; k < spec.classes; ++k) {
        SplitMix64 rng = root.split(k);
        for (std::size_t j = 0; j < spec.samples_per_class; ++j) {
            Tensor x(Shape{spec.dim});
            x[k] = spec.class_separation;
            if (rng.uniform() < spec.distractor_rate) {
                std::size_t other = rng.below(spec.classes - 1);
                if (other >= k) ++other;
                x[k] = 0.5 * spec.class_separation;
                x[other] = 0.5 * spec.class_separation;
            }
            for (auto& v : x.data()) v += spec.noise_scale * rng.normal();
            auto& dst = j < n_train ? out.train : out.test;
            dst.inputs.push_back(std::move(x));
            dst.labels.emplace_back(spec.classes, k);
        }
    }

    auto shuffle = [](Dataset& d, SplitMix64 rng) {
        const auto p = permutation(d.size(), rng);
        d = d.subset(p);
    };
    shuffle(out.train, root.split(spec.classes));
    shuffle(out.test, root.split(spec.classes + 1));
    return out;
}

/// Deterministic holdout: a `fraction` of samples (rounded) go to the second part.
inline std::pair<Dataset, Dataset> holdout_split(const Dataset& d, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must be in (0, 1)");
    SplitMix64 rng(seed);
    const auto p = permutation(d.size(), rng);
    const auto n_hold = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(d.size())));
    if (n_hold == 0 || n_hold >= d.size()) throw ConfigError("holdout split leaves an empty part");
    std::vector<std::size_t> keep(p.begin(), p.end() - static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> hold(p.end() - static_cast<std::ptrdiff_t>(n_hold), p.end());
    return {d.subset(keep), d.subset(hold)};
}

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at, const char* what) {
    if (at + 4 > b.size())
        throw ParseError(std::string(what) + ": truncated header at byte " + std::to_string(at));
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
           std::uint32_t{b[at + 3]};
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ParseError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void dump(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + p.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace detail

/// Decode an IDX image/label pair. Images become (1, rows, cols) tensors with
/// bytes scaled to [0, 1]. Without `classes`, the class count is max label + 1.
inline Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels,
                         std::optional<std::size_t> classes = std::nullopt) {
    if (detail::read_be32(images, 0, "idx images") != kIdxImagesMagic)
        throw ParseError("idx images: bad magic at byte 0");
    if (detail::read_be32(labels, 0, "idx labels") != kIdxLabelsMagic)
        throw ParseError("idx labels: bad magic at byte 0");
    const std::size_t n = detail::read_be32(images, 4, "idx images");
    const std::size_t rows = detail::read_be32(images, 8, "idx images");
    const std::size_t cols = detail::read_be32(images, 12, "idx images");
    const std::size_t n_labels = detail::read_be32(labels, 4, "idx labels");
    if (n != n_labels)
        throw ParseError("idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
    const std::size_t plane = rows * cols;
    if (images.size() < 16 + n * plane)
        throw ParseError("idx images: truncated at byte " + std::to_string(images.size()) + ", expected " +
                         std::to_string(16 + n * plane));
    if (labels.size() < 8 + n)
        throw ParseError("idx labels: truncated at byte " + std::to_string(labels.size()) + ", expected " +
                         std::to_string(8 + n));

    std::size_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) max_label = std::max<std::size_t>(max_label, labels[8 + i]);
    const std::size_t k = classes.value_or(std::max<std::size_t>(2, max_label + 1));

    Dataset d{{}, {}, k, Split::Train};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lbl = labels[8 + i];
        if (lbl >= k)
            throw ParseError("idx labels: sample " + std::to_string(i) + " at byte " + std::to_string(8 + i) +
                             " has label " + std::to_string(lbl) + " >= class count " + std::to_string(k));
        Tensor x(Shape{1, rows, cols});
        for (std::size_t p = 0; p < plane; ++p) x[p] = images[16 + i * plane + p] / 255.0;
        d.inputs.push_back(std::move(x));
        d.labels.emplace_back(k, lbl);
    }
    return d;
}

inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::optional<std::size_t> classes = std::nullopt) {
    return parse_idx(detail::slurp(images), detail::slurp(labels), classes);
}

struct IdxBytes {
    std::vector<std::uint8_t> images;
    std::vector<std::uint8_t> labels;
};

/// Inputs must be (1, H, W) or (H, W); values are clamped to [0, 1] and
/// rounded to the nearest of 256 levels.
inline IdxBytes encode_idx(const Dataset& d) {
    if (d.empty()) throw ShapeError("encode_idx: empty dataset");
    const Shape& s = d.inputs.front().shape();
    const bool ok = (s.size() == 3 && s[0] == 1) || s.size() == 2;
    if (!ok) throw ShapeError("encode_idx: inputs must be (1,H,W) or (H,W), got " + to_string(s));
    const std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
    IdxBytes out;
    detail::write_be32(out.images, kIdxImagesMagic);
    detail::write_be32(out.images, static_cast<std::uint32_t>(d.size()));
    detail::write_be32(out.images, static_cast<std::uint32_t>(rows));
    detail::write_be32(out.images, static_cast<std::uint32_t>(cols));
    detail::write_be32(out.labels, kIdxLabelsMagic);
    detail::write_be32(out.labels, static_cast<std::uint32_t>(d.size()));
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.inputs[i].shape() != s) throw ShapeError("encode_idx: ragged dataset at sample " + std::to_string(i));
        if (d.labels[i].index() > 255) throw DomainError("encode_idx: label does not fit in a byte");
        for (double v : d.inputs[i].data())
            out.images.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
        out.labels.push_back(static_cast<std::uint8_t>(d.labels[i].index()));
    }
    return out;
}

inline void write_idx(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto bytes = encode_idx(d);
    detail::dump(images, bytes.images);
    detail::dump(labels, bytes.labels);
}

// ---------------------------------------------------------------------------
// CSV: "label,f1,f2,..." per line, no header, '.' decimal separator.

inline Dataset parse_csv(std::string_view text, std::size_t classes) {
    if (classes < 2) throw ConfigError("csv: class count must be >= 2");
    Dataset d{{}, {}, classes, Split::Train};
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;

        std::vector<std::string_view> fields;
        for (std::size_t start = 0;;) {
            const auto comma = line.find(',', start);
            fields.push_back(line.substr(start, comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        const std::string where = "csv line " + std::to_string(line_no);
        if (fields.size() < 2) throw ParseError(where + ": need a label and at least one feature");
        std::size_t label = 0;
        auto [lp, lec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
        if (lec != std::errc{} || lp != fields[0].data() + fields[0].size())
            throw ParseError(where + ": bad label '" + std::string(fields[0]) + "'");
        if (label >= classes)
            throw ParseError(where + ": label " + std::to_string(label) + " >= class count " + std::to_string(classes));
        if (width == 0) width = fields.size() - 1;
        if (fields.size() - 1 != width)
            throw ParseError(where + ": expected " + std::to_string(width) + " features, got " +
                             std::to_string(fields.size() - 1));
        Tensor x(Shape{width});
        for (std::size_t f = 0; f < width; ++f) {
            const auto& s = fields[f + 1];
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x[f]);
            if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(x[f]))
                throw ParseError(where + ": bad feature " + std::to_string(f + 1) + " '" + std::string(s) + "'");
        }
        d.inputs.push_back(std::move(x));
        d.labels.emplace_back(classes, label);
    }
    return d;
}

inline Dataset load_csv(const std::filesystem::path& path, std::size_t classes) {
    const auto bytes = detail::slurp(path);
    return parse_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), classes);
}

inline std::string format_csv(const Dataset& d) {
    std::string out;
    char buf[64];
    for (std::size_t i = 0; i < d.size(); ++i) {
        out += std::to_string(d.labels[i].index());
        for (double v : d.inputs[i].data()) {
            auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
            out += ',';
            out.append(buf, p);
        }
        out += '\n';
    }
    return out;
}

} // namespace danil::data
