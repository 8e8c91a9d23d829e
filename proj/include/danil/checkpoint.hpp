#pragma once

// Binary model container:
//
//   "DNLM"  u32 version  u64 seed  u8 kind
//   kind 0 (mlp): u32 count, count x u64 width
//   kind 1 (cnn): u64 channels, height, width, classes; u32 blocks,
//                 blocks x (u64 out_channels, kernel, stride, pad, pool)
//   parameters in declaration order, little-endian IEEE-754 doubles
//
// All integers little-endian. Parameter shapes follow from the config.

#include <danil/model.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace danil::nn {

inline constexpr char kCheckpointMagic[4] = {'D', 'N', 'L', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    template <class T>
    void put(T v) {
        std::uint64_t bits;
        if constexpr (std::is_same_v<T, double>)
            bits = std::bit_cast<std::uint64_t>(v);
        else
            bits = static_cast<std::uint64_t>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    void raw(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}

    template <class T>
    T get() {
        need(sizeof(T));
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += sizeof(T);
        if constexpr (std::is_same_v<T, double>)
            return std::bit_cast<double>(bits);
        else
            return static_cast<T>(bits);
    }
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw ParseError("checkpoint truncated at byte " + std::to_string(pos_) + " (needed " +
                             std::to_string(n) + " more)");
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(model.seed);
    if (const auto* m = std::get_if<MlpConfig>(&model.config)) {
        w.put<std::uint8_t>(0);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(m->widths.size()));
        for (auto v : m->widths) w.put<std::uint64_t>(v);
    } else {
        const auto& c = std::get<SmallCnnConfig>(model.config);
        w.put<std::uint8_t>(1);
        for (auto v : {c.channels, c.height, c.width, c.classes}) w.put<std::uint64_t>(v);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(c.blocks.size()));
        for (const auto& b : c.blocks)
            for (auto v : {b.out_channels, b.kernel, b.stride, b.pad, b.pool}) w.put<std::uint64_t>(v);
    }
    for (const auto& p : model.params)
        for (double v : p.value.data()) w.put<double>(v);
    return w.take();
}

inline Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    auto magic = r.take(4);
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw ParseError("checkpoint: bad magic at byte 0");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version) + " at byte 4");
    Model m;
    m.seed = r.get<std::uint64_t>();
    const std::size_t kind_at = r.pos();
    const auto kind = r.get<std::uint8_t>();
    if (kind == 0) {
        MlpConfig c;
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) c.widths.push_back(r.get<std::uint64_t>());
        m.config = c;
    } else if (kind == 1) {
        SmallCnnConfig c;
        c.channels = r.get<std::uint64_t>();
        c.height = r.get<std::uint64_t>();
        c.width = r.get<std::uint64_t>();
        c.classes = r.get<std::uint64_t>();
        const auto n = r.get<std::uint32_t>();
        for (std::uint32_t i = 0; i < n; ++i) {
            ConvBlock b;
            b.out_channels = r.get<std::uint64_t>();
            b.kernel = r.get<std::uint64_t>();
            b.stride = r.get<std::uint64_t>();
            b.pad = r.get<std::uint64_t>();
            b.pool = r.get<std::uint64_t>();
            c.blocks.push_back(b);
        }
        m.config = c;
    } else {
        throw ParseError("checkpoint: unknown model kind " + std::to_string(kind) + " at byte " +
                         std::to_string(kind_at));
    }
    const auto specs = [&] {
        try {
            return parameter_specs(m.config);
        } catch (const ConfigError& e) {
            throw ParseError(std::string("checkpoint: invalid config: ") + e.what());
        }
    }();
    for (const auto& s : specs) {
        Tensor t(s.shape);
        for (auto& v : t.data()) v = r.get<double>();
        m.params.emplace_back(s.name, std::move(t));
    }
    if (r.remaining() != 0)
        throw ParseError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes at byte " +
                         std::to_string(r.pos()));
    return m;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

} // namespace danil::nn
