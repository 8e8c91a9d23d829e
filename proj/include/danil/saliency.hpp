#pragma once

// Response-map visualization and binary PGM (P5) images.

#include <danil/danil.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace danil {

struct GrayscaleImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major

    friend bool operator==(const GrayscaleImage&, const GrayscaleImage&) = default;
};

enum class ChannelReduce { MaxAbs, MeanAbs };

/// (C, H, W) maps are reduced across channels by `reduce` on absolute values;
/// (H, W) and (W) maps are used as-is. The result is min-max scaled to
/// [0, 255]; a constant map yields an all-zero image.
inline GrayscaleImage export_response_map(const ResponseMap& map, ChannelReduce reduce = ChannelReduce::MaxAbs) {
    const Tensor& t = map.tensor;
    std::size_t channels = 1, h = 1, w = 1;
    switch (t.rank()) {
    case 1: w = t.dim(0); break;
    case 2: h = t.dim(0); w = t.dim(1); break;
    case 3: channels = t.dim(0); h = t.dim(1); w = t.dim(2); break;
    default: throw ShapeError("export_response_map: expected (C,H,W), (H,W) or (W), got " + to_string(t.shape()));
    }
    const std::size_t plane = h * w;
    std::vector<double> reduced(plane, 0.0);
    if (t.rank() < 3) {
        std::copy(t.data().begin(), t.data().end(), reduced.begin());
    } else {
        for (std::size_t p = 0; p < plane; ++p) {
            double acc = 0.0;
            for (std::size_t c = 0; c < channels; ++c) {
                const double v = std::abs(t[c * plane + p]);
                acc = reduce == ChannelReduce::MaxAbs ? std::max(acc, v) : acc + v;
            }
            reduced[p] = reduce == ChannelReduce::MaxAbs ? acc : acc / static_cast<double>(channels);
        }
    }

    GrayscaleImage img{w, h, std::vector<std::uint8_t>(plane, 0)};
    const auto [lo, hi] = std::minmax_element(reduced.begin(), reduced.end());
    const double range = *hi - *lo;
    if (range <= 0.0) return img;
    for (std::size_t p = 0; p < plane; ++p)
        img.pixels[p] = static_cast<std::uint8_t>(std::lround(255.0 * (reduced[p] - *lo) / range));
    return img;
}

inline std::string encode_pgm(const GrayscaleImage& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline GrayscaleImage decode_pgm(std::string_view bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) {
        skip_space();
        std::size_t v = 0;
        const std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') v = v * 10 + (bytes[pos++] - '0');
        if (pos == start) throw ParseError(std::string("pgm: expected ") + what + " at byte " + std::to_string(start));
        return v;
    };
    if (bytes.substr(0, 2) != "P5") throw ParseError("pgm: bad magic at byte 0");
    pos = 2;
    GrayscaleImage img;
    img.width = number("width");
    img.height = number("height");
    const auto maxval = number("maxval");
    if (maxval != 255) throw ParseError("pgm: unsupported maxval " + std::to_string(maxval));
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw ParseError("pgm: missing separator at byte " + std::to_string(pos));
    ++pos;
    const std::size_t n = img.width * img.height;
    if (bytes.size() - pos != n)
        throw ParseError("pgm: expected " + std::to_string(n) + " pixel bytes at byte " + std::to_string(pos) +
                         ", found " + std::to_string(bytes.size() - pos));
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

inline void write_pgm(const GrayscaleImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    const auto s = encode_pgm(img);
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline GrayscaleImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const std::string s{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_pgm(s);
}

} // namespace danil
