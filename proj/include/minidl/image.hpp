#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "minidl/errors.hpp"
#include "minidl/tensor.hpp"

// Image decode/encode (binary PGM/PPM), bilinear resize, normalization and
// grayscale conversion. Pixels are reals in [0,1], row-major, interleaved
// by channel (RGBRGB... for 3-channel images).

namespace minidl {

struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c) {
        if (w < 1 || h < 1 || (c != 1 && c != 3))
            throw DomainError("image dims must be positive with 1 or 3 channels");
        pixels.assign(static_cast<std::size_t>(w) * h * c, 0.0f);
    }

    float& at(int x, int y, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int x, int y, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t size() const { return pixels.size(); }
};

namespace detail {

// PNM headers allow '#' comments and arbitrary whitespace between tokens.
inline std::string pnm_token(const std::string& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
           bytes[pos] != '#')
        ++pos;
    if (start == pos) throw FormatError("truncated PNM header");
    return bytes.substr(start, pos - start);
}

inline int pnm_int(const std::string& bytes, std::size_t& pos) {
    const std::string tok = pnm_token(bytes, pos);
    try {
        return std::stoi(tok);
    } catch (const std::exception&) {
        throw FormatError("bad integer '" + tok + "' in PNM header");
    }
}

}  // namespace detail

// Decodes binary PGM (P5) or PPM (P6) with 8-bit samples; pixel value v
// maps to v/255.
inline Image decode_image(const std::string& bytes) {
    std::size_t pos = 0;
    std::string magic;
    try {
        magic = detail::pnm_token(bytes, pos);
    } catch (const FormatError&) {
        throw FormatError("empty image payload");
    }
    int channels;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw FormatError("unsupported magic '" + magic + "' (want P5 or P6)");

    const int w = detail::pnm_int(bytes, pos);
    const int h = detail::pnm_int(bytes, pos);
    const int maxval = detail::pnm_int(bytes, pos);
    if (w < 1 || h < 1) throw FormatError("non-positive PNM dimensions");
    if (maxval != 255) throw UnsupportedError("PNM maxval " + std::to_string(maxval) + ", only 255");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        throw FormatError("missing whitespace after PNM header");
    ++pos;  // exactly one whitespace byte separates header and raster

    const std::size_t need = static_cast<std::size_t>(w) * h * channels;
    if (bytes.size() - pos < need)
        throw FormatError("truncated raster: need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - pos));
    Image img(w, h, channels);
    for (std::size_t i = 0; i < need; ++i)
        img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
    return img;
}

// P5 for 1-channel, P6 for 3-channel; v in [0,1] quantizes to
// round(v*255) with round-half-up.
inline std::string encode_image(const Image& img) {
    std::string out;
    out += (img.channels == 1) ? "P5" : "P6";
    out += "\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.size());
    for (float v : img.pixels) {
        const float clamped = std::min(1.0f, std::max(0.0f, v));
        out += static_cast<char>(static_cast<unsigned char>(std::floor(clamped * 255.0f + 0.5f)));
    }
    return out;
}

inline Image load_image(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_image(bytes);
    } catch (const Error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void save_image(const Image& img, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    const std::string bytes = encode_image(img);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

// Bilinear resample with half-pixel-centered sampling: destination pixel j
// reads source coordinate (j + 0.5) * in/out - 0.5, clamped interpolation
// at the borders.
inline Image resize_bilinear(const Image& img, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw DomainError("resize to non-positive dims");
    if (img.width == out_w && img.height == out_h) return img;
    Image out(out_w, out_h, img.channels);
    const double sx = static_cast<double>(img.width) / out_w;
    const double sy = static_cast<double>(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double ty = fy - y0;
        int y1 = y0 + 1;
        y0 = std::min(std::max(y0, 0), img.height - 1);
        y1 = std::min(std::max(y1, 0), img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double tx = fx - x0;
            int x1 = x0 + 1;
            x0 = std::min(std::max(x0, 0), img.width - 1);
            x1 = std::min(std::max(x1, 0), img.width - 1);
            for (int c = 0; c < img.channels; ++c) {
                const double top = (1.0 - tx) * img.at(x0, y0, c) + tx * img.at(x1, y0, c);
                const double bot = (1.0 - tx) * img.at(x0, y1, c) + tx * img.at(x1, y1, c);
                out.at(x, y, c) = static_cast<float>((1.0 - ty) * top + ty * bot);
            }
        }
    }
    return out;
}

// [0,1] image -> CHW tensor with t = (v - mean) / std per channel.
// Defaults map [0,1] to [-1,1].
template <class S>
Tensor<S> normalize(const Image& img, double mean = 0.5, double stddev = 0.5) {
    if (!(stddev > 0)) throw DomainError("normalize: std must be > 0");
    Tensor<S> t({img.channels, img.height, img.width});
    S* p = t.data();
    const std::int64_t hw = static_cast<std::int64_t>(img.height) * img.width;
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                p[c * hw + y * img.width + x] =
                    static_cast<S>((img.at(x, y, c) - mean) / stddev);
    return t;
}

// Exact inverse of normalize (values are not re-clamped to [0,1]).
template <class S>
Image denormalize(const Tensor<S>& t, double mean = 0.5, double stddev = 0.5) {
    if (t.ndim() != 3) throw ShapeError("denormalize expects a CHW tensor");
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    if (c != 1 && c != 3) throw ShapeError("denormalize expects 1 or 3 channels");
    Image img(w, h, c);
    const S* p = t.data();
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(x, y, ch) =
                    static_cast<float>(static_cast<double>(p[ch * hw + y * w + x]) * stddev + mean);
    return img;
}

// ITU-R BT.601 luma: y = 0.299 R + 0.587 G + 0.114 B.
inline Image rgb_to_luma(const Image& img) {
    if (img.channels == 1) return img;
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(x, y, 0) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) +
                              0.114f * img.at(x, y, 2);
    return out;
}

// 1-channel -> 3-channel replication (classifiers take RGB input).
inline Image luma_to_rgb(const Image& img) {
    if (img.channels == 3) return img;
    Image out(img.width, img.height, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, 0);
    return out;
}

}  // namespace minidl
