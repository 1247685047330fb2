#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "promptforge/grid.hpp"

namespace promptforge {

// ---------------------------------------------------------------------------
// Base64 (RFC 4648, padded)

inline std::string base64_encode(const std::vector<std::uint8_t>& data) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < data.size(); i += 3) {
        const std::uint32_t v = (std::uint32_t(data[i]) << 16) | (std::uint32_t(data[i + 1]) << 8) | data[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (i < data.size()) {
        std::uint32_t v = std::uint32_t(data[i]) << 16;
        if (i + 1 < data.size()) v |= std::uint32_t(data[i + 1]) << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += i + 1 < data.size() ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
    auto value = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    if (text.size() % 4 != 0) throw InvalidArgument("base64: length is not a multiple of 4");
    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        const bool last = i + 4 == text.size();
        const int pad = last ? (text[i + 3] == '=') + (text[i + 2] == '=') : 0;
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = text[i + k];
            int d = 0;
            if (k >= 4 - pad) {
                if (c != '=') throw InvalidArgument("base64: misplaced padding");
            } else if ((d = value(c)) < 0) {
                throw InvalidArgument("base64: invalid character");
            }
            v = (v << 6) | std::uint32_t(d);
        }
        out.push_back(std::uint8_t(v >> 16));
        if (pad < 2) out.push_back(std::uint8_t(v >> 8));
        if (pad < 1) out.push_back(std::uint8_t(v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngErrorState {
    std::string message;
};

inline void png_error_fn(png_structp png, png_const_charp msg) {
    static_cast<PngErrorState*>(png_get_error_ptr(png))->message = msg ? msg : "unknown libpng error";
    png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

struct MemoryCursor {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

inline void png_read_memory(png_structp png, png_bytep out, png_size_t n) {
    auto* c = static_cast<MemoryCursor*>(png_get_io_ptr(png));
    if (c->pos + n > c->size) png_error(png, "truncated PNG data");
    std::memcpy(out, c->data + c->pos, n);
    c->pos += n;
}

inline void png_write_memory(png_structp png, png_bytep in, png_size_t n) {
    auto* v = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    v->insert(v->end(), in, in + n);
}

inline void png_flush_noop(png_structp) {}

enum class PngRead { Gray, Labels };

struct RawRaster {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;
};

/// Decodes an 8-bit single-channel raster. Gray mode converts any colour type to luminance;
/// Labels mode keeps palette indices / gray levels as-is.
inline RawRaster png_decode(std::FILE* fp, const MemoryCursor* mem, PngRead mode, const std::string& what) {
    PngErrorState err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw Error(what + ": cannot allocate PNG reader");
    png_infop info = png_create_info_struct(png);
    RawRaster out;
    std::vector<png_bytep> rows;
    MemoryCursor cursor = mem ? *mem : MemoryCursor{nullptr, 0, 0};
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(what + ": " + err.message);
    }
    if (fp) png_init_io(png, fp);
    else png_set_read_fn(png, &cursor, png_read_memory);
    png_read_info(png, info);
    const int ctype = png_get_color_type(png, info), depth = png_get_bit_depth(png, info);
    if (mode == PngRead::Gray) {
        png_set_expand(png);
        png_set_strip_16(png);
        png_set_strip_alpha(png);
        if (ctype & PNG_COLOR_MASK_COLOR || ctype == PNG_COLOR_TYPE_PALETTE) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    } else {
        if (ctype != PNG_COLOR_TYPE_PALETTE && ctype != PNG_COLOR_TYPE_GRAY)
            png_error(png, "label masks must be paletted or grayscale");
        if (depth == 16) png_error(png, "16-bit label masks are not supported");
        png_set_packing(png);
    }
    png_read_update_info(png, info);
    if (png_get_channels(png, info) != 1 || png_get_bit_depth(png, info) != 8)
        png_error(png, "could not convert to 8-bit single channel");
    out.width = int(png_get_image_width(png, info));
    out.height = int(png_get_image_height(png, info));
    out.pixels.resize(std::size_t(out.width) * out.height);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = out.pixels.data() + std::size_t(y) * out.width;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

inline void png_encode(std::FILE* fp, std::vector<std::uint8_t>* mem, const RawRaster& r, bool paletted,
                       const std::string& what) {
    PngErrorState err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
    if (!png) throw Error(what + ": cannot allocate PNG writer");
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep> rows(r.height);
    std::array<png_color, 256> palette{};
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(what + ": " + err.message);
    }
    if (fp) png_init_io(png, fp);
    else png_set_write_fn(png, mem, png_write_memory, png_flush_noop);
    png_set_IHDR(png, info, png_uint_32(r.width), png_uint_32(r.height), 8,
                 paletted ? PNG_COLOR_TYPE_PALETTE : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (paletted) {
        // Background black, classes on a fixed hue wheel.
        static constexpr std::array<std::array<png_byte, 3>, 8> kColours{{{230, 25, 75}, {60, 180, 75}, {255, 225, 25},
                                                                          {0, 130, 200}, {245, 130, 48}, {145, 30, 180},
                                                                          {70, 240, 240}, {240, 50, 230}}};
        for (int i = 1; i < 256; ++i) {
            const auto& c = kColours[std::size_t(i - 1) % kColours.size()];
            palette[i] = {c[0], c[1], c[2]};
        }
        png_set_PLTE(png, info, palette.data(), 256);
    }
    // Fixed settings keep output bytes stable across runs.
    png_set_compression_level(png, 9);
    png_set_filter(png, PNG_FILTER_TYPE_BASE, PNG_FILTER_NONE);
    png_write_info(png, info);
    for (int y = 0; y < r.height; ++y) rows[y] = const_cast<png_bytep>(r.pixels.data() + std::size_t(y) * r.width);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct File {
    std::FILE* fp;
    explicit File(const std::string& path, const char* mode) : fp(std::fopen(path.c_str(), mode)) {}
    ~File() {
        if (fp) std::fclose(fp);
    }
    File(const File&) = delete;
    File& operator=(const File&) = delete;
};

inline RawRaster to_raw(const ImageGrid& img) {
    RawRaster r{img.height, img.width, std::vector<std::uint8_t>(img.size())};
    for (std::size_t i = 0; i < img.size(); ++i)
        r.pixels[i] = std::uint8_t(std::lround(std::clamp(img.values[i], 0.0, 1.0) * 255.0));
    return r;
}

inline ImageGrid from_raw(const RawRaster& r) {
    ImageGrid img(r.height, r.width);
    for (std::size_t i = 0; i < img.size(); ++i) img.values[i] = r.pixels[i] / 255.0;
    return img;
}

inline LabelMask labels_from_raw(const RawRaster& r, int num_classes) {
    int top = 0;
    for (auto v : r.pixels) top = std::max(top, int(v));
    LabelMask m(r.height, r.width, std::max({1, num_classes, top}));
    for (std::size_t i = 0; i < m.size(); ++i) m.labels[i] = r.pixels[i];
    return m;
}

}  // namespace detail

/// 8-bit grayscale PNG (colour inputs are converted to luminance) scaled to [0,1].
inline ImageGrid read_png_gray(const std::string& path) {
    detail::File f(path, "rb");
    if (!f.fp) throw Error("cannot open " + path);
    return detail::from_raw(detail::png_decode(f.fp, nullptr, detail::PngRead::Gray, path));
}

/// Paletted or grayscale PNG whose pixel values are class ids. `num_classes` of 0 infers the maximum.
inline LabelMask read_png_labels(const std::string& path, int num_classes = 0) {
    detail::File f(path, "rb");
    if (!f.fp) throw Error("cannot open " + path);
    return detail::labels_from_raw(detail::png_decode(f.fp, nullptr, detail::PngRead::Labels, path), num_classes);
}

inline void write_png_gray(const std::string& path, const ImageGrid& img) {
    detail::File f(path, "wb");
    if (!f.fp) throw Error("cannot write " + path);
    detail::png_encode(f.fp, nullptr, detail::to_raw(img), false, path);
}

inline void write_png_labels(const std::string& path, const LabelMask& mask) {
    detail::RawRaster r{mask.height, mask.width, std::vector<std::uint8_t>(mask.size())};
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask.labels[i] < 0 || mask.labels[i] > 255) throw InvalidArgument("label does not fit in 8 bits");
        r.pixels[i] = std::uint8_t(mask.labels[i]);
    }
    detail::File f(path, "wb");
    if (!f.fp) throw Error("cannot write " + path);
    detail::png_encode(f.fp, nullptr, r, true, path);
}

inline std::vector<std::uint8_t> encode_png_gray(const ImageGrid& img) {
    std::vector<std::uint8_t> out;
    detail::png_encode(nullptr, &out, detail::to_raw(img), false, "png encode");
    return out;
}

inline ImageGrid decode_png_gray(const std::vector<std::uint8_t>& bytes) {
    const detail::MemoryCursor c{bytes.data(), bytes.size(), 0};
    return detail::from_raw(detail::png_decode(nullptr, &c, detail::PngRead::Gray, "png decode"));
}

}  // namespace promptforge
