#pragma once

// 8-bit PNG rasters (RGB images and single-channel index masks) via libpng's
// simplified API.

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "razn/errors.hpp"
#include "razn/tensor.hpp"

namespace razn {

/// Interleaved 8-bit RGB raster, row-major HWC.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    RgbImage() = default;
    RgbImage(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

    std::uint8_t* pixel(int r, int c) { return &data[(static_cast<std::size_t>(r) * width + c) * 3]; }
    const std::uint8_t* pixel(int r, int c) const { return &data[(static_cast<std::size_t>(r) * width + c) * 3]; }

    bool operator==(const RgbImage&) const = default;
};

namespace detail {

inline void write_png(const std::filesystem::path& path, int h, int w, std::uint32_t format, const std::uint8_t* buf,
                      int channels) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = format;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf, w * channels, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw std::runtime_error("writing " + path.string() + ": " + msg);
    }
}

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format, int channels, int& h,
                                          int& w) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw ArtifactMismatchError("reading " + path.string() + ": " + img.message);
    }
    img.format = format;
    h = static_cast<int>(img.height);
    w = static_cast<int>(img.width);
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), w * channels, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ArtifactMismatchError("decoding " + path.string() + ": " + msg);
    }
    return buf;
}

}  // namespace detail

inline void write_png_rgb(const std::filesystem::path& path, const RgbImage& im) {
    detail::write_png(path, im.height, im.width, PNG_FORMAT_RGB, im.data.data(), 3);
}

inline RgbImage read_png_rgb(const std::filesystem::path& path) {
    RgbImage im;
    im.data = detail::read_png(path, PNG_FORMAT_RGB, 3, im.height, im.width);
    return im;
}

inline void write_png_mask(const std::filesystem::path& path, const IntMask& m) {
    detail::write_png(path, m.height, m.width, PNG_FORMAT_GRAY, m.data.data(), 1);
}

inline IntMask read_png_mask(const std::filesystem::path& path) {
    IntMask m;
    m.data = detail::read_png(path, PNG_FORMAT_GRAY, 1, m.height, m.width);
    return m;
}

inline RgbImage crop_rgb(const RgbImage& im, int row, int col, int h, int w) {
    if (row < 0 || col < 0 || row + h > im.height || col + w > im.width) throw RangeError("image crop out of bounds");
    RgbImage out(h, w);
    for (int r = 0; r < h; ++r) {
        std::copy_n(im.pixel(row + r, col), static_cast<std::size_t>(w) * 3, out.pixel(r, 0));
    }
    return out;
}

/// Rounded box average over factor x factor blocks.
inline RgbImage box_downsample(const RgbImage& im, int factor) {
    if (factor < 1 || im.height % factor || im.width % factor) throw ConfigError("box_downsample: indivisible extent");
    RgbImage out(im.height / factor, im.width / factor);
    const int n = factor * factor;
    for (int r = 0; r < out.height; ++r) {
        for (int c = 0; c < out.width; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                int s = 0;
                for (int a = 0; a < factor; ++a)
                    for (int b = 0; b < factor; ++b) s += im.pixel(r * factor + a, c * factor + b)[ch];
                out.pixel(r, c)[ch] = static_cast<std::uint8_t>((s + n / 2) / n);
            }
        }
    }
    return out;
}

/// RGB raster -> float tensor [3, H, W] scaled to [0, 1].
inline Tensor<float> to_tensor(const RgbImage& im) {
    Tensor<float> t({3, im.height, im.width});
    const std::size_t plane = static_cast<std::size_t>(im.height) * im.width;
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t ch = 0; ch < 3; ++ch) t[ch * plane + i] = im.data[i * 3 + ch] * (1.0f / 255.0f);
    return t;
}

}  // namespace razn
