#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cec/error.hpp"

namespace cec {

struct Rgb {
    std::uint8_t r = 0;
    std::uint8_t g = 0;
    std::uint8_t b = 0;

    bool operator==(const Rgb&) const = default;
};

// Decoded 8-bit RGB image, row-major, tightly packed.
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Raster() = default;
    Raster(int w, int h, Rgb fill = {}) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3) {
        for (std::size_t i = 0; i < rgb.size(); i += 3) {
            rgb[i] = fill.r;
            rgb[i + 1] = fill.g;
            rgb[i + 2] = fill.b;
        }
    }

    bool empty() const { return width <= 0 || height <= 0; }

    Rgb at(int x, int y) const {
        const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
    void set(int x, int y, Rgb c) {
        const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
        rgb[i] = c.r;
        rgb[i + 1] = c.g;
        rgb[i + 2] = c.b;
    }

    bool operator==(const Raster&) const = default;
};

namespace detail {

inline cv::Mat to_bgr_mat(const Raster& r) {
    cv::Mat rgb(r.height, r.width, CV_8UC3, const_cast<std::uint8_t*>(r.rgb.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

inline Raster from_bgr_mat(const cv::Mat& bgr) {
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    Raster out;
    out.width = rgb.cols;
    out.height = rgb.rows;
    out.rgb.resize(static_cast<std::size_t>(rgb.cols) * rgb.rows * 3);
    for (int y = 0; y < rgb.rows; ++y) {
        std::copy_n(rgb.ptr<std::uint8_t>(y), static_cast<std::size_t>(rgb.cols) * 3,
                    out.rgb.data() + static_cast<std::size_t>(y) * rgb.cols * 3);
    }
    return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DecodeError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Raster decode_image(std::span<const std::uint8_t> bytes) {
    if (bytes.empty()) throw DecodeError("empty image buffer");
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat bgr;
    try {
        bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
    } catch (const cv::Exception& ex) {
        throw DecodeError(std::string("image decode failed: ") + ex.what());
    }
    if (bgr.empty() || bgr.cols <= 0 || bgr.rows <= 0) throw DecodeError("image bytes are not a decodable image");
    return detail::from_bgr_mat(bgr);
}

inline Raster load_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_image(bytes);
    } catch (const DecodeError& ex) {
        throw DecodeError(path.string() + ": " + ex.what());
    }
}

// Lossless encoding, used when persisting composites.
inline std::vector<std::uint8_t> encode_png(const Raster& r) {
    if (r.empty()) throw DecodeError("cannot encode an empty raster");
    std::vector<std::uint8_t> out;
    cv::imencode(".png", detail::to_bgr_mat(r), out);
    return out;
}

inline void save_png(const Raster& r, const std::filesystem::path& path) {
    const auto bytes = encode_png(r);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Raster resize(const Raster& r, int width, int height) {
    if (width == r.width && height == r.height) return r;
    const bool shrinking = width < r.width || height < r.height;
    cv::Mat out;
    cv::resize(detail::to_bgr_mat(r), out, cv::Size(width, height), 0, 0,
               shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
    return detail::from_bgr_mat(out);
}

}  // namespace cec
