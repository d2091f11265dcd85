#pragma once

// Composite image for single-image backends: the news image and one evidence
// image, each framed in its own border color, stacked along the axis whose
// canvas is closest to square.

#include <algorithm>
#include <cstdint>
#include <span>

#include "cec/error.hpp"
#include "cec/raster.hpp"

namespace cec {

struct BorderSpec {
    Rgb news_color{255, 0, 0};
    Rgb evidence_color{0, 0, 255};
    int thickness_px = 5;

    void validate() const {
        if (news_color == evidence_color) throw ConfigError("border colors for news and evidence must differ");
        if (thickness_px < 1) throw ConfigError("border thickness must be >= 1 px");
    }
};

enum class Orientation { horizontal, vertical };

inline constexpr std::string_view to_string(Orientation o) {
    return o == Orientation::horizontal ? "horizontal" : "vertical";
}

struct Size {
    int width = 0;
    int height = 0;
    bool operator==(const Size&) const = default;
};

struct Rect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
    bool operator==(const Rect&) const = default;
};

struct CompositeImage {
    Raster pixels;
    Orientation orientation = Orientation::horizontal;
    Rect news_region;      // image content only, borders excluded
    Rect evidence_region;  // image content only, borders excluded
};

namespace detail {

inline void require_positive(Size s, const char* what) {
    if (s.width <= 0 || s.height <= 0) throw ZeroDimension(std::string(what) + " has a non-positive dimension");
}

// round(num / den) for positive integers, never below 1.
inline int rounded_ratio(std::int64_t num, std::int64_t den) {
    return static_cast<int>(std::max<std::int64_t>(1, (2 * num + den) / (2 * den)));
}

// Aspect distance max(W,H)/min(W,H) is compared exactly via cross-multiplication.
// Returns <0, 0, >0 like a three-way compare of dist(a) against dist(b).
inline int compare_aspect_distance(Size a, Size b) {
    const std::int64_t a_hi = std::max(a.width, a.height), a_lo = std::min(a.width, a.height);
    const std::int64_t b_hi = std::max(b.width, b.height), b_lo = std::min(b.width, b.height);
    const std::int64_t lhs = a_hi * b_lo;
    const std::int64_t rhs = b_hi * a_lo;
    return lhs < rhs ? -1 : (lhs > rhs ? 1 : 0);
}

}  // namespace detail

// Evidence size after aspect-preserving scaling so its shared edge matches the
// news image: heights match when stacking horizontally, widths when vertically.
inline Size scaled_evidence_size(Size news, Size evidence, Orientation o) {
    detail::require_positive(news, "news image");
    detail::require_positive(evidence, "evidence image");
    if (o == Orientation::horizontal)
        return {detail::rounded_ratio(std::int64_t{evidence.width} * news.height, evidence.height), news.height};
    return {news.width, detail::rounded_ratio(std::int64_t{evidence.height} * news.width, evidence.width)};
}

// Canvas size of the stacked pair, borders excluded.
inline Size stacked_canvas_size(Size news, Size evidence, Orientation o) {
    const Size ev = scaled_evidence_size(news, evidence, o);
    if (o == Orientation::horizontal) return {news.width + ev.width, std::max(news.height, ev.height)};
    return {std::max(news.width, ev.width), news.height + ev.height};
}

inline double aspect_distance(Size s) {
    const double r = static_cast<double>(s.width) / s.height;
    return std::max(r, 1.0 / r);
}

// Horizontal wins ties.
inline Orientation choose_orientation(Size news, Size evidence) {
    const Size h = stacked_canvas_size(news, evidence, Orientation::horizontal);
    const Size v = stacked_canvas_size(news, evidence, Orientation::vertical);
    return detail::compare_aspect_distance(v, h) < 0 ? Orientation::vertical : Orientation::horizontal;
}

inline CompositeImage compose(const Raster& news, const Raster& evidence, const BorderSpec& spec) {
    spec.validate();
    const Size news_size{news.width, news.height};
    const Size ev_size{evidence.width, evidence.height};
    detail::require_positive(news_size, "news image");
    detail::require_positive(ev_size, "evidence image");

    const Orientation o = choose_orientation(news_size, ev_size);
    const Size ev_scaled = scaled_evidence_size(news_size, ev_size, o);
    const Raster ev = resize(evidence, ev_scaled.width, ev_scaled.height);

    const int t = spec.thickness_px;
    const Size news_block{news.width + 2 * t, news.height + 2 * t};
    const Size ev_block{ev.width + 2 * t, ev.height + 2 * t};

    CompositeImage out;
    out.orientation = o;
    Size canvas;
    int ev_block_x = 0, ev_block_y = 0;
    if (o == Orientation::horizontal) {
        canvas = {news_block.width + ev_block.width, std::max(news_block.height, ev_block.height)};
        ev_block_x = news_block.width;
    } else {
        canvas = {std::max(news_block.width, ev_block.width), news_block.height + ev_block.height};
        ev_block_y = news_block.height;
    }
    out.pixels = Raster(canvas.width, canvas.height);
    out.news_region = {t, t, news.width, news.height};
    out.evidence_region = {ev_block_x + t, ev_block_y + t, ev.width, ev.height};

    auto paint_block = [&](const Raster& src, Rect region, Rgb border) {
        for (int y = region.y - t; y < region.y + region.height + t; ++y) {
            for (int x = region.x - t; x < region.x + region.width + t; ++x) {
                const bool inside = x >= region.x && x < region.x + region.width && y >= region.y &&
                                    y < region.y + region.height;
                out.pixels.set(x, y, inside ? src.at(x - region.x, y - region.y) : border);
            }
        }
    };
    paint_block(news, out.news_region, spec.news_color);
    paint_block(ev, out.evidence_region, spec.evidence_color);
    return out;
}

inline CompositeImage compose(std::span<const std::uint8_t> news_bytes, std::span<const std::uint8_t> evidence_bytes,
                              const BorderSpec& spec) {
    return compose(decode_image(news_bytes), decode_image(evidence_bytes), spec);
}

}  // namespace cec
