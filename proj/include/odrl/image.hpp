#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "odrl/errors.hpp"

namespace odrl {

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

// Interleaved 8-bit RGB raster, row-major, top-left origin.
struct Frame {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // height * width * 3

    Frame() = default;
    Frame(int h, int w) : height(h), width(w) {
        if (h < 0 || w < 0) throw DimensionError("frame dims must be non-negative");
        pixels.assign(static_cast<std::size_t>(h) * w * 3, 0);
    }

    std::uint8_t* px(int y, int x) {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    const std::uint8_t* px(int y, int x) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    void set(int y, int x, Rgb c) {
        std::uint8_t* p = px(y, x);
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
    }
    Rgb get(int y, int x) const {
        const std::uint8_t* p = px(y, x);
        return {p[0], p[1], p[2]};
    }

    void fill(Rgb c) {
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) set(y, x, c);
    }

    bool operator==(const Frame&) const = default;
};

// Single-channel 8-bit raster (saliency maps, PGM payloads).
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;  // height * width

    GrayImage() = default;
    GrayImage(int h, int w) : height(h), width(w) {
        if (h < 0 || w < 0) throw DimensionError("image dims must be non-negative");
        pixels.assign(static_cast<std::size_t>(h) * w, 0);
    }

    std::uint8_t& at(int y, int x) {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t at(int y, int x) const {
        return pixels[static_cast<std::size_t>(y) * width + x];
    }

    bool operator==(const GrayImage&) const = default;
};

// Axis-aligned pixel rectangle, (x, y) = top-left corner.
struct Box {
    int x = 0, y = 0, w = 0, h = 0;
    bool operator==(const Box&) const = default;
};

// Intersection-over-union of two boxes. Degenerate boxes give 0.
inline double box_iou(const Box& a, const Box& b) {
    const int ix0 = std::max(a.x, b.x);
    const int iy0 = std::max(a.y, b.y);
    const int ix1 = std::min(a.x + a.w, b.x + b.w);
    const int iy1 = std::min(a.y + a.h, b.y + b.h);
    const std::int64_t iw = std::max(0, ix1 - ix0);
    const std::int64_t ih = std::max(0, iy1 - iy0);
    const std::int64_t inter = iw * ih;
    const std::int64_t uni =
        static_cast<std::int64_t>(a.w) * a.h + static_cast<std::int64_t>(b.w) * b.h - inter;
    if (uni <= 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace odrl
