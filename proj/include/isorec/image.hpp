#pragma once

#include <cstddef>
#include <vector>

#include "isorec/common.hpp"

namespace isorec {

// Dense multi-channel 2D image, channel-major (c, y, x), double precision.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<real> v;

    Image() = default;
    Image(int c, int h, int w, real fill = 0)
        : channels(c), height(h), width(w), v(std::size_t(c) * h * w, fill) {}

    std::size_t size() const { return v.size(); }
    std::size_t pixels() const { return std::size_t(height) * width; }

    real& at(int c, int y, int x) { return v[(std::size_t(c) * height + y) * width + x]; }
    real at(int c, int y, int x) const { return v[(std::size_t(c) * height + y) * width + x]; }

    real* plane(int c) { return v.data() + std::size_t(c) * height * width; }
    const real* plane(int c) const { return v.data() + std::size_t(c) * height * width; }

    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": image shapes differ");
}

}  // namespace isorec
