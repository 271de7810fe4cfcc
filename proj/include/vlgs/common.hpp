#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlgs {

// Error categories. The CLI maps them onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

class InvalidState : public Error {
public:
    using Error::Error;
};

class LoadError : public Error {
public:
    using Error::Error;
};

class NumericFailure : public Error {
public:
    using Error::Error;
};

// Dense H x W x C grid of doubles, row-major with channels innermost.
template <class Tag>
class PixelGrid {
public:
    PixelGrid() = default;
    PixelGrid(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          values_(static_cast<std::size_t>(width) * height * channels, fill) {
        if (width < 0 || height < 0 || channels < 0) {
            throw InvalidParameter("pixel grid dimensions must be non-negative");
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const { return values_.empty(); }

    double& at(int x, int y, int c) { return values_[index(x, y, c)]; }
    double at(int x, int y, int c) const { return values_[index(x, y, c)]; }

    double* pixel(int x, int y) { return values_.data() + index(x, y, 0); }
    const double* pixel(int x, int y) const { return values_.data() + index(x, y, 0); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool same_shape(const PixelGrid& other) const {
        return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
    }

    friend bool operator==(const PixelGrid&, const PixelGrid&) = default;

private:
    std::size_t index(int x, int y, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> values_;
};

struct ImageTag {};
struct FeatureTag {};

// RGB image with values in [0,1]; always three channels.
class Image : public PixelGrid<ImageTag> {
public:
    Image() = default;
    Image(int width, int height, double fill = 0.0) : PixelGrid(width, height, 3, fill) {}
};

// Dense per-pixel language features.
using FeatureMap = PixelGrid<FeatureTag>;

}  // namespace vlgs
