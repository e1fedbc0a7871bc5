#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace diffgepci {

/// Planar multi-channel 2D array of 32-bit floats.
///
/// Storage is channel-major: element (c, r, col) lives at
/// `c * rows * cols + r * cols + col`. Target slices have one channel,
/// condition slices carry one channel per echo.
class Image {
public:
    Image() = default;
    Image(std::size_t rows, std::size_t cols, std::size_t channels = 1, float fill = 0.0f)
        : rows_(rows), cols_(cols), channels_(channels), data_(rows * cols * channels, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t pixels() const noexcept { return rows_ * cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    float& at(std::size_t r, std::size_t c, std::size_t ch = 0) { return data_[(ch * rows_ + r) * cols_ + c]; }
    float at(std::size_t r, std::size_t c, std::size_t ch = 0) const { return data_[(ch * rows_ + r) * cols_ + c]; }

    std::span<float> channel(std::size_t ch) { return {data_.data() + ch * pixels(), pixels()}; }
    std::span<const float> channel(std::size_t ch) const { return {data_.data() + ch * pixels(), pixels()}; }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_ && channels_ == other.channels_;
    }

    std::string shape_string() const {
        return std::to_string(channels_) + "x" + std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t channels_ = 0;
    std::vector<float> data_;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
    }
}

inline bool all_finite(const Image& img) {
    for (float v : img.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace diffgepci
