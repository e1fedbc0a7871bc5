#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace diffgepci {

/// Slicing orientation. Axial indexes dimension 0, coronal dimension 1,
/// sagittal dimension 2.
enum class PlaneAxis : int { Axial = 0, Coronal = 1, Sagittal = 2 };

inline constexpr std::array<PlaneAxis, 3> kAllAxes{PlaneAxis::Axial, PlaneAxis::Coronal, PlaneAxis::Sagittal};

inline const char* axis_name(PlaneAxis axis) {
    switch (axis) {
    case PlaneAxis::Axial: return "axial";
    case PlaneAxis::Coronal: return "coronal";
    case PlaneAxis::Sagittal: return "sagittal";
    }
    return "?";
}

inline int axis_dim(PlaneAxis axis) { return static_cast<int>(axis); }

/// Dense 3D grid of Q-channel voxels, C order with the channel index fastest.
class Volume {
public:
    using Dims = std::array<std::size_t, 3>;

    Volume() = default;
    Volume(Dims dims, std::size_t channels = 1, float fill = 0.0f)
        : dims_(dims), channels_(channels), data_(dims[0] * dims[1] * dims[2] * channels, fill) {
        if (channels == 0) throw InvalidArgument("volume: channel count must be >= 1");
    }
    static Volume cube(std::size_t n, std::size_t channels = 1, float fill = 0.0f) { return Volume({n, n, n}, channels, fill); }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t dim(int d) const { return dims_[static_cast<std::size_t>(d)]; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t voxels() const noexcept { return dims_[0] * dims_[1] * dims_[2]; }
    bool is_cube() const noexcept { return dims_[0] == dims_[1] && dims_[1] == dims_[2]; }
    /// Side length of a cubic volume.
    std::size_t side() const {
        if (!is_cube()) throw ShapeMismatch("volume is not cubic: " + shape_string());
        return dims_[0];
    }

    std::size_t offset(std::size_t i, std::size_t j, std::size_t k, std::size_t q = 0) const noexcept {
        return ((i * dims_[1] + j) * dims_[2] + k) * channels_ + q;
    }
    float& at(std::size_t i, std::size_t j, std::size_t k, std::size_t q = 0) { return data_[offset(i, j, k, q)]; }
    float at(std::size_t i, std::size_t j, std::size_t k, std::size_t q = 0) const { return data_[offset(i, j, k, q)]; }

    std::span<float> values() noexcept { return data_; }
    std::span<const float> values() const noexcept { return data_; }

    bool same_shape(const Volume& o) const noexcept { return dims_ == o.dims_ && channels_ == o.channels_; }

    std::string shape_string() const {
        return std::to_string(dims_[0]) + "x" + std::to_string(dims_[1]) + "x" + std::to_string(dims_[2]) + "x" +
               std::to_string(channels_);
    }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    Dims dims_{0, 0, 0};
    std::size_t channels_ = 1;
    std::vector<float> data_;
};

inline void require_same_shape(const Volume& a, const Volume& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeMismatch(std::string(what) + ": shape " + a.shape_string() + " vs " + b.shape_string());
    }
}

/// One 2D section of a volume and where it came from.
struct PlaneSlice {
    PlaneAxis axis = PlaneAxis::Axial;
    std::size_t index = 0;
    Image image;
};

/// In-plane (row, col) dimensions of slices along `axis`.
inline std::array<int, 2> in_plane_dims(PlaneAxis axis) {
    switch (axis) {
    case PlaneAxis::Axial: return {1, 2};
    case PlaneAxis::Coronal: return {0, 2};
    case PlaneAxis::Sagittal: return {0, 1};
    }
    return {1, 2};
}

/// Volume coordinates of in-slice position (r, c) of slice `index` along `axis`.
inline std::array<std::size_t, 3> slice_to_volume(PlaneAxis axis, std::size_t index, std::size_t r, std::size_t c) {
    switch (axis) {
    case PlaneAxis::Axial: return {index, r, c};
    case PlaneAxis::Coronal: return {r, index, c};
    case PlaneAxis::Sagittal: return {r, c, index};
    }
    return {index, r, c};
}

/// Voxel (i, j, k) lands at (j, k) of axial slice i, (i, k) of coronal
/// slice j and (i, j) of sagittal slice k.
inline PlaneSlice extract_slice(const Volume& v, PlaneAxis axis, std::size_t index) {
    const std::size_t count = v.dim(axis_dim(axis));
    if (index >= count) {
        throw IndexOutOfBounds(std::string("extract_slice: ") + axis_name(axis) + " index " + std::to_string(index) +
                               " >= " + std::to_string(count));
    }
    const auto [rd, cd] = in_plane_dims(axis);
    const std::size_t rows = v.dim(rd);
    const std::size_t cols = v.dim(cd);
    const std::size_t q_count = v.channels();
    PlaneSlice out{axis, index, Image(rows, cols, q_count)};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const auto p = slice_to_volume(axis, index, r, c);
            const std::size_t base = v.offset(p[0], p[1], p[2]);
            for (std::size_t q = 0; q < q_count; ++q) out.image.at(r, c, q) = v.values()[base + q];
        }
    }
    return out;
}

/// Stacks slices along `axis`; each index 0..n-1 must appear exactly once.
inline Volume assemble(const std::vector<PlaneSlice>& slices, PlaneAxis axis) {
    if (slices.empty()) throw InvalidArgument("assemble: no slices");
    const Image& first = slices.front().image;
    const std::size_t n = slices.size();
    Volume::Dims dims{};
    dims[static_cast<std::size_t>(axis_dim(axis))] = n;
    const auto [rd, cd] = in_plane_dims(axis);
    dims[static_cast<std::size_t>(rd)] = first.rows();
    dims[static_cast<std::size_t>(cd)] = first.cols();

    Volume out(dims, first.channels());
    std::vector<bool> seen(n, false);
    for (const auto& s : slices) {
        if (s.axis != axis) {
            throw InvalidArgument(std::string("assemble: slice axis ") + axis_name(s.axis) + " does not match " +
                                  axis_name(axis));
        }
        if (s.index >= n) throw IndexOutOfBounds("assemble: slice index " + std::to_string(s.index) + " missing peers");
        if (seen[s.index]) throw InvalidArgument("assemble: duplicate slice index " + std::to_string(s.index));
        seen[s.index] = true;
        require_same_shape(s.image, first, "assemble");
        for (std::size_t r = 0; r < first.rows(); ++r) {
            for (std::size_t c = 0; c < first.cols(); ++c) {
                const auto p = slice_to_volume(axis, s.index, r, c);
                const std::size_t base = out.offset(p[0], p[1], p[2]);
                for (std::size_t q = 0; q < first.channels(); ++q) out.values()[base + q] = s.image.at(r, c, q);
            }
        }
    }
    return out;
}

/// A padded cube together with the placement of the original data.
struct CubePadding {
    Volume volume;
    Volume::Dims offset{};
    Volume::Dims extent{};
};

/// Centers `raw` in an n^3 cube filled with `fill`.
inline CubePadding pad_to_cube(const Volume& raw, std::size_t n, float fill = 0.0f) {
    CubePadding out{Volume::cube(n, raw.channels(), fill), {}, raw.dims()};
    for (std::size_t d = 0; d < 3; ++d) {
        if (raw.dims()[d] > n) {
            throw InvalidArgument("pad_to_cube: dimension " + std::to_string(d) + " of size " +
                                  std::to_string(raw.dims()[d]) + " exceeds N = " + std::to_string(n));
        }
        out.offset[d] = (n - raw.dims()[d]) / 2;
    }
    const auto& rd = raw.dims();
    const std::size_t q_count = raw.channels();
    for (std::size_t i = 0; i < rd[0]; ++i)
        for (std::size_t j = 0; j < rd[1]; ++j)
            for (std::size_t k = 0; k < rd[2]; ++k)
                for (std::size_t q = 0; q < q_count; ++q)
                    out.volume.at(i + out.offset[0], j + out.offset[1], k + out.offset[2], q) = raw.at(i, j, k, q);
    return out;
}

/// Inverse of pad_to_cube given the recorded placement.
inline Volume crop(const Volume& v, const Volume::Dims& offset, const Volume::Dims& extent) {
    for (std::size_t d = 0; d < 3; ++d) {
        if (offset[d] + extent[d] > v.dims()[d]) throw IndexOutOfBounds("crop: region exceeds volume");
    }
    Volume out(extent, v.channels());
    for (std::size_t i = 0; i < extent[0]; ++i)
        for (std::size_t j = 0; j < extent[1]; ++j)
            for (std::size_t k = 0; k < extent[2]; ++k)
                for (std::size_t q = 0; q < v.channels(); ++q)
                    out.at(i, j, k, q) = v.at(i + offset[0], j + offset[1], k + offset[2], q);
    return out;
}

using FusionWeights = std::array<double, 3>;

inline constexpr FusionWeights kUniformFusion{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

inline void validate_fusion_weights(const FusionWeights& w) {
    const double sum = w[0] + w[1] + w[2];
    if (!(std::abs(sum - 1.0) <= 1e-9)) {
        throw InvalidArgument("fusion weights must sum to 1 (got " + std::to_string(sum) + ")");
    }
}

/// Voxelwise weighted sum of the axial, coronal and sagittal estimates.
inline Volume fuse(const Volume& a, const Volume& c, const Volume& s, const FusionWeights& w = kUniformFusion) {
    require_same_shape(a, c, "fuse");
    require_same_shape(a, s, "fuse");
    validate_fusion_weights(w);
    Volume out(a.dims(), a.channels());
    auto o = out.values();
    auto va = a.values();
    auto vc = c.values();
    auto vs = s.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = static_cast<float>(w[0] * va[i] + w[1] * vc[i] + w[2] * vs[i]);
    }
    return out;
}

} // namespace diffgepci
