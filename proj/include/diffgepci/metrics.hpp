#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "volume.hpp"

namespace diffgepci {

/// Voxels to evaluate; true = inside the region of interest.
class Mask {
public:
    Mask() = default;
    Mask(Volume::Dims dims, bool fill) : dims_(dims), bits_(dims[0] * dims[1] * dims[2], fill ? 1 : 0) {}

    const Volume::Dims& dims() const noexcept { return dims_; }
    bool at(std::size_t i, std::size_t j, std::size_t k) const { return bits_[(i * dims_[1] + j) * dims_[2] + k] != 0; }
    void set(std::size_t i, std::size_t j, std::size_t k, bool v) { bits_[(i * dims_[1] + j) * dims_[2] + k] = v ? 1 : 0; }
    bool operator[](std::size_t voxel) const { return bits_[voxel] != 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1})); }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    Volume::Dims dims_{0, 0, 0};
    std::vector<std::uint8_t> bits_;
};

/// Sentinel returned by psnr() when the masked regions are identical.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// Square uniform window used by ssim().
inline constexpr std::size_t kSsimWindow = 7;

namespace detail {

inline void require_metric_inputs(const Volume& ref, const Volume& test, const Mask& mask, double data_range) {
    require_same_shape(ref, test, "metric");
    if (ref.channels() != 1) throw ShapeMismatch("metrics expect single-channel volumes, got " + ref.shape_string());
    if (mask.dims() != ref.dims()) throw ShapeMismatch("mask dimensions do not match volume " + ref.shape_string());
    if (!(data_range > 0.0)) throw InvalidArgument("data_range must be > 0");
}

/// Mask restricted to one slice, laid out like the slice image.
inline std::vector<std::uint8_t> mask_slice(const Mask& mask, PlaneAxis axis, std::size_t index, std::size_t rows,
                                            std::size_t cols) {
    std::vector<std::uint8_t> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const auto p = slice_to_volume(axis, index, r, c);
            out[r * cols + c] = mask.at(p[0], p[1], p[2]) ? 1 : 0;
        }
    }
    return out;
}

inline double psnr_from_mse(double mse, double data_range) {
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(data_range * data_range / mse);
}

struct SsimAccumulator {
    double sum = 0.0;
    std::size_t count = 0;
};

/// Local SSIM at every masked pixel of one slice. Window statistics use
/// only masked pixels inside the window, clipped at the slice border.
inline SsimAccumulator ssim_slice(const Image& ref, const Image& test, const std::vector<std::uint8_t>& mask,
                                  double data_range, std::size_t window) {
    if (window > ref.rows() || window > ref.cols()) {
        throw InvalidArgument("ssim: window " + std::to_string(window) + " larger than slice " + ref.shape_string());
    }
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const long half = static_cast<long>(window / 2);
    const long rows = static_cast<long>(ref.rows());
    const long cols = static_cast<long>(ref.cols());
    SsimAccumulator acc;
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            if (!mask[static_cast<std::size_t>(r * cols + c)]) continue;
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            std::size_t n = 0;
            for (long rr = std::max(0L, r - half); rr <= std::min(rows - 1, r + half); ++rr) {
                for (long cc = std::max(0L, c - half); cc <= std::min(cols - 1, c + half); ++cc) {
                    const auto idx = static_cast<std::size_t>(rr * cols + cc);
                    if (!mask[idx]) continue;
                    const double x = ref.values()[idx];
                    const double y = test.values()[idx];
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                    ++n;
                }
            }
            const double inv = 1.0 / static_cast<double>(n);
            const double mx = sx * inv, my = sy * inv;
            const double vx = sxx * inv - mx * mx;
            const double vy = syy * inv - my * my;
            const double cov = sxy * inv - mx * my;
            acc.sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++acc.count;
        }
    }
    return acc;
}

} // namespace detail

/// Peak signal-to-noise ratio over masked voxels, in dB.
/// Returns kPsnrIdentical (+infinity) when the masked regions are equal.
inline double psnr(const Volume& ref, const Volume& test, const Mask& mask, double data_range) {
    detail::require_metric_inputs(ref, test, mask, data_range);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < ref.voxels(); ++v) {
        if (!mask[v]) continue;
        const double d = static_cast<double>(ref.values()[v]) - test.values()[v];
        sum += d * d;
        ++n;
    }
    if (n == 0) throw InvalidArgument("psnr: empty mask");
    return detail::psnr_from_mse(sum / static_cast<double>(n), data_range);
}

/// Mean local SSIM over masked voxels, windows taken on axial slices.
inline double ssim(const Volume& ref, const Volume& test, const Mask& mask, double data_range,
                   std::size_t window = kSsimWindow) {
    detail::require_metric_inputs(ref, test, mask, data_range);
    if (window == 0 || window % 2 == 0) throw InvalidArgument("ssim: window must be odd");
    detail::SsimAccumulator total;
    for (std::size_t i = 0; i < ref.dim(0); ++i) {
        const auto a = extract_slice(ref, PlaneAxis::Axial, i);
        const auto b = extract_slice(test, PlaneAxis::Axial, i);
        const auto m = detail::mask_slice(mask, PlaneAxis::Axial, i, a.image.rows(), a.image.cols());
        const auto acc = detail::ssim_slice(a.image, b.image, m, data_range, window);
        total.sum += acc.sum;
        total.count += acc.count;
    }
    if (total.count == 0) throw InvalidArgument("ssim: empty mask");
    return total.sum / static_cast<double>(total.count);
}

/// Per-plane PSNR: PSNR of every slice along `axis` with a nonempty mask,
/// averaged over those slices. Any identical slice makes the average +infinity.
inline double plane_psnr(const Volume& ref, const Volume& test, const Mask& mask, double data_range, PlaneAxis axis) {
    detail::require_metric_inputs(ref, test, mask, data_range);
    double sum = 0.0;
    std::size_t slices = 0;
    for (std::size_t i = 0; i < ref.dim(axis_dim(axis)); ++i) {
        const auto a = extract_slice(ref, axis, i);
        const auto b = extract_slice(test, axis, i);
        const auto m = detail::mask_slice(mask, axis, i, a.image.rows(), a.image.cols());
        double se = 0.0;
        std::size_t n = 0;
        for (std::size_t p = 0; p < m.size(); ++p) {
            if (!m[p]) continue;
            const double d = static_cast<double>(a.image.values()[p]) - b.image.values()[p];
            se += d * d;
            ++n;
        }
        if (n == 0) continue;
        sum += detail::psnr_from_mse(se / static_cast<double>(n), data_range);
        ++slices;
    }
    if (slices == 0) throw InvalidArgument("plane_psnr: empty mask");
    return sum / static_cast<double>(slices);
}

/// Per-plane SSIM: mean local SSIM of each slice along `axis`, averaged over slices with a nonempty mask.
inline double plane_ssim(const Volume& ref, const Volume& test, const Mask& mask, double data_range, PlaneAxis axis,
                         std::size_t window = kSsimWindow) {
    detail::require_metric_inputs(ref, test, mask, data_range);
    double sum = 0.0;
    std::size_t slices = 0;
    for (std::size_t i = 0; i < ref.dim(axis_dim(axis)); ++i) {
        const auto a = extract_slice(ref, axis, i);
        const auto b = extract_slice(test, axis, i);
        const auto m = detail::mask_slice(mask, axis, i, a.image.rows(), a.image.cols());
        const auto acc = detail::ssim_slice(a.image, b.image, m, data_range, window);
        if (acc.count == 0) continue;
        sum += acc.sum / static_cast<double>(acc.count);
        ++slices;
    }
    if (slices == 0) throw InvalidArgument("plane_ssim: empty mask");
    return sum / static_cast<double>(slices);
}

/// Voxels whose channel-mean intensity is at or above the given quantile
/// (linear interpolation between order statistics). A constant volume
/// yields an all-true mask.
inline Mask threshold_mask(const Volume& v, double quantile) {
    if (!(quantile >= 0.0 && quantile < 1.0)) throw InvalidArgument("threshold_mask: quantile must lie in [0, 1)");
    const std::size_t q_count = v.channels();
    std::vector<double> level(v.voxels());
    for (std::size_t i = 0; i < level.size(); ++i) {
        double s = 0.0;
        for (std::size_t q = 0; q < q_count; ++q) s += v.values()[i * q_count + q];
        level[i] = s / static_cast<double>(q_count);
    }
    std::vector<double> sorted = level;
    std::sort(sorted.begin(), sorted.end());
    const double pos = quantile * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double threshold = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);

    Mask mask(v.dims(), false);
    const auto& d = v.dims();
    for (std::size_t i = 0; i < d[0]; ++i)
        for (std::size_t j = 0; j < d[1]; ++j)
            for (std::size_t k = 0; k < d[2]; ++k) mask.set(i, j, k, level[(i * d[1] + j) * d[2] + k] >= threshold);
    return mask;
}

/// Quantile at which threshold_mask() first excludes the voxels sharing the
/// minimum channel-mean intensity (the background level of a phantom).
/// Returns 0 for a constant volume.
inline double background_quantile(const Volume& v) {
    if (v.voxels() < 2) return 0.0;
    const std::size_t q_count = v.channels();
    std::vector<double> level(v.voxels());
    for (std::size_t i = 0; i < level.size(); ++i) {
        double s = 0.0;
        for (std::size_t q = 0; q < q_count; ++q) s += v.values()[i * q_count + q];
        level[i] = s / static_cast<double>(q_count);
    }
    const double lo = *std::min_element(level.begin(), level.end());
    const auto at_min = static_cast<std::size_t>(std::count(level.begin(), level.end(), lo));
    if (at_min == level.size()) return 0.0;
    return static_cast<double>(at_min) / static_cast<double>(level.size() - 1);
}

/// Max minus min of `v` over masked voxels.
inline double masked_range(const Volume& v, const Mask& mask) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < v.voxels(); ++i) {
        if (!mask[i]) continue;
        lo = std::min(lo, static_cast<double>(v.values()[i]));
        hi = std::max(hi, static_cast<double>(v.values()[i]));
    }
    if (lo > hi) throw InvalidArgument("masked_range: empty mask");
    return hi - lo;
}

struct MetricRecord {
    std::string task;
    PlaneAxis plane = PlaneAxis::Axial;
    std::string metric;
    double value = 0.0;
};

/// PSNR and SSIM for each of the three planes (six records).
inline std::vector<MetricRecord> evaluate_planes(const std::string& task, const Volume& ref, const Volume& test,
                                                 const Mask& mask, double data_range) {
    std::vector<MetricRecord> out;
    for (PlaneAxis axis : kAllAxes) {
        out.push_back({task, axis, "psnr", plane_psnr(ref, test, mask, data_range, axis)});
        out.push_back({task, axis, "ssim", plane_ssim(ref, test, mask, data_range, axis)});
    }
    return out;
}

/// Tab-separated "task plane metric value"; +infinity is written as "inf".
inline std::string format_record(const MetricRecord& r) {
    std::ostringstream os;
    os << r.task << '\t' << axis_name(r.plane) << '\t' << r.metric << '\t';
    if (std::isinf(r.value)) {
        os << (r.value > 0 ? "inf" : "-inf");
    } else {
        os.precision(17);
        os << r.value;
    }
    return os.str();
}

} // namespace diffgepci
