#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "error.hpp"
#include "image.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "volume.hpp"

namespace diffgepci {

/// Conditional noise predictor eps(x_t, t, y).
///
/// `y` carries one channel per echo and the same rows/cols as `x_t`.
/// Implementations must be deterministic and safe to call concurrently.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Image predict_noise(const Image& x_t, int t, const Image& y) const = 0;
};

/// Target model x0 | y ~ N(m(y), s^2) independently per pixel, where m is
/// a function of the condition channels at that pixel.
struct GaussianTargetModel {
    std::function<double(std::span<const float>)> mean_map;
    double s = 1.0;

    Image mean_image(const Image& y) const {
        if (!mean_map) throw ModelError("gaussian target model has no mean map");
        Image m(y.rows(), y.cols(), 1);
        std::vector<float> echoes(y.channels());
        for (std::size_t p = 0; p < y.pixels(); ++p) {
            for (std::size_t q = 0; q < y.channels(); ++q) echoes[q] = y.channel(q)[p];
            m.values()[p] = static_cast<float>(mean_map(echoes));
        }
        return m;
    }

    /// Volume of conditional means, voxel by voxel.
    Volume mean_volume(const Volume& y) const {
        Volume m(y.dims(), 1);
        const std::size_t q_count = y.channels();
        for (std::size_t v = 0; v < m.voxels(); ++v) {
            m.values()[v] = static_cast<float>(mean_map(y.values().subspan(v * q_count, q_count)));
        }
        return m;
    }
};

/// Exact MMSE noise predictor for a GaussianTargetModel.
///
/// E[x0 | x_t, y] = m + sqrt(abar) s^2 / (abar s^2 + 1 - abar) * (x_t - sqrt(abar) m)
/// and the prediction is (x_t - sqrt(abar) E[x0 | x_t, y]) / sqrt(1 - abar).
class AnalyticDenoiser final : public Denoiser {
public:
    AnalyticDenoiser(GaussianTargetModel model, NoiseSchedule schedule)
        : model_(std::move(model)), schedule_(std::move(schedule)) {
        if (!(model_.s > 0.0)) throw InvalidArgument("gaussian target model needs s > 0");
        if (!model_.mean_map) throw ModelError("gaussian target model has no mean map");
    }

    Image predict_noise(const Image& x_t, int t, const Image& y) const override {
        schedule_.require_step(t, 1);
        check_shapes(x_t, y);
        const Image m = model_.mean_image(y);
        const double ab = schedule_.alpha_bar(t);
        const double root_ab = std::sqrt(ab);
        const double s2 = model_.s * model_.s;
        const double gain = root_ab * s2 / (ab * s2 + 1.0 - ab);
        const double inv_noise = 1.0 / std::sqrt(1.0 - ab);
        Image out(x_t.rows(), x_t.cols(), 1);
        for (std::size_t p = 0; p < out.size(); ++p) {
            const double x = x_t.values()[p];
            const double mean = m.values()[p];
            const double x0_hat = mean + gain * (x - root_ab * mean);
            out.values()[p] = static_cast<float>((x - root_ab * x0_hat) * inv_noise);
        }
        return out;
    }

    const GaussianTargetModel& model() const noexcept { return model_; }

private:
    static void check_shapes(const Image& x_t, const Image& y) {
        if (x_t.channels() != 1 || y.rows() != x_t.rows() || y.cols() != x_t.cols() || y.channels() == 0) {
            throw ShapeMismatch("predict_noise: x_t " + x_t.shape_string() + " vs condition " + y.shape_string());
        }
    }

    GaussianTargetModel model_;
    NoiseSchedule schedule_;
};

/// Forwards to another denoiser and counts invocations.
class CountingDenoiser final : public Denoiser {
public:
    explicit CountingDenoiser(const Denoiser& inner) : inner_(inner) {}

    Image predict_noise(const Image& x_t, int t, const Image& y) const override {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return inner_.predict_noise(x_t, t, y);
    }

    std::size_t calls() const noexcept { return calls_.load(); }
    void reset() noexcept { calls_.store(0); }

private:
    const Denoiser& inner_;
    mutable std::atomic<std::size_t> calls_{0};
};

/// Forwards to another denoiser, clamping the implied clean-image estimate
/// x0 = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t) to [lo, hi] and
/// returning the noise consistent with the clamped estimate.
class ClampedDenoiser final : public Denoiser {
public:
    ClampedDenoiser(const Denoiser& inner, NoiseSchedule schedule, double lo = -1.0, double hi = 1.0)
        : inner_(inner), schedule_(std::move(schedule)), lo_(lo), hi_(hi) {
        if (!(lo < hi)) throw InvalidArgument("clamped denoiser: need lo < hi");
    }

    Image predict_noise(const Image& x_t, int t, const Image& y) const override {
        Image eps = inner_.predict_noise(x_t, t, y);
        const double ab = schedule_.alpha_bar(t);
        const double root_ab = std::sqrt(ab);
        const double root_noise = std::sqrt(1.0 - ab);
        for (std::size_t p = 0; p < eps.size(); ++p) {
            const double x = x_t.values()[p];
            const double x0 = std::clamp((x - root_noise * eps.values()[p]) / root_ab, lo_, hi_);
            eps.values()[p] = static_cast<float>((x - root_ab * x0) / root_noise);
        }
        return eps;
    }

private:
    const Denoiser& inner_;
    NoiseSchedule schedule_;
    double lo_;
    double hi_;
};

/// Clean target slice with its condition slice.
struct TrainingPair {
    Image x0;
    Image y;
    PlaneAxis axis = PlaneAxis::Axial;
};

/// One draw of (t, eps) and the resulting noisy input.
struct NoisyExample {
    int t = 1;
    Image eps;
    Image x_t;
};

/// t uniform on [1, T], eps standard normal, x_t by the closed-form marginal.
inline NoisyExample draw_noisy_example(const TrainingPair& pair, const NoiseSchedule& schedule, Rng& rng) {
    std::uniform_int_distribution<int> pick_t(1, schedule.steps());
    NoisyExample ex;
    ex.t = pick_t(rng);
    ex.eps = standard_normal_like(pair.x0, rng);
    ex.x_t = forward_diffuse(pair.x0, ex.t, ex.eps, schedule);
    return ex;
}

inline double squared_error(const Image& a, const Image& b) {
    require_same_shape(a, b, "squared_error");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.values()[i]) - b.values()[i];
        sum += d * d;
    }
    return sum;
}

/// Batch mean of ||eps_hat(x_t, t, y) - eps||^2, one (t, eps) draw per item.
inline double training_loss(std::span<const TrainingPair> batch, const Denoiser& model, const NoiseSchedule& schedule,
                            Rng& rng) {
    if (batch.empty()) throw InvalidArgument("training_loss: empty batch");
    double total = 0.0;
    for (const auto& pair : batch) {
        const NoisyExample ex = draw_noisy_example(pair, schedule, rng);
        total += squared_error(model.predict_noise(ex.x_t, ex.t, pair.y), ex.eps);
    }
    return total / static_cast<double>(batch.size());
}

/// Min-max scales every condition channel of `y` to [0, 1] over the whole
/// volume. Constant channels map to 0.
inline Volume normalize_condition_channels(const Volume& y) {
    const std::size_t q_count = y.channels();
    std::vector<float> lo(q_count, std::numeric_limits<float>::infinity());
    std::vector<float> hi(q_count, -std::numeric_limits<float>::infinity());
    auto src = y.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const std::size_t q = i % q_count;
        lo[q] = std::min(lo[q], src[i]);
        hi[q] = std::max(hi[q], src[i]);
    }
    Volume out(y.dims(), q_count);
    auto dst = out.values();
    for (std::size_t i = 0; i < src.size(); ++i) {
        const std::size_t q = i % q_count;
        const float range = hi[q] - lo[q];
        dst[i] = range > 0.0f ? (src[i] - lo[q]) / range : 0.0f;
    }
    return out;
}

/// Every slice of all three orientations of a (target, condition) pair.
inline std::vector<TrainingPair> tri_plane_pairs(const Volume& target, const Volume& condition) {
    if (target.dims() != condition.dims() || target.channels() != 1) {
        throw ShapeMismatch("tri_plane_pairs: target " + target.shape_string() + " vs condition " +
                            condition.shape_string());
    }
    std::vector<TrainingPair> out;
    for (PlaneAxis axis : kAllAxes) {
        const std::size_t n = target.dim(axis_dim(axis));
        for (std::size_t i = 0; i < n; ++i) {
            out.push_back({extract_slice(target, axis, i).image, extract_slice(condition, axis, i).image, axis});
        }
    }
    return out;
}

} // namespace diffgepci
