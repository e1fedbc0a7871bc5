#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "denoiser.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "volume.hpp"

namespace diffgepci {

struct PipelineConfig {
    int steps = 1000;
    int refine_steps = 10;
    /// Expected volume side and condition channel count; 0 accepts whatever the condition volume has.
    std::size_t side = 0;
    std::size_t condition_channels = 0;
    FusionWeights fusion_weights = kUniformFusion;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    void validate(const NoiseSchedule& schedule) const {
        if (steps != schedule.steps()) {
            throw InvalidArgument("pipeline: configured T = " + std::to_string(steps) + " but schedule has " +
                                  std::to_string(schedule.steps()) + " steps");
        }
        if (refine_steps < 1 || refine_steps > steps) {
            throw InvalidArgument("pipeline: refine steps must lie in [1, T], got " + std::to_string(refine_steps));
        }
        validate_fusion_weights(fusion_weights);
    }
};

/// Everything the two-stage synthesis produces.
struct SynthesisResult {
    Volume initial;            // slice-by-slice axial synthesis
    Volume refined_coronal;
    Volume refined_sagittal;
    Volume final;              // fusion of the three above
};

namespace detail {

// Stream phases; refinement streams are further separated by axis.
inline constexpr std::uint64_t kInitialPhase = 0xA1;
inline constexpr std::uint64_t kRefinePhase = 0xB0;

inline void require_condition_matches(const Volume& target_like, const Volume& y) {
    if (target_like.dims() != y.dims()) {
        throw ShapeMismatch("condition volume " + y.shape_string() + " does not match " + target_like.shape_string());
    }
}

inline void require_finite(const Image& x, PlaneAxis axis, std::size_t index, int t, const char* stage) {
    if (!all_finite(x)) {
        throw NumericalError(std::string(stage) + ": non-finite sample in " + axis_name(axis) + " slice " +
                             std::to_string(index) + " at t = " + std::to_string(t));
    }
}

/// Ancestral sampling from x_start at step `from` down to x_0.
inline Image run_reverse_chain(Image x, int from, const Image& y, const Denoiser& model, const NoiseSchedule& schedule,
                               Rng& rng, PlaneAxis axis, std::size_t index, const char* stage) {
    for (int t = from; t >= 1; --t) {
        const Image eps_hat = model.predict_noise(x, t, y);
        const Image z = standard_normal_like(x, rng);
        x = reverse_step(x, t, eps_hat, z, schedule);
        require_finite(x, axis, index, t - 1, stage);
    }
    return x;
}

} // namespace detail

/// Slice-by-slice axial synthesis: each axial slice starts from pure noise
/// at t = T and is denoised to t = 0 with its own condition slice.
///
/// Slice i draws from the stream (seed, initial phase, i), so the result is
/// identical for any worker count.
inline Volume initial_synthesis(const Volume& y, const Denoiser& model, const NoiseSchedule& schedule, std::uint64_t seed,
                                std::size_t workers = 1) {
    const std::size_t n = y.dim(axis_dim(PlaneAxis::Axial));
    std::vector<PlaneSlice> slices(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const PlaneSlice cond = extract_slice(y, PlaneAxis::Axial, i);
        Rng rng = make_stream(seed, detail::kInitialPhase, i);
        Image x = standard_normal(cond.image.rows(), cond.image.cols(), 1, rng);
        x = detail::run_reverse_chain(std::move(x), schedule.steps(), cond.image, model, schedule, rng, PlaneAxis::Axial, i,
                                      "initial synthesis");
        slices[i] = {PlaneAxis::Axial, i, std::move(x)};
    });
    return assemble(slices, PlaneAxis::Axial);
}

/// Re-noises every slice of `x_init` along `axis` to step k with the
/// closed-form marginal and denoises it back to t = 0.
inline Volume refine_plane(const Volume& x_init, const Volume& y, PlaneAxis axis, int k, const Denoiser& model,
                           const NoiseSchedule& schedule, std::uint64_t seed, std::size_t workers = 1) {
    if (k < 1 || k > schedule.steps()) {
        throw InvalidArgument("refine_plane: k must lie in [1, T], got " + std::to_string(k));
    }
    if (x_init.channels() != 1) throw ShapeMismatch("refine_plane: target volume must have one channel");
    detail::require_condition_matches(x_init, y);
    const std::size_t n = x_init.dim(axis_dim(axis));
    std::vector<PlaneSlice> slices(n);
    parallel_for(n, workers, [&](std::size_t i) {
        const PlaneSlice start = extract_slice(x_init, axis, i);
        const PlaneSlice cond = extract_slice(y, axis, i);
        Rng rng = make_stream(seed, detail::kRefinePhase + static_cast<std::uint64_t>(axis_dim(axis)), i);
        const Image eps = standard_normal_like(start.image, rng);
        Image x = forward_diffuse(start.image, k, eps, schedule);
        x = detail::run_reverse_chain(std::move(x), k, cond.image, model, schedule, rng, axis, i, "refinement");
        slices[i] = {axis, i, std::move(x)};
    });
    return assemble(slices, axis);
}

/// Refinement and fusion stage applied to an existing axial estimate.
///
/// The axial estimate enters the fusion unrefined.
inline SynthesisResult refine_and_fuse(Volume initial, const Volume& y, const Denoiser& model, const NoiseSchedule& schedule,
                                       const PipelineConfig& config) {
    config.validate(schedule);
    SynthesisResult r;
    r.refined_coronal = refine_plane(initial, y, PlaneAxis::Coronal, config.refine_steps, model, schedule, config.seed,
                                     config.workers);
    r.refined_sagittal = refine_plane(initial, y, PlaneAxis::Sagittal, config.refine_steps, model, schedule, config.seed,
                                      config.workers);
    r.final = fuse(initial, r.refined_coronal, r.refined_sagittal, config.fusion_weights);
    r.initial = std::move(initial);
    return r;
}

/// Full two-stage synthesis: axial initial volume, coronal and sagittal
/// refinement, weighted fusion.
inline SynthesisResult diffgepci(const Volume& y, const Denoiser& model, const NoiseSchedule& schedule,
                                 const PipelineConfig& config) {
    config.validate(schedule);
    if (!y.is_cube()) throw ShapeMismatch("diffgepci: condition volume must be padded to a cube, got " + y.shape_string());
    if (config.side != 0 && y.side() != config.side) {
        throw ShapeMismatch("diffgepci: condition side " + std::to_string(y.side()) + " but config expects " +
                            std::to_string(config.side));
    }
    if (config.condition_channels != 0 && y.channels() != config.condition_channels) {
        throw ShapeMismatch("diffgepci: condition has " + std::to_string(y.channels()) + " channels, config expects " +
                            std::to_string(config.condition_channels));
    }
    Volume initial = initial_synthesis(y, model, schedule, config.seed, config.workers);
    return refine_and_fuse(std::move(initial), y, model, schedule, config);
}

} // namespace diffgepci
