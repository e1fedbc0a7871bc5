#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace diffgepci {

/// Variance schedule of the diffusion process.
///
/// Arrays are indexed by time step t = 0..T. Index 0 holds the clean-data
/// convention (alpha_bar = 1, beta = 0); the forward process occupies
/// t = 1..T. Scalars are kept in double precision since the cumulative
/// product falls to ~4e-5 at T = 1000 on the default schedule.
class NoiseSchedule {
public:
    /// Linear betas from `beta_start` (t = 1) to `beta_end` (t = T).
    static NoiseSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 0.02) {
        if (steps < 1) throw InvalidArgument("schedule: step count must be >= 1, got " + std::to_string(steps));
        if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
            throw InvalidArgument("schedule: need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) +
                                  ", " + std::to_string(beta_end));
        }
        std::vector<double> betas(static_cast<std::size_t>(steps) + 1, 0.0);
        for (int t = 1; t <= steps; ++t) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
            betas[t] = beta_start + (beta_end - beta_start) * frac;
        }
        return NoiseSchedule(std::move(betas));
    }

    /// Schedule from explicit betas for t = 1..T.
    static NoiseSchedule from_betas(const std::vector<double>& betas_1_to_T) {
        if (betas_1_to_T.empty()) throw InvalidArgument("schedule: empty beta list");
        std::vector<double> betas{0.0};
        for (double b : betas_1_to_T) {
            if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("schedule: beta outside (0, 1): " + std::to_string(b));
            betas.push_back(b);
        }
        return NoiseSchedule(std::move(betas));
    }

    int steps() const noexcept { return static_cast<int>(betas_.size()) - 1; }

    double beta(int t) const { return betas_[checked(t, 1)]; }
    double alpha(int t) const { return alphas_[checked(t, 1)]; }
    double alpha_bar(int t) const { return alpha_bars_[checked(t, 0)]; }
    double posterior_variance(int t) const { return posterior_vars_[checked(t, 1)]; }

    void require_step(int t, int lowest) const { (void)checked(t, lowest); }

private:
    explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
        const std::size_t n = betas_.size();
        alphas_.assign(n, 1.0);
        alpha_bars_.assign(n, 1.0);
        posterior_vars_.assign(n, 0.0);
        for (std::size_t t = 1; t < n; ++t) {
            alphas_[t] = 1.0 - betas_[t];
            alpha_bars_[t] = alpha_bars_[t - 1] * alphas_[t];
            posterior_vars_[t] = (1.0 - alpha_bars_[t - 1]) / (1.0 - alpha_bars_[t]) * betas_[t];
        }
    }

    std::size_t checked(int t, int lowest) const {
        if (t < lowest || t > steps()) {
            throw StepOutOfRange("time step " + std::to_string(t) + " outside [" + std::to_string(lowest) + ", " +
                                 std::to_string(steps()) + "]");
        }
        return static_cast<std::size_t>(t);
    }

    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
    std::vector<double> posterior_vars_;
};

/// Standard deviation of the reverse transition, sqrt((1 - abar_{t-1}) / (1 - abar_t) * beta_t).
inline double posterior_std(int t, const NoiseSchedule& schedule) {
    return std::sqrt(schedule.posterior_variance(t));
}

/// Closed-form jump to step t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Image forward_diffuse(const Image& x0, int t, const Image& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "forward_diffuse");
    const double ab = schedule.alpha_bar(t);
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    Image out(x0.rows(), x0.cols(), x0.channels());
    auto o = out.values();
    auto a = x0.values();
    auto e = eps.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(signal * a[i] + noise * e[i]);
    return out;
}

/// One forward Markov step: sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) z.
inline Image transition_step(const Image& x_prev, int t, const Image& z, const NoiseSchedule& schedule) {
    require_same_shape(x_prev, z, "transition_step");
    const double b = schedule.beta(t);
    const double keep = std::sqrt(1.0 - b);
    const double noise = std::sqrt(b);
    Image out(x_prev.rows(), x_prev.cols(), x_prev.channels());
    auto o = out.values();
    auto a = x_prev.values();
    auto e = z.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(keep * a[i] + noise * e[i]);
    return out;
}

/// Ancestral sampling step from x_t to x_{t-1} given a noise estimate.
///
/// The first summand is the reverse-process mean; at t = 1 the posterior
/// variance vanishes and `z` has no influence.
inline Image reverse_step(const Image& x_t, int t, const Image& eps_hat, const Image& z, const NoiseSchedule& schedule) {
    require_same_shape(x_t, eps_hat, "reverse_step (eps_hat)");
    require_same_shape(x_t, z, "reverse_step (z)");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
    const double eps_coeff = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double sigma = posterior_std(t, schedule);
    Image out(x_t.rows(), x_t.cols(), x_t.channels());
    auto o = out.values();
    auto x = x_t.values();
    auto e = eps_hat.values();
    auto n = z.values();
    for (std::size_t i = 0; i < o.size(); ++i) {
        const double mean = inv_sqrt_alpha * (x[i] - eps_coeff * e[i]);
        o[i] = static_cast<float>(mean + sigma * n[i]);
    }
    return out;
}

} // namespace diffgepci
